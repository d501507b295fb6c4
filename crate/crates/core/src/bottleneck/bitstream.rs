//! Versioned binary container for one compressed scan.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "LPCB" | version u16 | grid rows u16 | grid cols u16
//! patch rows u16 | patch cols u16 | q_step_p f32 | channels u16
//! model hash u64
//! occupancy bitmap: ceil(P/8) bytes, LSB-first, patches row-major
//! valid-slot section: u32 byte length, then run-length + adaptively
//!     range-coded slot masks of the occupied patches
//! 3 + C symbol streams, each: u32 byte length + range-coded payload,
//!     in order p-x, p-y, p-z, f-0 .. f-{C-1}
//! trailer: fov_up f32 | fov_down f32 | azimuth_origin f32 | q_step_f f32
//!     | symbol_min i32 | symbol_max i32 | tail_mass f32
//! checksum u64: FNV-1a over every preceding byte
//! ```
//!
//! Symbols outside [symbol_min, symbol_max] are escape-coded: the table's
//! trailing escape index followed by the raw i32, four uniform bytes.
//! The checksum makes corruption detection unconditional: any flipped or
//! missing byte surfaces as an error, never as a silently wrong cloud.

use thiserror::Error;

use crate::config::{BottleneckConfig, PatchDims};
use crate::rangegrid::GridSpec;
use crate::util::fnv1a64;

use super::rangecoder::{AdaptiveByteModel, CdfTable, CoderError, RangeDecoder, RangeEncoder};

pub const STREAM_MAGIC: &[u8; 4] = b"LPCB";
pub const STREAM_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("not a compressed scan (bad magic)")]
    BadMagic,
    #[error("unsupported bitstream version {0}")]
    UnsupportedVersion(u16),
    #[error("bitstream truncated")]
    Truncated,
    #[error("bitstream checksum mismatch (corrupt or damaged file)")]
    ChecksumMismatch,
    #[error("bitstream is inconsistent: {0}")]
    Corrupt(String),
    #[error("entropy model mismatch: stream was coded with model {stream:#018x}, checkpoint has {checkpoint:#018x}")]
    ModelHashMismatch { stream: u64, checkpoint: u64 },
    #[error("entropy payload error: {0}")]
    Coder(#[from] CoderError),
}

/// Everything the header (plus trailer) carries.
#[derive(Clone, Copy, Debug)]
pub struct BitstreamInfo {
    pub grid: GridSpec,
    pub patch: PatchDims,
    pub channels: usize,
    pub model_hash: u64,
    pub bottleneck: BottleneckConfig,
}

/// Parsed container: header fields plus still-coded payload sections.
pub struct ParsedBitstream {
    pub info: BitstreamInfo,
    /// Row-major over the padded patch grid.
    pub occupancy: Vec<bool>,
    valid_slot_payload: Vec<u8>,
    stream_payloads: Vec<Vec<u8>>,
    /// Total size in bits (8 x byte length).
    pub total_bits: usize,
}

impl ParsedBitstream {
    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&b| b).count()
    }

    /// Bits of the symbol stream payloads alone.
    pub fn symbol_payload_bits(&self) -> usize {
        self.stream_payloads.iter().map(|p| p.len() * 8).sum()
    }

    /// Decodes the per-patch valid-slot masks.
    pub fn decode_masks(&self) -> Result<Vec<Vec<bool>>, StreamError> {
        decode_masks(
            &self.valid_slot_payload,
            self.occupied_count(),
            self.info.patch.slots(),
        )
    }

    /// Decodes all symbol streams with the given frozen tables.
    pub fn decode_symbols(&self, tables: &[CdfTable]) -> Result<Vec<Vec<i32>>, StreamError> {
        let count = self.occupied_count();
        if tables.len() != self.stream_payloads.len() {
            return Err(StreamError::Corrupt(format!(
                "expected {} channel tables, got {}",
                self.stream_payloads.len(),
                tables.len()
            )));
        }
        self.stream_payloads
            .iter()
            .zip(tables)
            .map(|(payload, table)| {
                decode_symbol_stream(
                    payload,
                    count,
                    table,
                    self.info.bottleneck.symbol_min,
                    self.info.bottleneck.symbol_max,
                )
            })
            .collect()
    }
}

fn padded_patch_count(grid: &GridSpec, patch: &PatchDims) -> usize {
    let rows = grid.rows.div_ceil(patch.rows);
    let cols = grid.cols.div_ceil(patch.cols);
    rows * cols
}

/// Serializes one compressed scan. `masks` and each `symbols[ch]` are in
/// occupied-patch order; `symbols` is indexed by channel (3 + C entries).
pub fn write_bitstream(
    info: &BitstreamInfo,
    occupancy: &[bool],
    masks: &[Vec<bool>],
    symbols: &[Vec<i32>],
    tables: &[CdfTable],
) -> Vec<u8> {
    write_bitstream_with_payload(info, occupancy, masks, symbols, tables).0
}

/// `write_bitstream` plus the size in bits of the symbol stream payloads
/// alone, the part the rate model predicts.
pub fn write_bitstream_with_payload(
    info: &BitstreamInfo,
    occupancy: &[bool],
    masks: &[Vec<bool>],
    symbols: &[Vec<i32>],
    tables: &[CdfTable],
) -> (Vec<u8>, usize) {
    let patch_count = padded_patch_count(&info.grid, &info.patch);
    assert_eq!(occupancy.len(), patch_count, "occupancy size mismatch");
    let occupied = occupancy.iter().filter(|&&b| b).count();
    assert_eq!(masks.len(), occupied, "one mask per occupied patch");
    assert_eq!(symbols.len(), 3 + info.channels, "3 + C symbol streams");
    assert_eq!(tables.len(), 3 + info.channels);
    for m in masks {
        assert_eq!(m.len(), info.patch.slots());
        assert!(m.iter().any(|&b| b), "occupied patch with no valid slots");
    }
    for s in symbols {
        assert_eq!(s.len(), occupied, "one symbol per occupied patch");
    }

    let mut out = Vec::new();
    out.extend_from_slice(STREAM_MAGIC);
    out.extend_from_slice(&STREAM_VERSION.to_le_bytes());
    out.extend_from_slice(&(info.grid.rows as u16).to_le_bytes());
    out.extend_from_slice(&(info.grid.cols as u16).to_le_bytes());
    out.extend_from_slice(&(info.patch.rows as u16).to_le_bytes());
    out.extend_from_slice(&(info.patch.cols as u16).to_le_bytes());
    out.extend_from_slice(&(info.bottleneck.q_step_p as f32).to_le_bytes());
    out.extend_from_slice(&(info.channels as u16).to_le_bytes());
    out.extend_from_slice(&info.model_hash.to_le_bytes());

    let mut bitmap = vec![0u8; patch_count.div_ceil(8)];
    for (i, &occ) in occupancy.iter().enumerate() {
        if occ {
            bitmap[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bitmap);

    let mask_payload = encode_masks(masks);
    out.extend_from_slice(&(mask_payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&mask_payload);

    let mut symbol_payload_bits = 0usize;
    for (syms, table) in symbols.iter().zip(tables) {
        let payload = encode_symbol_stream(
            syms,
            table,
            info.bottleneck.symbol_min,
            info.bottleneck.symbol_max,
        );
        symbol_payload_bits += payload.len() * 8;
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
    }

    out.extend_from_slice(&(info.grid.fov_up as f32).to_le_bytes());
    out.extend_from_slice(&(info.grid.fov_down as f32).to_le_bytes());
    out.extend_from_slice(&(info.grid.azimuth_origin as f32).to_le_bytes());
    out.extend_from_slice(&(info.bottleneck.q_step_f as f32).to_le_bytes());
    out.extend_from_slice(&info.bottleneck.symbol_min.to_le_bytes());
    out.extend_from_slice(&info.bottleneck.symbol_max.to_le_bytes());
    out.extend_from_slice(&(info.bottleneck.tail_mass as f32).to_le_bytes());

    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    (out, symbol_payload_bits)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StreamError> {
        if self.pos + n > self.bytes.len() {
            return Err(StreamError::Truncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, StreamError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, StreamError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StreamError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f64, StreamError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }

    fn i32(&mut self) -> Result<i32, StreamError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses and validates a container. The checksum is verified before any
/// field is trusted, so corruption is detected unconditionally.
pub fn parse_bitstream(bytes: &[u8]) -> Result<ParsedBitstream, StreamError> {
    if bytes.len() < 4 {
        return Err(StreamError::Truncated);
    }
    if &bytes[..4] != STREAM_MAGIC {
        return Err(StreamError::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(StreamError::Truncated);
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    if fnv1a64(body) != stored {
        return Err(StreamError::ChecksumMismatch);
    }

    let mut cur = Cursor { bytes: body, pos: 4 };
    let version = cur.u16()?;
    if version != STREAM_VERSION {
        return Err(StreamError::UnsupportedVersion(version));
    }
    let grid_rows = cur.u16()? as usize;
    let grid_cols = cur.u16()? as usize;
    let patch_rows = cur.u16()? as usize;
    let patch_cols = cur.u16()? as usize;
    let q_step_p = cur.f32()?;
    let channels = cur.u16()? as usize;
    let model_hash = cur.u64()?;

    if grid_rows == 0 || grid_cols == 0 || patch_rows == 0 || patch_cols == 0 {
        return Err(StreamError::Corrupt("zero grid or patch dimension".into()));
    }
    if !(q_step_p.is_finite() && q_step_p > 0.0) {
        return Err(StreamError::Corrupt("invalid position step".into()));
    }

    let patch = PatchDims::new(patch_rows, patch_cols);
    let patch_count = {
        let rows = grid_rows.div_ceil(patch_rows);
        let cols = grid_cols.div_ceil(patch_cols);
        rows * cols
    };
    let bitmap = cur.take(patch_count.div_ceil(8))?;
    let occupancy: Vec<bool> = (0..patch_count)
        .map(|i| bitmap[i / 8] & (1 << (i % 8)) != 0)
        .collect();

    let mask_len = cur.u32()? as usize;
    let valid_slot_payload = cur.take(mask_len)?.to_vec();

    let mut stream_payloads = Vec::with_capacity(3 + channels);
    for _ in 0..3 + channels {
        let len = cur.u32()? as usize;
        stream_payloads.push(cur.take(len)?.to_vec());
    }

    let fov_up = cur.f32()?;
    let fov_down = cur.f32()?;
    let azimuth_origin = cur.f32()?;
    let q_step_f = cur.f32()?;
    let symbol_min = cur.i32()?;
    let symbol_max = cur.i32()?;
    let tail_mass = cur.f32()?;

    if cur.pos != body.len() {
        return Err(StreamError::Corrupt("trailing bytes after trailer".into()));
    }
    if !(fov_up > fov_down) {
        return Err(StreamError::Corrupt("invalid field of view".into()));
    }
    if symbol_min >= symbol_max {
        return Err(StreamError::Corrupt("invalid symbol range".into()));
    }
    if !(q_step_f.is_finite() && q_step_f > 0.0) {
        return Err(StreamError::Corrupt("invalid feature step".into()));
    }

    let info = BitstreamInfo {
        grid: GridSpec {
            rows: grid_rows,
            cols: grid_cols,
            fov_up,
            fov_down,
            azimuth_origin,
        },
        patch,
        channels,
        model_hash,
        bottleneck: BottleneckConfig {
            q_step_p,
            q_step_f,
            symbol_min,
            symbol_max,
            tail_mass,
            // Initialization scales are a training concern; they do not
            // affect decoding and are not transmitted.
            ..BottleneckConfig::default()
        },
    };
    Ok(ParsedBitstream {
        info,
        occupancy,
        valid_slot_payload,
        stream_payloads,
        total_bits: bytes.len() * 8,
    })
}

/// Run-length encodes the concatenated slot masks, then codes the run bytes
/// with an adaptive order-0 model. Runs longer than 254 continue with a 255
/// token; a zero token terminates a run that ended exactly on a 255.
fn encode_masks(masks: &[Vec<bool>]) -> Vec<u8> {
    let bits: Vec<bool> = masks.iter().flatten().copied().collect();
    if bits.is_empty() {
        return Vec::new();
    }
    let mut tokens: Vec<u8> = vec![bits[0] as u8];
    let mut run = 1usize;
    let emit_run = |tokens: &mut Vec<u8>, mut run: usize| {
        loop {
            let b = run.min(255);
            tokens.push(b as u8);
            run -= b;
            if b < 255 {
                break;
            }
            if run == 0 {
                tokens.push(0);
                break;
            }
        }
    };
    for w in bits.windows(2) {
        if w[1] == w[0] {
            run += 1;
        } else {
            emit_run(&mut tokens, run);
            run = 1;
        }
    }
    emit_run(&mut tokens, run);

    let mut enc = RangeEncoder::new();
    let mut model = AdaptiveByteModel::new();
    for &t in &tokens {
        model.encode(&mut enc, t);
    }
    enc.finish()
}

fn decode_masks(
    payload: &[u8],
    occupied: usize,
    slots: usize,
) -> Result<Vec<Vec<bool>>, StreamError> {
    let total_bits = occupied * slots;
    if total_bits == 0 {
        if !payload.is_empty() {
            return Err(StreamError::Corrupt("unexpected mask payload".into()));
        }
        return Ok(Vec::new());
    }
    let mut dec = RangeDecoder::new(payload)?;
    let mut model = AdaptiveByteModel::new();
    let first = model.decode(&mut dec)?;
    if first > 1 {
        return Err(StreamError::Corrupt("mask stream must start with a bit".into()));
    }
    let mut bit = first == 1;
    let mut bits = Vec::with_capacity(total_bits);
    while bits.len() < total_bits {
        let mut run = 0usize;
        loop {
            let b = model.decode(&mut dec)?;
            run += b as usize;
            if b < 255 {
                break;
            }
        }
        if run == 0 || bits.len() + run > total_bits {
            return Err(StreamError::Corrupt("invalid mask run length".into()));
        }
        bits.extend(std::iter::repeat(bit).take(run));
        bit = !bit;
    }
    let masks: Vec<Vec<bool>> = bits.chunks(slots).map(|c| c.to_vec()).collect();
    for m in &masks {
        if !m.iter().any(|&b| b) {
            return Err(StreamError::Corrupt("occupied patch with empty mask".into()));
        }
    }
    Ok(masks)
}

fn encode_symbol_stream(symbols: &[i32], table: &CdfTable, s_min: i32, s_max: i32) -> Vec<u8> {
    if symbols.is_empty() {
        return Vec::new();
    }
    let escape = table.symbols() - 1;
    let raw = CdfTable::raw_byte();
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        if s >= s_min && s <= s_max {
            enc.encode(table, (s - s_min) as usize);
        } else {
            enc.encode(table, escape);
            for b in s.to_le_bytes() {
                enc.encode(&raw, b as usize);
            }
        }
    }
    enc.finish()
}

fn decode_symbol_stream(
    payload: &[u8],
    count: usize,
    table: &CdfTable,
    s_min: i32,
    s_max: i32,
) -> Result<Vec<i32>, StreamError> {
    if count == 0 {
        if !payload.is_empty() {
            return Err(StreamError::Corrupt("unexpected symbol payload".into()));
        }
        return Ok(Vec::new());
    }
    let expected_symbols = (s_max - s_min + 1) as usize + 1;
    if table.symbols() != expected_symbols {
        return Err(StreamError::Corrupt(format!(
            "table has {} entries, symbol range needs {}",
            table.symbols(),
            expected_symbols
        )));
    }
    let escape = table.symbols() - 1;
    let raw = CdfTable::raw_byte();
    let mut dec = RangeDecoder::new(payload)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let idx = dec.decode(table)?;
        if idx == escape {
            let mut bytes = [0u8; 4];
            for b in bytes.iter_mut() {
                *b = dec.decode(&raw)? as u8;
            }
            out.push(i32::from_le_bytes(bytes));
        } else {
            out.push(s_min + idx as i32);
        }
    }
    Ok(out)
}
