//! Byte-oriented range coder with carry propagation into the output buffer.
//!
//! 32-bit range, renormalized at 2^24 one byte at a time; the encoder owns
//! its buffer, so carries are resolved by incrementing already-emitted bytes
//! instead of bit-stuffing. The remainder of `range / total` is absorbed by
//! the last symbol of the table, which keeps the coder within a fraction of
//! a bit of the table entropy. Flush cost is exactly 4 bytes.
//!
//! Frequencies are 16-bit: `total <= 65536`, every symbol frequency >= 1.

use thiserror::Error;

const TOP: u32 = 1 << 24;
const MASK: u64 = 0xFFFF_FFFF;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoderError {
    #[error("entropy payload truncated")]
    Truncated,
    #[error("entropy payload corrupt")]
    Corrupt,
}

/// Cumulative frequency table. `cum` has one entry per symbol plus a final
/// sentinel equal to the total; every frequency is at least 1.
#[derive(Clone, Debug, PartialEq)]
pub struct CdfTable {
    cum: Vec<u32>,
}

impl CdfTable {
    pub fn from_counts(counts: &[u32]) -> Self {
        assert!(!counts.is_empty(), "empty frequency table");
        let mut cum = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for &c in counts {
            assert!(c >= 1, "zero-frequency symbol");
            acc = acc.checked_add(c).expect("frequency overflow");
            cum.push(acc);
        }
        assert!(acc <= 1 << 16, "total frequency {} exceeds 16 bits", acc);
        CdfTable { cum }
    }

    /// 256-symbol uniform table (exact powers of two, zero coding loss).
    pub fn raw_byte() -> Self {
        CdfTable::from_counts(&[1u32; 256])
    }

    pub fn symbols(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn total(&self) -> u32 {
        *self.cum.last().unwrap()
    }

    pub fn freq(&self, sym: usize) -> u32 {
        self.cum[sym + 1] - self.cum[sym]
    }

    pub fn cum(&self, sym: usize) -> u32 {
        self.cum[sym]
    }

    /// Largest symbol whose cumulative start is <= v.
    fn find(&self, v: u32) -> usize {
        // partition_point returns the first index with cum > v; symbols are
        // offset by the leading 0 entry.
        self.cum.partition_point(|&c| c <= v) - 1
    }

    /// Information content of `sym` under this table, in bits.
    pub fn bits(&self, sym: usize) -> f64 {
        -((self.freq(sym) as f64 / self.total() as f64).log2())
    }
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    pub fn encode(&mut self, table: &CdfTable, sym: usize) {
        let total = table.total();
        let r = self.range / total;
        let lo = r * table.cum(sym);
        // The last symbol absorbs the division remainder.
        let hi = if table.cum(sym) + table.freq(sym) == total {
            self.range
        } else {
            r * (table.cum(sym) + table.freq(sym))
        };
        self.low += lo as u64;
        if self.low > MASK {
            self.propagate_carry();
            self.low &= MASK;
        }
        self.range = hi - lo;
        while self.range < TOP {
            self.out.push((self.low >> 24) as u8);
            self.low = (self.low << 8) & MASK;
            self.range <<= 8;
        }
    }

    fn propagate_carry(&mut self) {
        for b in self.out.iter_mut().rev() {
            if *b == 0xFF {
                *b = 0;
            } else {
                *b += 1;
                return;
            }
        }
        // The coded value never exceeds the initial interval, so a carry
        // always finds a non-0xFF byte.
        unreachable!("range coder carry out of buffer");
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..4 {
            self.out.push((self.low >> 24) as u8);
            self.low = (self.low << 8) & MASK;
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    input: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self, CoderError> {
        if input.len() < 4 {
            return Err(CoderError::Truncated);
        }
        let code = u32::from_be_bytes(input[..4].try_into().unwrap());
        Ok(RangeDecoder {
            input,
            pos: 4,
            code,
            range: u32::MAX,
        })
    }

    pub fn decode(&mut self, table: &CdfTable) -> Result<usize, CoderError> {
        let total = table.total();
        let r = self.range / total;
        let v = (self.code / r).min(total - 1);
        let sym = table.find(v);
        let lo = r * table.cum(sym);
        let hi = if table.cum(sym) + table.freq(sym) == total {
            self.range
        } else {
            r * (table.cum(sym) + table.freq(sym))
        };
        self.code = self.code.checked_sub(lo).ok_or(CoderError::Corrupt)?;
        self.range = hi - lo;
        while self.range < TOP {
            if self.pos >= self.input.len() {
                return Err(CoderError::Truncated);
            }
            self.code = (self.code << 8) | self.input[self.pos] as u32;
            self.pos += 1;
            self.range <<= 8;
        }
        Ok(sym)
    }

    /// Bytes consumed so far, including the 4-byte priming read.
    pub fn consumed(&self) -> usize {
        self.pos
    }
}

/// Adaptive order-0 byte model: frequencies start uniform and are bumped on
/// every coded byte, halving (floor 1) when the total approaches the 16-bit
/// cap. Encoder and decoder update in lockstep.
pub struct AdaptiveByteModel {
    freq: Vec<u32>,
    total: u32,
}

const ADAPT_INCREMENT: u32 = 32;
const ADAPT_LIMIT: u32 = (1 << 16) - ADAPT_INCREMENT;

impl Default for AdaptiveByteModel {
    fn default() -> Self {
        Self::new()
    }
}

impl AdaptiveByteModel {
    pub fn new() -> Self {
        AdaptiveByteModel {
            freq: vec![1; 256],
            total: 256,
        }
    }

    fn table(&self) -> CdfTable {
        CdfTable::from_counts(&self.freq)
    }

    fn bump(&mut self, byte: u8) {
        self.freq[byte as usize] += ADAPT_INCREMENT;
        self.total += ADAPT_INCREMENT;
        if self.total > ADAPT_LIMIT {
            self.total = 0;
            for f in self.freq.iter_mut() {
                *f = (*f / 2).max(1);
                self.total += *f;
            }
        }
    }

    pub fn encode(&mut self, enc: &mut RangeEncoder, byte: u8) {
        let table = self.table();
        enc.encode(&table, byte as usize);
        self.bump(byte);
    }

    pub fn decode(&mut self, dec: &mut RangeDecoder) -> Result<u8, CoderError> {
        let table = self.table();
        let sym = dec.decode(&table)? as u8;
        self.bump(sym);
        Ok(sym)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn round_trip(counts: &[u32], syms: &[usize]) -> Vec<u8> {
        let table = CdfTable::from_counts(counts);
        let mut enc = RangeEncoder::new();
        for &s in syms {
            enc.encode(&table, s);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for (i, &s) in syms.iter().enumerate() {
            assert_eq!(dec.decode(&table).unwrap(), s, "symbol {} differs", i);
        }
        bytes
    }

    #[test]
    fn empty_sequence_round_trips() {
        let bytes = round_trip(&[1, 1], &[]);
        assert_eq!(bytes.len(), 4);
    }

    #[test]
    fn skewed_sequence_is_tiny() {
        // One symbol carries almost all the mass: near-zero entropy.
        let mut counts = vec![1u32; 16];
        counts[7] = 65536 - 15;
        let syms = vec![7usize; 1000];
        let bytes = round_trip(&counts, &syms);
        assert!(bytes.len() <= 8, "payload {} bytes", bytes.len());
    }

    #[test]
    fn alternating_equiprobable_symbols_cost_one_bit_each() {
        // Entropy lower bound: L bits; coder overhead is the 4-byte flush.
        let len = 4096;
        let syms: Vec<usize> = (0..len).map(|i| i % 2).collect();
        let bytes = round_trip(&[1, 1], &syms);
        assert!(
            bytes.len() * 8 <= len + 32,
            "{} bits for {} symbols",
            bytes.len() * 8,
            len
        );
    }

    #[test]
    fn random_sequences_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..200 {
            let n_sym = rng.gen_range(2..64);
            let counts: Vec<u32> = (0..n_sym).map(|_| rng.gen_range(1..512)).collect();
            let len = rng.gen_range(0..400);
            let syms: Vec<usize> = (0..len).map(|_| rng.gen_range(0..n_sym)).collect();
            let bytes = round_trip(&counts, &syms);
            // Coded size stays within the information content + flush slack.
            let table = CdfTable::from_counts(&counts);
            let nll: f64 = syms.iter().map(|&s| table.bits(s)).sum();
            assert!(
                (bytes.len() * 8) as f64 <= nll + 64.0,
                "case {}: {} bits vs nll {}",
                case,
                bytes.len() * 8,
                nll
            );
        }
    }

    #[test]
    fn carry_chains_are_resolved() {
        // A low-probability symbol surrounded by max-cumulative ones forces
        // long runs of 0xFF bytes and eventually a carry.
        let counts = vec![1u32, 65534, 1];
        let mut syms = vec![1usize; 2000];
        for i in (0..2000).step_by(97) {
            syms[i] = 2;
        }
        round_trip(&counts, &syms);
    }

    #[test]
    fn truncated_payload_is_an_error_not_a_panic() {
        let table = CdfTable::from_counts(&[3, 5, 9]);
        let mut enc = RangeEncoder::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let syms: Vec<usize> = (0..300).map(|_| rng.gen_range(0..3)).collect();
        for &s in &syms {
            enc.encode(&table, s);
        }
        let bytes = enc.finish();
        let cut = &bytes[..bytes.len() / 2];
        let mut dec = RangeDecoder::new(cut).unwrap();
        let mut result = Ok(0usize);
        for _ in 0..syms.len() {
            result = dec.decode(&table);
            if result.is_err() {
                break;
            }
        }
        assert_eq!(result, Err(CoderError::Truncated));
    }

    #[test]
    fn adaptive_byte_model_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut data: Vec<u8> = (0..5000).map(|_| rng.gen_range(0..8) * 31).collect();
        data.extend(std::iter::repeat(42u8).take(5000));
        let mut enc = RangeEncoder::new();
        let mut model = AdaptiveByteModel::new();
        for &b in &data {
            model.encode(&mut enc, b);
        }
        let bytes = enc.finish();
        // The skew should compress well below raw size.
        assert!(bytes.len() < data.len() / 2);
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        let mut model = AdaptiveByteModel::new();
        for (i, &b) in data.iter().enumerate() {
            assert_eq!(model.decode(&mut dec).unwrap(), b, "byte {}", i);
        }
    }
}
