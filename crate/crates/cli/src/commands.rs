//! Subcommand implementations: thin orchestration over the core crate.

use std::fs;
use std::path::{Path, PathBuf};

use lprs_core::codec::{self, CodecError};
use lprs_core::config::SamplerKind;
use lprs_core::harness::synth::synth_scan;
use lprs_core::harness::{self, AblationArm, TraceRow, TrainError};
use lprs_core::io;
use lprs_core::optim::ParamStore;
use lprs_core::quality::{self, MetricReport};
use lprs_core::rangegrid::Point;

use crate::config_file::ConfigFile;
use crate::CliError;

pub struct Overrides {
    pub seed: Option<u64>,
    pub sampler: Option<String>,
    pub expansion: Option<String>,
    pub patch_size: Option<String>,
    pub lambda: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ConfigFile) -> Result<(), CliError> {
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(sampler) = &self.sampler {
            if SamplerKind::parse(sampler).is_none() {
                return Err(CliError::Config(format!(
                    "--sampler must be learnable, mean, or random (got '{}')",
                    sampler
                )));
            }
            cfg.train.sampler = sampler.clone();
        }
        if let Some(expansion) = &self.expansion {
            cfg.train.expansion_enabled = match expansion.as_str() {
                "on" => true,
                "off" => false,
                other => {
                    return Err(CliError::Config(format!(
                        "--expansion must be on or off (got '{}')",
                        other
                    )))
                }
            };
        }
        if let Some(spec) = &self.patch_size {
            let (rows, cols) = parse_patch_size(spec)?;
            cfg.patch.rows = rows;
            cfg.patch.cols = cols;
        }
        if let Some(lambda) = self.lambda {
            if lambda < 0.0 {
                return Err(CliError::Config("--lambda must be nonnegative".into()));
            }
            cfg.train.lambda = lambda;
        }
        cfg.validate()
    }
}

pub fn parse_patch_size(spec: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = spec.split(['x', 'X']).collect();
    if parts.len() == 2 {
        if let (Ok(r), Ok(c)) = (parts[0].parse(), parts[1].parse()) {
            if r > 0 && c > 0 {
                return Ok((r, c));
            }
        }
    }
    Err(CliError::Config(format!(
        "--patch-size expects ROWSxCOLS, e.g. 4x8 (got '{}')",
        spec
    )))
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<ConfigFile, CliError> {
    let mut cfg = ConfigFile::load(path)?;
    overrides.apply(&mut cfg)?;
    log::info!("resolved configuration:\n{}", cfg.to_toml());
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<ParamStore, CliError> {
    ParamStore::load(path).map_err(CliError::from)
}

/// Config/checkpoint consistency: the checkpoint must have been produced for
/// the same channel count and patch size.
fn validate_checkpoint(cfg: &ConfigFile, store: &ParamStore) -> Result<(), CliError> {
    for name in ["enc.mlp2.l1.b", "dec.slot_embed", "dec.up1.l1.b"] {
        if !store.contains(name) {
            return Err(CliError::ModelMismatch(format!(
                "checkpoint lacks parameter '{}'",
                name
            )));
        }
    }
    let channels = store.get("enc.mlp2.l1.b").len();
    if channels != cfg.model.channels {
        return Err(CliError::ModelMismatch(format!(
            "config has {} feature channels, checkpoint was trained with {}",
            cfg.model.channels, channels
        )));
    }
    let slots = store.get("dec.slot_embed").shape()[0];
    if slots != cfg.patch.rows * cfg.patch.cols {
        return Err(CliError::ModelMismatch(format!(
            "config patch {}x{} ({} slots) does not match checkpoint ({} slots)",
            cfg.patch.rows,
            cfg.patch.cols,
            cfg.patch.rows * cfg.patch.cols,
            slots
        )));
    }
    Ok(())
}

fn generate_scans(cfg: &ConfigFile, count: usize, seed_offset: u64) -> Vec<Vec<Point>> {
    (0..count)
        .map(|i| synth_scan(&cfg.scene_spec(i + seed_offset as usize)))
        .collect()
}

fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<(), CliError> {
    let rows: Vec<String> = trace.iter().map(|r| r.csv_row()).collect();
    io::write_csv(path, TraceRow::csv_header(), &rows).map_err(CliError::from)
}

pub fn cmd_train(
    config: &Path,
    output: &Path,
    trace_path: Option<&Path>,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let cfg = load_config(config, overrides)?;
    let train_cfg = cfg.train_config();
    let scans = generate_scans(&cfg, cfg.scene.scans, 0);
    let patches = harness::scans_to_patches(&scans, &train_cfg.codec, train_cfg.seed);
    log::info!(
        "training on {} patches from {} synthetic scans",
        patches.len(),
        scans.len()
    );
    let result = harness::train(&train_cfg, &patches)?;
    result.store.save(output)?;
    let trace_file = trace_path
        .map(PathBuf::from)
        .unwrap_or_else(|| output.with_extension("loss.csv"));
    write_trace(&trace_file, &result.trace)?;
    fs::write(output.with_extension("config.toml"), cfg.to_toml())
        .map_err(|e| CliError::Io(format!("cannot write resolved config: {}", e)))?;
    let last = result.trace.last().expect("nonempty trace");
    println!(
        "trained {} steps: D={:.6e} R={:.2}bits L={:.6e} checkpoint={} trace={}",
        result.trace.len(),
        last.distortion,
        last.rate_bits,
        last.total,
        output.display(),
        trace_file.display()
    );
    Ok(())
}

pub fn cmd_compress(
    config: &Path,
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let cfg = load_config(config, overrides)?;
    let store = load_checkpoint(checkpoint)?;
    validate_checkpoint(&cfg, &store)?;
    let points = io::read_kitti_bin(input)?;
    let out = codec::compress(
        &points,
        &store,
        &cfg.codec_config(),
        cfg.sampler(),
        cfg.train.seed,
    )?;
    fs::write(output, &out.bytes)
        .map_err(|e| CliError::Io(format!("cannot write {}: {}", output.display(), e)))?;
    let bpp = quality::bpp(out.stats.total_bits, points.len())
        .map_err(|e| CliError::Format(e.to_string()))?;
    println!(
        "bpp={:.4} bytes={} bits={} points={} gridded={} patches={} estimated_bits={:.1}",
        bpp,
        out.bytes.len(),
        out.stats.total_bits,
        points.len(),
        out.stats.gridded_points,
        out.stats.occupied_patches,
        out.stats.estimated_bits
    );
    Ok(())
}

pub fn cmd_decompress(input: &Path, checkpoint: &Path, output: &Path) -> Result<(), CliError> {
    let store = load_checkpoint(checkpoint)?;
    let bytes = fs::read(input)
        .map_err(|e| CliError::Io(format!("cannot read {}: {}", input.display(), e)))?;
    let out = codec::decompress(&bytes, &store)?;
    io::write_ply(output, &out.points)?;
    println!(
        "decoded {} points from {} patches into {}",
        out.points.len(),
        out.latents.len(),
        output.display()
    );
    Ok(())
}

pub fn cmd_evaluate(
    original: &Path,
    reconstructed: &Path,
    bitstream: &Path,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let orig = io::read_kitti_bin(original)?;
    let recon = io::read_ply(reconstructed)?;
    let bytes = fs::read(bitstream)
        .map_err(|e| CliError::Io(format!("cannot read {}: {}", bitstream.display(), e)))?;
    // Parse to validate integrity; bits counted from the actual file size.
    let parsed = lprs_core::bottleneck::bitstream::parse_bitstream(&bytes)?;
    let report = MetricReport {
        bpp: quality::bpp(parsed.total_bits, orig.len())
            .map_err(|e| CliError::Format(e.to_string()))?,
        chamfer: quality::chamfer(&orig, &recon).map_err(|e| CliError::Format(e.to_string()))?,
        p2plane_psnr_db: quality::p2plane_psnr(&orig, &recon, quality::default_peak(&orig), 12)
            .map_err(|e| CliError::Format(e.to_string()))?,
        original_points: orig.len(),
        reconstructed_points: recon.len(),
    };
    if let Some(path) = output {
        io::write_csv(path, MetricReport::csv_header(), &[report.csv_row()])?;
    }
    println!("{}", MetricReport::csv_header());
    println!("{}", report.csv_row());
    Ok(())
}

pub fn cmd_ablate(
    config: &Path,
    output_dir: &Path,
    samplers: &str,
    expansions: &str,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let cfg = load_config(config, overrides)?;
    let base = cfg.train_config();

    let mut arms = Vec::new();
    for name in samplers.split(',').filter(|s| !s.is_empty()) {
        let sampler = SamplerKind::parse(name).ok_or_else(|| {
            CliError::Config(format!("unknown sampler '{}' in --samplers", name))
        })?;
        arms.push(AblationArm {
            name: name.to_string(),
            sampler,
            expansion_enabled: true,
        });
    }
    for mode in expansions.split(',').filter(|s| !s.is_empty()) {
        match mode {
            "on" => {} // covered by the sampler sweep
            "off" => arms.push(AblationArm {
                name: "learnable-nc1".into(),
                sampler: SamplerKind::Learnable,
                expansion_enabled: false,
            }),
            other => {
                return Err(CliError::Config(format!(
                    "--expansions entries must be on or off (got '{}')",
                    other
                )))
            }
        }
    }
    if arms.is_empty() {
        return Err(CliError::Config("no ablation arms selected".into()));
    }

    fs::create_dir_all(output_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {}", output_dir.display(), e)))?;
    fs::write(output_dir.join("config.toml"), cfg.to_toml())
        .map_err(|e| CliError::Io(format!("cannot write resolved config: {}", e)))?;

    let train_scans = generate_scans(&cfg, cfg.scene.scans, 0);
    let eval_scans = generate_scans(&cfg, 4.min(cfg.scene.scans.max(1)), 10_000);
    let patches = harness::scans_to_patches(&train_scans, &base.codec, base.seed);

    let rows = harness::ablate(&base, &arms, &patches, &eval_scans)?;
    let csv_rows: Vec<String> = rows.iter().map(|r| r.csv_row()).collect();
    let table = output_dir.join("ablation.csv");
    io::write_csv(&table, lprs_core::harness::AblationRow::csv_header(), &csv_rows)?;
    println!("{}", lprs_core::harness::AblationRow::csv_header());
    for row in &csv_rows {
        println!("{}", row);
    }
    println!("table written to {}", table.display());
    Ok(())
}

pub fn cmd_synth(
    config: &Path,
    output_dir: &Path,
    count: Option<usize>,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let mut cfg = ConfigFile::load(config)?;
    overrides.apply(&mut cfg)?;
    if let Some(seed) = overrides.seed {
        cfg.scene.seed = seed;
    }
    let n = count.unwrap_or(cfg.scene.scans);
    fs::create_dir_all(output_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {}", output_dir.display(), e)))?;
    fs::write(output_dir.join("config.toml"), cfg.to_toml())
        .map_err(|e| CliError::Io(format!("cannot write resolved config: {}", e)))?;
    let mut total = 0usize;
    for i in 0..n {
        let scan = synth_scan(&cfg.scene_spec(i));
        let path = output_dir.join(format!("{:06}.bin", i));
        io::write_kitti_bin(&path, &scan)?;
        total += scan.len();
    }
    println!(
        "wrote {} scans ({} points) to {}",
        n,
        total,
        output_dir.display()
    );
    Ok(())
}

impl From<io::IoError> for CliError {
    fn from(e: io::IoError) -> Self {
        match e {
            io::IoError::Io { .. } => CliError::Io(e.to_string()),
            io::IoError::Format { .. } => CliError::Format(e.to_string()),
        }
    }
}

impl From<lprs_core::optim::CheckpointError> for CliError {
    fn from(e: lprs_core::optim::CheckpointError) -> Self {
        match e {
            lprs_core::optim::CheckpointError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        use lprs_core::bottleneck::bitstream::StreamError;
        match &e {
            CodecError::Stream(StreamError::ModelHashMismatch { .. }) => {
                CliError::ModelMismatch(e.to_string())
            }
            CodecError::ModelMismatch(_) => CliError::ModelMismatch(e.to_string()),
            CodecError::EmptyScan => CliError::Format(e.to_string()),
            CodecError::Stream(_) | CodecError::Assemble(_) => CliError::Format(e.to_string()),
            CodecError::Quantize(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<lprs_core::bottleneck::bitstream::StreamError> for CliError {
    fn from(e: lprs_core::bottleneck::bitstream::StreamError) -> Self {
        use lprs_core::bottleneck::bitstream::StreamError;
        match &e {
            StreamError::ModelHashMismatch { .. } => CliError::ModelMismatch(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NoPatches => CliError::Config(e.to_string()),
            TrainError::Codec(inner) => CliError::from(inner),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
