//! Scratch harness for tuning the ablation experiment settings.
//! Run with: cargo run --release -p lprs-core --example calibrate

use lprs_core::config::{CodecConfig, ModelConfig, PatchDims, SamplerKind};
use lprs_core::harness::synth::{corner_scene, synth_scan, wedge_scene, zigzag_scene};
use lprs_core::harness::{ablate, converged_loss, scans_to_patches, train, AblationArm, TrainConfig};
use lprs_core::rangegrid::GridSpec;
use std::time::Instant;

fn ablation_codec() -> CodecConfig {
    let mut cfg = CodecConfig::desk_default();
    cfg.grid = GridSpec {
        rows: 32,
        cols: 256,
        fov_up: 4.0_f64.to_radians(),
        fov_down: (-20.0_f64).to_radians(),
        azimuth_origin: -std::f64::consts::PI,
    };
    let pr = std::env::var("PR").map(|s| s.parse().unwrap()).unwrap_or(4);
    let pc = std::env::var("PC").map(|s| s.parse().unwrap()).unwrap_or(8);
    cfg.patch = PatchDims::new(pr, pc);
    cfg.model = ModelConfig {
        channels: std::env::var("C").map(|s| s.parse().unwrap()).unwrap_or(8),
        expansion: 4,
        mlp1_hidden: 16,
        mlp2_hidden: 32,
        head_hidden: 16,
        embed_dim: 8,
    };
    cfg
}

fn main() {
    let t0 = Instant::now();
    let codec = ablation_codec();
    let mut base = TrainConfig::new(codec);
    base.steps = std::env::var("STEPS").map(|s| s.parse().unwrap()).unwrap_or(800);
    base.batch = std::env::var("BATCH").map(|s| s.parse().unwrap()).unwrap_or(16);
    base.lambda = std::env::var("LAMBDA").map(|s| s.parse().unwrap()).unwrap_or(1e-4);
    base.seed = std::env::var("SEED").map(|s| s.parse().unwrap()).unwrap_or(21);
    base.log_every = 200;

    let gen: fn(GridSpec, u64) -> _ = match std::env::var("CORPUS").as_deref() {
        Ok("corner") => corner_scene,
        Ok("zigzag") => zigzag_scene,
        _ => wedge_scene,
    };
    let n_eval = std::env::var("EVALS").map(|s| s.parse().unwrap()).unwrap_or(6);
    let train_scans: Vec<_> = (0..6).map(|i| synth_scan(&gen(codec.grid, 100 + i))).collect();
    let eval_scans: Vec<_> = (0..n_eval).map(|i| synth_scan(&gen(codec.grid, 900 + i))).collect();
    let patches = scans_to_patches(&train_scans, &codec, base.seed);
    println!("pool: {} patches; steps {} batch {} lambda {}", patches.len(), base.steps, base.batch, base.lambda);

    // Overfit check (criterion 5 dynamics)
    if std::env::var("SKIP_OVERFIT").is_err() {
        let mut ocfg = base.clone();
        ocfg.lambda = 0.0;
        ocfg.steps = 2000;
        ocfg.batch = 1;
        let single = vec![patches.iter().find(|p| p.valid_count >= 24).unwrap().clone()];
        let t = Instant::now();
        let result = train(&ocfg, &single).unwrap();
        let d0 = result.trace[0].distortion;
        let dn = result.trace.last().unwrap().distortion;
        println!(
            "overfit: D0 {:.4e} -> {:.4e} ({:.1}% drop) in {:?}",
            d0,
            dn,
            100.0 * (1.0 - dn / d0),
            t.elapsed()
        );
    }

    let arms = vec![
        AblationArm { name: "learnable".into(), sampler: SamplerKind::Learnable, expansion_enabled: true },
        AblationArm { name: "mean".into(), sampler: SamplerKind::Mean, expansion_enabled: true },
        AblationArm { name: "random".into(), sampler: SamplerKind::Random, expansion_enabled: true },
        AblationArm { name: "learnable-nc1".into(), sampler: SamplerKind::Learnable, expansion_enabled: false },
    ];
    let t = Instant::now();
    let rows = ablate(&base, &arms, &patches, &eval_scans).unwrap();
    println!("ablation in {:?}", t.elapsed());
    println!("arm,sampler,nc,final_loss,bpp,cd,psnr");
    for r in &rows {
        println!(
            "{},{},{},{:.5e},{:.3},{:.5e},{:.2}",
            r.name, r.sampler.name(), r.expansion, r.final_loss, r.bpp, r.chamfer, r.p2plane_psnr_db
        );
    }
    let l = &rows[0];
    let m = &rows[1];
    let r = &rows[2];
    let nc1 = &rows[3];
    println!(
        "criterion6: L ok={} CD<=mean={} CD<=rand={} improvement_vs_worse={:.1}%",
        l.final_loss <= m.final_loss && l.final_loss <= r.final_loss,
        l.chamfer <= m.chamfer,
        l.chamfer <= r.chamfer,
        100.0 * (1.0 - l.chamfer / m.chamfer.max(r.chamfer))
    );
    println!(
        "criterion7: CD nc4 {:.5e} <= nc1 {:.5e} = {} improvement {:.1}%",
        l.chamfer,
        nc1.chamfer,
        l.chamfer <= nc1.chamfer,
        100.0 * (1.0 - l.chamfer / nc1.chamfer)
    );
    // Criterion 8 proxy: estimated vs actual bits (learnable arm, eval scans)
    let cfg_eff = {
        let mut c = base.clone();
        c.sampler = SamplerKind::Learnable;
        c.effective_codec()
    };
    let result = train(&{ let mut c = base.clone(); c.sampler = SamplerKind::Learnable; c }, &patches).unwrap();
    let eval = lprs_core::harness::evaluate(&result.store, &cfg_eff, SamplerKind::Learnable, &eval_scans, 77).unwrap();
    println!("total {:?}", t0.elapsed());
    println!(
        "criterion8: estimated {:.0} bits vs symbol payload {} bits ({:+.1}%)",
        eval.estimated_bits,
        eval.symbol_payload_bits,
        100.0 * (eval.symbol_payload_bits as f64 - eval.estimated_bits) / eval.estimated_bits
    );
    let _ = converged_loss(&result.trace);
}
