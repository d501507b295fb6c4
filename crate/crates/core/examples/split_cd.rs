//! Diagnose per-direction CD for sampler arms.
use lprs_core::config::{CodecConfig, ModelConfig, PatchDims, SamplerKind};
use lprs_core::harness::synth::{synth_scan, zigzag_scene};
use lprs_core::harness::{scans_to_patches, train, TrainConfig};
use lprs_core::rangegrid::{build_grid, GridSpec};
use lprs_core::{codec, kdtree::KdTree};

fn main() {
    let mut cfg = CodecConfig::desk_default();
    cfg.grid = GridSpec { rows: 32, cols: 256, fov_up: 4.0_f64.to_radians(), fov_down: (-20.0_f64).to_radians(), azimuth_origin: -std::f64::consts::PI };
    cfg.patch = PatchDims::new(4, 8);
    cfg.model = ModelConfig { channels: 4, expansion: 4, mlp1_hidden: 16, mlp2_hidden: 32, head_hidden: 16, embed_dim: 8 };
    let mut base = TrainConfig::new(cfg);
    base.steps = std::env::var("STEPS").map(|s| s.parse().unwrap()).unwrap_or(1500);
    base.batch = 24; base.lambda = 3e-4; base.seed = 21; base.log_every = 0;
    let train_scans: Vec<_> = (0..6).map(|i| synth_scan(&zigzag_scene(cfg.grid, 100 + i))).collect();
    let eval_scan = synth_scan(&zigzag_scene(cfg.grid, 901));
    let patches = scans_to_patches(&train_scans, &cfg, base.seed);
    for sampler in [SamplerKind::Learnable, SamplerKind::Mean, SamplerKind::Random] {
        let mut c = base.clone(); c.sampler = sampler;
        let r = train(&c, &patches).unwrap();
        let out = codec::compress(&eval_scan, &r.store, &cfg, sampler, 7).unwrap();
        let dec = codec::decompress(&out.bytes, &r.store).unwrap();
        let (grid, _) = build_grid(&eval_scan, &codec::canonical_config(&cfg).grid);
        let reference = grid.valid_points();
        let tree_r = KdTree::new(&dec.points);
        let tree_o = KdTree::new(&reference);
        let fwd: f64 = dec.points.iter().map(|p| tree_o.nearest(p).1).sum::<f64>() / dec.points.len() as f64;
        let bwd: f64 = reference.iter().map(|p| tree_r.nearest(p).1).sum::<f64>() / reference.len() as f64;
        println!("{:<10} recon->orig {:.5e}  orig->recon {:.5e}  total {:.5e}", sampler.name(), fwd, bwd, fwd + bwd);
    }
}
