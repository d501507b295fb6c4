//! Cross-module pipeline tests: file round trips, training-to-codec flow,
//! and property checks over randomized inputs.

use proptest::prelude::*;

use lprs_core::bottleneck::rangecoder::{CdfTable, RangeDecoder, RangeEncoder};
use lprs_core::bottleneck::{hard_quantize, reconstruct};
use lprs_core::codec;
use lprs_core::config::{CodecConfig, ModelConfig, PatchDims, SamplerKind};
use lprs_core::harness::synth::{synth_scan, wedge_scene};
use lprs_core::harness::{self, TrainConfig};
use lprs_core::optim::ParamStore;
use lprs_core::rangegrid::{assemble, build_grid, partition, GridSpec, ReconstructedPatch};

fn small_codec() -> CodecConfig {
    let mut cfg = CodecConfig::desk_default();
    cfg.grid = GridSpec {
        rows: 16,
        cols: 128,
        fov_up: 4.0_f64.to_radians(),
        fov_down: (-20.0_f64).to_radians(),
        azimuth_origin: -std::f64::consts::PI,
    };
    cfg.patch = PatchDims::new(4, 8);
    cfg.model = ModelConfig {
        channels: 4,
        expansion: 2,
        mlp1_hidden: 8,
        mlp2_hidden: 16,
        head_hidden: 8,
        embed_dim: 4,
    };
    cfg
}

#[test]
fn trained_checkpoint_survives_disk_round_trip_into_codec() {
    let codec_cfg = small_codec();
    let mut cfg = TrainConfig::new(codec_cfg);
    cfg.steps = 30;
    cfg.batch = 8;
    cfg.log_every = 0;
    let scan = synth_scan(&wedge_scene(codec_cfg.grid, 5));
    let patches = harness::scans_to_patches(&[scan.clone()], &codec_cfg, cfg.seed);
    let result = harness::train(&cfg, &patches).unwrap();

    let dir = std::env::temp_dir().join("lprs-pipeline-tests");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.ckpt");
    result.store.save(&path).unwrap();
    let loaded = ParamStore::load(&path).unwrap();
    assert_eq!(loaded.to_bytes(), result.store.to_bytes());

    // The reloaded checkpoint must produce the identical bitstream and
    // decode to the identical cloud.
    let a = codec::compress(&scan, &result.store, &codec_cfg, SamplerKind::Learnable, 3).unwrap();
    let b = codec::compress(&scan, &loaded, &codec_cfg, SamplerKind::Learnable, 3).unwrap();
    assert_eq!(a.bytes, b.bytes);
    let dec = codec::decompress(&a.bytes, &loaded).unwrap();
    assert_eq!(dec.points.len(), a.stats.gridded_points);
}

#[test]
fn higher_lambda_never_increases_bitrate() {
    // Directional check of the rate coefficient: training the same data
    // with a larger lambda must not end at a higher actual bitrate.
    let codec_cfg = small_codec();
    let scans: Vec<_> = (0..2)
        .map(|i| synth_scan(&wedge_scene(codec_cfg.grid, 40 + i)))
        .collect();
    let eval_scan = synth_scan(&wedge_scene(codec_cfg.grid, 77));
    let mut bits = Vec::new();
    for lambda in [1e-4, 3e-2] {
        let mut cfg = TrainConfig::new(codec_cfg);
        cfg.steps = 400;
        cfg.batch = 12;
        cfg.lambda = lambda;
        cfg.seed = 9;
        cfg.log_every = 0;
        let patches = harness::scans_to_patches(&scans, &codec_cfg, cfg.seed);
        let result = harness::train(&cfg, &patches).unwrap();
        let eval = harness::evaluate(
            &result.store,
            &cfg.effective_codec(),
            SamplerKind::Learnable,
            std::slice::from_ref(&eval_scan),
            5,
        )
        .unwrap();
        bits.push(eval.total_bits);
    }
    assert!(
        bits[1] <= bits[0],
        "lambda sweep must not increase bitrate: {} -> {}",
        bits[0],
        bits[1]
    );
}

#[test]
fn decompress_rejects_wrong_patch_geometry_checkpoint() {
    let codec_cfg = small_codec();
    let store = codec::init_store(&codec_cfg, 1);
    let scan = synth_scan(&wedge_scene(codec_cfg.grid, 5));
    let out = codec::compress(&scan, &store, &codec_cfg, SamplerKind::Learnable, 3).unwrap();

    // A checkpoint trained for another patch size must be refused even if
    // someone forges the model hash by reusing the entropy parameters.
    let mut other_cfg = codec_cfg;
    other_cfg.patch = PatchDims::new(2, 4);
    let mut other = codec::init_store(&other_cfg, 1);
    for name in [
        "ebm.p.0", "ebm.p.1", "ebm.p.2", "ebm.f.0", "ebm.f.1", "ebm.f.2", "ebm.f.3",
    ] {
        for layer in 1..=4 {
            for part in ["h", "b", "a"] {
                let full = format!("{}.l{}.{}", name, layer, part);
                if store.contains(&full) {
                    other.set(&full, store.get(&full).clone());
                }
            }
        }
    }
    assert_eq!(codec::model_hash(&other), codec::model_hash(&store));
    match codec::decompress(&out.bytes, &other) {
        Err(codec::CodecError::ModelMismatch(msg)) => {
            assert!(msg.contains("slots"), "{}", msg);
        }
        r => panic!("expected geometry mismatch, got {:?}", r.map(|_| ())),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn range_coder_round_trips_any_sequence(
        counts in prop::collection::vec(1u32..300, 2..40),
        data in prop::collection::vec(0usize..1000, 0..300),
    ) {
        let table = CdfTable::from_counts(&counts);
        let syms: Vec<usize> = data.iter().map(|&d| d % counts.len()).collect();
        let mut enc = RangeEncoder::new();
        for &s in &syms {
            enc.encode(&table, s);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &s in &syms {
            prop_assert_eq!(dec.decode(&table).unwrap(), s);
        }
    }

    #[test]
    fn quantization_round_trip_is_within_half_step(
        values in prop::collection::vec(-50.0f64..50.0, 1..64),
        step in 0.001f64..2.0,
        anchor_val in -5.0f64..5.0,
    ) {
        let anchor = vec![anchor_val; values.len()];
        let syms = hard_quantize(&values, step, &anchor).unwrap();
        let recon = reconstruct(&syms, step, &anchor);
        for (v, r) in values.iter().zip(&recon) {
            prop_assert!((v - r).abs() <= step / 2.0 + 1e-9);
        }
    }

    #[test]
    fn partition_assemble_identity_is_lossless(
        seed in 0u64..1000,
        n_points in 1usize..300,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let spec = GridSpec {
            rows: 8,
            cols: 32,
            fov_up: 0.2,
            fov_down: -0.4,
            azimuth_origin: -std::f64::consts::PI,
        };
        let points: Vec<[f64; 3]> = (0..n_points)
            .map(|_| {
                let az = rng.gen_range(-3.1f64..3.1);
                let el = rng.gen_range(-0.39f64..0.19);
                let r = rng.gen_range(1.0f64..30.0);
                [r * el.cos() * az.cos(), r * el.cos() * az.sin(), r * el.sin()]
            })
            .collect();
        let (grid, _) = build_grid(&points, &spec);
        let (layout, patches) = partition(&grid, 4, 4, seed);
        let recon: Vec<ReconstructedPatch> = patches
            .iter()
            .map(|p| ReconstructedPatch {
                patch_index: p.patch_index,
                valid: p.flags.clone(),
                points: p.points.clone(),
            })
            .collect();
        let out = assemble(&layout, &recon).unwrap();
        let mut expected = grid.valid_points();
        let mut got = out;
        let key = |p: &[f64; 3]| (p[0].to_bits(), p[1].to_bits(), p[2].to_bits());
        expected.sort_by_key(key);
        got.sort_by_key(key);
        prop_assert_eq!(expected, got);
    }
}
