//! TOML configuration file: sections of key = value pairs with defaults.
//!
//! Unknown keys are rejected so typos fail loudly instead of silently
//! falling back to defaults. The resolved (defaults + file + flag
//! overrides) configuration is serialized back out for provenance.

use serde::{Deserialize, Serialize};

use lprs_core::config::{BottleneckConfig, CodecConfig, ModelConfig, PatchDims, SamplerKind};
use lprs_core::harness::synth::{Primitive, SceneSpec};
use lprs_core::harness::TrainConfig;
use lprs_core::rangegrid::GridSpec;

use crate::CliError;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub grid: GridSection,
    pub patch: PatchSection,
    pub model: ModelSection,
    pub bottleneck: BottleneckSection,
    pub train: TrainSection,
    pub scene: SceneSection,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile {
            grid: GridSection::default(),
            patch: PatchSection::default(),
            model: ModelSection::default(),
            bottleneck: BottleneckSection::default(),
            train: TrainSection::default(),
            scene: SceneSection::default(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub rows: usize,
    pub cols: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
    pub azimuth_origin_deg: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            rows: 32,
            cols: 256,
            fov_up_deg: 2.0,
            fov_down_deg: -24.8,
            azimuth_origin_deg: -180.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchSection {
    pub rows: usize,
    pub cols: usize,
}

impl Default for PatchSection {
    fn default() -> Self {
        PatchSection { rows: 4, cols: 8 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub channels: usize,
    pub expansion: usize,
    pub mlp1_hidden: usize,
    pub mlp2_hidden: usize,
    pub head_hidden: usize,
    pub embed_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            channels: m.channels,
            expansion: m.expansion,
            mlp1_hidden: m.mlp1_hidden,
            mlp2_hidden: m.mlp2_hidden,
            head_hidden: m.head_hidden,
            embed_dim: m.embed_dim,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct BottleneckSection {
    pub q_step_p: f64,
    pub q_step_f: f64,
    pub symbol_min: i32,
    pub symbol_max: i32,
    pub tail_mass: f64,
    pub init_scale_p: f64,
    pub init_scale_f: f64,
}

impl Default for BottleneckSection {
    fn default() -> Self {
        let b = BottleneckConfig::default();
        BottleneckSection {
            q_step_p: b.q_step_p,
            q_step_f: b.q_step_f,
            symbol_min: b.symbol_min,
            symbol_max: b.symbol_max,
            tail_mass: b.tail_mass,
            init_scale_p: b.init_scale_p,
            init_scale_f: b.init_scale_f,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    /// One of "learnable", "mean", "random".
    pub sampler: String,
    pub expansion_enabled: bool,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lambda: 1e-4,
            lr: 1e-3,
            steps: 5000,
            batch: 64,
            seed: 7,
            sampler: "learnable".into(),
            expansion_enabled: true,
            log_every: 100,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    /// Number of scans to generate.
    pub scans: usize,
    pub dropout: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Scene preset used when no explicit primitives are listed.
    /// Currently "corner": wedge-heavy desk-scale scenes.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plane: Vec<PlaneSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub r#box: Vec<BoxSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sphere: Vec<SphereSection>,
}

impl Default for SceneSection {
    fn default() -> Self {
        SceneSection {
            scans: 8,
            dropout: 0.05,
            noise_sigma: 0.005,
            seed: 1,
            kind: "corner".into(),
            plane: Vec::new(),
            r#box: Vec::new(),
            sphere: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneSection {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub half_extents: [f64; 2],
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSection {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSection {
    pub center: [f64; 3],
    pub radius: f64,
}

impl ConfigFile {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {}", path.display(), e)))?;
        let cfg: ConfigFile = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(msg.to_string()));
        if self.grid.rows == 0 || self.grid.cols == 0 {
            return bad("grid.rows and grid.cols must be positive");
        }
        if self.grid.fov_up_deg <= self.grid.fov_down_deg {
            return bad("grid.fov_up_deg must exceed grid.fov_down_deg");
        }
        if self.patch.rows == 0 || self.patch.cols == 0 {
            return bad("patch.rows and patch.cols must be positive");
        }
        if self.model.channels == 0 || self.model.expansion == 0 {
            return bad("model.channels and model.expansion must be positive");
        }
        if self.bottleneck.q_step_p <= 0.0 || self.bottleneck.q_step_f <= 0.0 {
            return bad("bottleneck steps must be positive");
        }
        if self.bottleneck.symbol_min >= self.bottleneck.symbol_max {
            return bad("bottleneck.symbol_min must be below symbol_max");
        }
        if self.train.lambda < 0.0 || self.train.lr <= 0.0 {
            return bad("train.lambda must be >= 0 and train.lr > 0");
        }
        if self.train.batch == 0 {
            return bad("train.batch must be positive");
        }
        if SamplerKind::parse(&self.train.sampler).is_none() {
            return bad("train.sampler must be learnable, mean, or random");
        }
        if !(0.0..1.0).contains(&self.scene.dropout) {
            return bad("scene.dropout must be in [0, 1)");
        }
        if self.scene.noise_sigma < 0.0 {
            return bad("scene.noise_sigma must be nonnegative");
        }
        if self.scene.kind != "corner" {
            return bad("scene.kind must be \"corner\" (or list explicit primitives)");
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            rows: self.grid.rows,
            cols: self.grid.cols,
            fov_up: self.grid.fov_up_deg.to_radians(),
            fov_down: self.grid.fov_down_deg.to_radians(),
            azimuth_origin: self.grid.azimuth_origin_deg.to_radians(),
        }
    }

    pub fn codec_config(&self) -> CodecConfig {
        CodecConfig {
            grid: self.grid_spec(),
            patch: PatchDims::new(self.patch.rows, self.patch.cols),
            model: ModelConfig {
                channels: self.model.channels,
                expansion: self.model.expansion,
                mlp1_hidden: self.model.mlp1_hidden,
                mlp2_hidden: self.model.mlp2_hidden,
                head_hidden: self.model.head_hidden,
                embed_dim: self.model.embed_dim,
            },
            bottleneck: BottleneckConfig {
                q_step_p: self.bottleneck.q_step_p,
                q_step_f: self.bottleneck.q_step_f,
                symbol_min: self.bottleneck.symbol_min,
                symbol_max: self.bottleneck.symbol_max,
                tail_mass: self.bottleneck.tail_mass,
                init_scale_p: self.bottleneck.init_scale_p,
                init_scale_f: self.bottleneck.init_scale_f,
            },
        }
    }

    pub fn sampler(&self) -> SamplerKind {
        SamplerKind::parse(&self.train.sampler).expect("validated sampler")
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig::new(self.codec_config());
        t.lambda = self.train.lambda;
        t.lr = self.train.lr;
        t.steps = self.train.steps;
        t.batch = self.train.batch;
        t.seed = self.train.seed;
        t.sampler = self.sampler();
        t.expansion_enabled = self.train.expansion_enabled;
        t.log_every = self.train.log_every;
        t
    }

    fn explicit_primitives(&self) -> Vec<Primitive> {
        let mut prims = Vec::new();
        for p in &self.scene.plane {
            prims.push(Primitive::Plane {
                center: p.center,
                normal: p.normal,
                half_extents: p.half_extents,
            });
        }
        for b in &self.scene.r#box {
            prims.push(Primitive::Box {
                center: b.center,
                half_extents: b.half_extents,
                yaw: b.yaw,
            });
        }
        for s in &self.scene.sphere {
            prims.push(Primitive::Sphere {
                center: s.center,
                radius: s.radius,
            });
        }
        prims
    }

    /// Scene for the i-th scan: explicit primitives if any were listed,
    /// otherwise the preset generator with a per-scan seed.
    pub fn scene_spec(&self, index: usize) -> SceneSpec {
        let seed = self
            .scene
            .seed
            .wrapping_add(index as u64)
            .wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let explicit = self.explicit_primitives();
        if explicit.is_empty() {
            let mut spec = lprs_core::harness::synth::corner_scene(self.grid_spec(), seed);
            spec.dropout = self.scene.dropout;
            spec.noise_sigma = self.scene.noise_sigma;
            spec
        } else {
            SceneSpec {
                grid: self.grid_spec(),
                primitives: explicit,
                dropout: self.scene.dropout,
                noise_sigma: self.scene.noise_sigma,
                seed,
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
