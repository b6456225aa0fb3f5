//! Resolved per-subcommand settings.
//!
//! Resolution order is built-in defaults, then the subcommand's table in the
//! config file, then command-line flags. The resolved struct is written back
//! as `run_manifest.toml`, which is itself a valid config file.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// Settings that can be resolved from defaults, a config table and flags.
pub trait Section: Serialize + DeserializeOwned + Default {
    /// Table name in config files, equal to the subcommand name.
    const NAME: &'static str;

    /// Makes relative paths absolute so the run manifest works from any directory.
    fn absolutize(&mut self) -> CliResult<()> {
        Ok(())
    }
}

fn overlay(base: &mut Value, top: Value) {
    if let (Value::Object(b), Value::Object(t)) = (base, top) {
        for (k, v) in t {
            b.insert(k, v);
        }
    }
}

/// Merges defaults, the `[NAME]` table of `config` and `flags`, in that order.
pub fn resolve<S: Section>(config: Option<&Path>, flags: &impl Serialize) -> CliResult<S> {
    let mut merged = serde_json::to_value(S::default()).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut doc: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(table) = doc.remove(S::NAME) {
            let value = serde_json::to_value(table).map_err(|e| CliError::Config(e.to_string()))?;
            if !value.is_object() {
                return Err(CliError::Config(format!("[{}] in {} is not a table", S::NAME, path.display())));
            }
            overlay(&mut merged, value);
        }
    }
    overlay(&mut merged, serde_json::to_value(flags).map_err(|e| CliError::Config(e.to_string()))?);
    let mut settings: S =
        serde_json::from_value(merged).map_err(|e| CliError::Config(format!("[{}]: {e}", S::NAME)))?;
    settings.absolutize()?;
    Ok(settings)
}

#[derive(Serialize)]
struct RunManifest<'a, S> {
    command: &'a str,
    tool_version: &'a str,
    #[serde(flatten)]
    section: std::collections::BTreeMap<&'a str, &'a S>,
}

/// TOML text of the run manifest for `settings`.
pub fn run_manifest<S: Section>(settings: &S) -> CliResult<String> {
    let doc = RunManifest {
        command: S::NAME,
        tool_version: env!("CARGO_PKG_VERSION"),
        section: [(S::NAME, settings)].into_iter().collect(),
    };
    toml::to_string(&doc).map_err(|e| CliError::Config(format!("cannot serialize run manifest: {e}")))
}

pub fn write_run_manifest<S: Section>(path: &Path, settings: &S) -> CliResult<()> {
    traverse_core::dataset::write_atomic(path, run_manifest(settings)?.as_bytes())?;
    Ok(())
}

pub fn require<'a, T>(value: &'a Option<T>, name: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("missing required setting `{name}`")))
}

fn abs(p: &mut Option<PathBuf>) -> CliResult<()> {
    if let Some(path) = p {
        *path = std::path::absolute(&*path)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectFramesSettings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub theta_th: f64,
    pub dist_th: f64,
    pub comb: f64,
}

impl Default for SelectFramesSettings {
    fn default() -> Self {
        Self {
            manifest: None,
            out: None,
            theta_th: 40.0,
            dist_th: 0.8,
            comb: 1.0,
        }
    }
}

impl Section for SelectFramesSettings {
    const NAME: &'static str = "select-frames";

    fn absolutize(&mut self) -> CliResult<()> {
        abs(&mut self.manifest)?;
        abs(&mut self.out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthGenSettings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub n: usize,
    pub style: String,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub prefix: String,
    pub min_obstacles: usize,
    pub max_obstacles: usize,
    pub noise: f32,
}

impl Default for SynthGenSettings {
    fn default() -> Self {
        let scene = traverse_core::synth::SceneConfig::default();
        Self {
            out: None,
            n: 500,
            style: "asphalt_like".into(),
            seed: 0,
            height: scene.height,
            width: scene.width,
            k: traverse_core::types::DEFAULT_SECTIONS,
            prefix: String::new(),
            min_obstacles: scene.min_obstacles,
            max_obstacles: scene.max_obstacles,
            noise: scene.noise_level,
        }
    }
}

impl Section for SynthGenSettings {
    const NAME: &'static str = "synth-gen";

    fn absolutize(&mut self) -> CliResult<()> {
        abs(&mut self.out)
    }
}

/// Optimization and model settings shared by `train` and `adapt`.
macro_rules! training_settings {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident : $ty:ty = $default:expr),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            #[serde(skip_serializing_if = "Option::is_none")]
            pub out: Option<PathBuf>,
            pub alpha: f64,
            pub lambda: f64,
            /// When false the plain squared error is used.
            pub safety: bool,
            pub epochs: usize,
            pub batch: usize,
            pub lr: f64,
            pub beta1: f64,
            pub beta2: f64,
            pub seed: u64,
            pub k: usize,
            /// Images are resized so the shorter side has this length; 0 disables resizing.
            pub short_side: usize,
            pub encoder_width: usize,
            #[serde(skip_serializing_if = "Option::is_none")]
            pub encoder_weights: Option<PathBuf>,
            pub checkpoint_policy: traverse_core::train::CheckpointPolicy,
            $($(#[$fmeta])* pub $field: $ty,)*
        }

        impl Default for $name {
            fn default() -> Self {
                let adam = traverse_core::optim::AdamConfig::default();
                let loss = traverse_core::losses::LossConfig::default();
                Self {
                    out: None,
                    alpha: loss.alpha,
                    lambda: loss.lambda,
                    safety: loss.safety_enabled,
                    epochs: 200,
                    batch: 16,
                    lr: adam.lr,
                    beta1: adam.beta1,
                    beta2: adam.beta2,
                    seed: 0,
                    k: traverse_core::types::DEFAULT_SECTIONS,
                    short_side: 128,
                    encoder_width: 16,
                    encoder_weights: None,
                    checkpoint_policy: Default::default(),
                    $($field: $default,)*
                }
            }
        }

        impl $name {
            pub fn train_config(&self) -> traverse_core::train::TrainConfig {
                let mut model = traverse_core::model::ModelSpec::with_sections(self.k);
                model.encoder = traverse_core::model::EncoderSpec::Tiny { width: self.encoder_width };
                traverse_core::train::TrainConfig {
                    epochs: self.epochs,
                    batch_size: self.batch,
                    main_optimizer: traverse_core::optim::AdamConfig {
                        lr: self.lr,
                        beta1: self.beta1,
                        beta2: self.beta2,
                        ..Default::default()
                    },
                    loss: traverse_core::losses::LossConfig {
                        alpha: self.alpha,
                        lambda: self.lambda,
                        safety_enabled: self.safety,
                    },
                    seed: self.seed,
                    checkpoint_policy: self.checkpoint_policy,
                    model,
                    encoder_weights: self.encoder_weights.clone(),
                    ..Default::default()
                }
            }

            pub fn short_side(&self) -> Option<usize> {
                (self.short_side > 0).then_some(self.short_side)
            }
        }
    };
}

training_settings!(
    TrainSettings {
        #[serde(skip_serializing_if = "Option::is_none")]
        manifest: Option<PathBuf> = None,
        #[serde(skip_serializing_if = "Option::is_none")]
        annotations: Option<PathBuf> = None,
        /// Share of annotated frames held out for testing; 0 trains on everything.
        test_fraction: f64 = 0.2,
    }
);

impl Section for TrainSettings {
    const NAME: &'static str = "train";

    fn absolutize(&mut self) -> CliResult<()> {
        for p in [&mut self.out, &mut self.manifest, &mut self.annotations, &mut self.encoder_weights] {
            abs(p)?;
        }
        Ok(())
    }
}

training_settings!(
    AdaptSettings {
        #[serde(skip_serializing_if = "Option::is_none")]
        source: Option<PathBuf> = None,
        #[serde(skip_serializing_if = "Option::is_none")]
        source_annotations: Option<PathBuf> = None,
        /// Target-domain manifest; its frames are used without labels.
        #[serde(skip_serializing_if = "Option::is_none")]
        target: Option<PathBuf> = None,
        domain_lr: f64 = traverse_core::optim::SgdConfig::default().lr,
        momentum: f64 = traverse_core::optim::SgdConfig::default().momentum,
        reversal_scale: f64 = 1.0,
    }
);

impl AdaptSettings {
    pub fn adapt_config(&self) -> traverse_core::train::TrainConfig {
        let mut cfg = self.train_config();
        cfg.domain_optimizer = traverse_core::optim::SgdConfig {
            lr: self.domain_lr,
            momentum: self.momentum,
        };
        cfg.model.domain.reversal_scale = self.reversal_scale;
        cfg
    }
}

impl Section for AdaptSettings {
    const NAME: &'static str = "adapt";

    fn absolutize(&mut self) -> CliResult<()> {
        for p in [
            &mut self.out,
            &mut self.source,
            &mut self.source_annotations,
            &mut self.target,
            &mut self.encoder_weights,
        ] {
            abs(p)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlays: Option<PathBuf>,
    pub tolerance: f64,
    /// Overrides the resize recorded in the checkpoint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub short_side: Option<usize>,
    pub batch: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            checkpoint: None,
            manifest: None,
            annotations: None,
            out: None,
            overlays: None,
            tolerance: 0.0,
            short_side: None,
            batch: 16,
        }
    }
}

impl Section for EvalSettings {
    const NAME: &'static str = "eval";

    fn absolutize(&mut self) -> CliResult<()> {
        for p in [
            &mut self.checkpoint,
            &mut self.manifest,
            &mut self.annotations,
            &mut self.out,
            &mut self.overlays,
        ] {
            abs(p)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSettings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub images: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub overlay: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub short_side: Option<usize>,
    pub batch: usize,
}

impl Default for InferSettings {
    fn default() -> Self {
        Self {
            checkpoint: None,
            images: Vec::new(),
            out: None,
            overlay: false,
            short_side: None,
            batch: 16,
        }
    }
}

impl Section for InferSettings {
    const NAME: &'static str = "infer";

    fn absolutize(&mut self) -> CliResult<()> {
        abs(&mut self.checkpoint)?;
        abs(&mut self.out)?;
        for p in &mut self.images {
            *p = std::path::absolute(&*p)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavigateSimSettings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Network used for perception; the analytic oracle when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// World description (JSON); a built-in scenario when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub world: Option<PathBuf>,
    /// `open`, `wall`, `dead_end` or `corridor`.
    pub scenario: String,
    /// Oracle used without a checkpoint: `camera` (pixel-quantized view) or `rays` (exact).
    pub perception: String,
    pub start_x: f64,
    pub start_y: f64,
    pub start_yaw: f64,
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub v_max: f64,
    pub full_speed_score: f64,
    pub stop_score: f64,
    pub fov: f64,
    pub k: usize,
    pub angular_gain: f64,
    pub image_height: usize,
    pub image_width: usize,
    pub style: String,
    pub render: bool,
    pub px_per_m: f64,
}

impl Default for NavigateSimSettings {
    fn default() -> Self {
        let nav = traverse_core::nav::NavConfig::default();
        let sim = traverse_core::nav::SimConfig::default();
        Self {
            out: None,
            checkpoint: None,
            world: None,
            scenario: "corridor".into(),
            perception: "camera".into(),
            start_x: 0.0,
            start_y: 0.0,
            start_yaw: 0.0,
            steps: sim.steps,
            dt: sim.dt,
            seed: 0,
            v_max: nav.v_max,
            full_speed_score: nav.full_speed_score,
            stop_score: nav.stop_score,
            fov: nav.fov,
            k: nav.k,
            angular_gain: nav.angular_gain,
            image_height: sim.image_height,
            image_width: sim.image_width,
            style: sim.ground_style.name().into(),
            render: true,
            px_per_m: 40.0,
        }
    }
}

impl Section for NavigateSimSettings {
    const NAME: &'static str = "navigate-sim";

    fn absolutize(&mut self) -> CliResult<()> {
        abs(&mut self.out)?;
        abs(&mut self.checkpoint)?;
        abs(&mut self.world)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateServeSettings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    pub host: String,
    pub port: u16,
    /// Directory with the annotation UI build.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub static_dir: Option<PathBuf>,
    /// Used when a request does not name its annotator.
    pub annotator: String,
}

impl Default for AnnotateServeSettings {
    fn default() -> Self {
        Self {
            manifest: None,
            annotations: None,
            host: "127.0.0.1".into(),
            port: 8080,
            static_dir: None,
            annotator: "anonymous".into(),
        }
    }
}

impl Section for AnnotateServeSettings {
    const NAME: &'static str = "annotate-serve";

    fn absolutize(&mut self) -> CliResult<()> {
        abs(&mut self.manifest)?;
        abs(&mut self.annotations)?;
        abs(&mut self.static_dir)
    }
}
