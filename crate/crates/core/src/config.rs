//! Flat run settings: paper defaults, the desk preset, TOML files and the
//! run manifest.
//!
//! Every key of [`Settings`] is a top-level TOML key. Layers apply in order:
//! built-in defaults (or the desk preset), then a config file, then explicit
//! overrides. The manifest written next to a run is the effective settings
//! plus a `format_version` key.

use crate::env::{EnvConfig, EnvError, PongEnv};
use crate::marl::StrategyKind;
use crate::policy::{CnnConfig, ModelKind, ModelSpec};
use crate::ppo::PpoConfig;
use crate::qsim::{AnsatzConfig, Entanglement, QsimError};
use crate::runtime::{RunConfig, RuntimeError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest format version {0} is not supported")]
    Version(i64),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Qsim(#[from] QsimError),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub strategy: StrategyKind,
    pub model: ModelKind,
    pub entanglement: Entanglement,
    pub qubits: usize,
    pub layers: usize,
    pub hybrid_layers: usize,
    /// Width of the dense layer closing each hybrid block.
    pub hybrid_hidden: usize,
    pub cnn_channels: Vec<usize>,
    pub cnn_kernels: Vec<usize>,
    pub cnn_strides: Vec<usize>,
    pub cnn_dense: Vec<usize>,
    pub obs_size: usize,
    pub max_cycles: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub clip_eps: f64,
    pub lr: f64,
    pub gae_lambda: f64,
    pub vf_coef: f64,
    pub entropy_coef: f64,
    pub kl_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub seed: u64,
    pub workers: usize,
    pub steps_per_worker: usize,
    pub threads: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub checkpoint_every: usize,
    pub output_dir: PathBuf,
    pub deterministic: bool,
}

impl Default for Settings {
    fn default() -> Self {
        let ppo = PpoConfig::default();
        let cnn = CnnConfig::default();
        let env = EnvConfig::default();
        Self {
            strategy: StrategyKind::Independent,
            model: ModelKind::Quantum,
            entanglement: Entanglement::Strong,
            qubits: 13,
            layers: 9,
            hybrid_layers: 3,
            hybrid_hidden: 16,
            cnn_channels: cnn.channels,
            cnn_kernels: cnn.kernels,
            cnn_strides: cnn.strides,
            cnn_dense: vec![32],
            obs_size: env.obs_size,
            max_cycles: env.max_cycles,
            iterations: ppo.total_iterations,
            batch_size: ppo.batch_size,
            minibatch_size: ppo.minibatch_size,
            epochs: ppo.epochs_per_iter,
            gamma: ppo.gamma,
            clip_eps: ppo.clip_eps,
            lr: ppo.lr,
            gae_lambda: ppo.gae_lambda,
            vf_coef: ppo.vf_coef,
            entropy_coef: ppo.entropy_coef,
            kl_coef: ppo.kl_coef,
            max_grad_norm: ppo.max_grad_norm,
            normalize_advantages: ppo.normalize_advantages,
            seed: 0,
            workers: 4,
            steps_per_worker: 128,
            threads: 0,
            eval_every: 100,
            eval_episodes: 100,
            checkpoint_every: 100,
            output_dir: PathBuf::from("runs/latest"),
            deterministic: true,
        }
    }
}

impl Settings {
    /// Small-scale preset: 4 qubits, 2 layers, 16×16 frames, 300-step
    /// episodes and 300 iterations. Learning-rate, discount and
    /// regularization values are retuned for the short run.
    pub fn desk() -> Self {
        Self {
            qubits: 4,
            layers: 2,
            cnn_channels: vec![4, 8],
            obs_size: 16,
            max_cycles: 300,
            iterations: 300,
            gamma: 0.99,
            lr: 3e-3,
            entropy_coef: 0.01,
            eval_every: 50,
            checkpoint_every: 50,
            output_dir: PathBuf::from("runs/desk"),
            ..Self::default()
        }
    }

    /// Applies the keys of a TOML document on top of `self`. Unknown keys
    /// and ill-typed values are rejected.
    pub fn overlay_toml(&self, text: &str, origin: &str) -> Result<Self> {
        let parse = |e: toml::de::Error| ConfigError::Parse {
            origin: origin.to_owned(),
            message: e.to_string(),
        };
        let overrides: toml::Table = text.parse().map_err(parse)?;
        let mut base = toml::Table::try_from(self).expect("settings serialize to a table");
        for (k, v) in overrides {
            base.insert(k, v);
        }
        base.try_into().map_err(parse)
    }

    pub fn overlay_file(&self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        self.overlay_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize to TOML")
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            gamma: self.gamma,
            clip_eps: self.clip_eps,
            lr: self.lr,
            gae_lambda: self.gae_lambda,
            vf_coef: self.vf_coef,
            entropy_coef: self.entropy_coef,
            kl_coef: self.kl_coef,
            batch_size: self.batch_size,
            minibatch_size: self.minibatch_size,
            epochs_per_iter: self.epochs,
            total_iterations: self.iterations,
            max_grad_norm: self.max_grad_norm,
            normalize_advantages: self.normalize_advantages,
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            obs_size: self.obs_size,
            max_cycles: self.max_cycles,
            seed: self.seed,
            ..EnvConfig::default()
        }
    }

    pub fn ansatz(&self) -> AnsatzConfig {
        AnsatzConfig {
            n_qubits: self.qubits,
            n_layers: self.layers,
            entanglement: self.entanglement,
        }
    }

    /// Per-agent model template; input shape and head size are set later
    /// from the environment and strategy.
    pub fn model_template(&self) -> ModelSpec {
        let mut spec = match self.model {
            ModelKind::Quantum => {
                let mut s = ModelSpec::hybrid((0, 0), 0, self.ansatz());
                s.n_hybrid_layers = self.hybrid_layers;
                s.hidden_dims = vec![self.hybrid_hidden; self.hybrid_layers];
                s
            }
            ModelKind::Classical => {
                let mut s = ModelSpec::classical((0, 0), 0);
                s.hidden_dims = self.cnn_dense.clone();
                s
            }
        };
        spec.cnn = CnnConfig {
            channels: self.cnn_channels.clone(),
            kernels: self.cnn_kernels.clone(),
            strides: self.cnn_strides.clone(),
        };
        spec
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            n_workers: self.workers,
            steps_per_worker_per_iter: self.steps_per_worker,
            seed: self.seed,
            strategy: self.strategy,
            model: self.model_template(),
            ppo: self.ppo(),
            eval_every: self.eval_every,
            eval_episodes: self.eval_episodes,
            checkpoint_every: self.checkpoint_every,
            output_dir: Some(self.output_dir.clone()),
            deterministic: self.deterministic,
            threads: self.threads,
        }
    }

    pub fn env(&self) -> Result<PongEnv> {
        Ok(PongEnv::new(self.env_config())?)
    }

    /// Checks every value, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &'static str, message: String| Err(ConfigError::Invalid { key, message });
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", format!("must lie in (0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(
                "gae_lambda",
                format!("must lie in [0, 1], got {}", self.gae_lambda),
            );
        }
        if self.seed > i64::MAX as u64 {
            return bad("seed", format!("must be at most {}", i64::MAX));
        }
        for (key, v) in [
            ("lr", self.lr),
            ("clip_eps", self.clip_eps),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(key, format!("must be positive, got {v}"));
            }
        }
        for (key, v) in [
            ("vf_coef", self.vf_coef),
            ("entropy_coef", self.entropy_coef),
            ("kl_coef", self.kl_coef),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(key, format!("must be non-negative, got {v}"));
            }
        }
        for (key, v) in [
            ("batch_size", self.batch_size),
            ("minibatch_size", self.minibatch_size),
            ("epochs", self.epochs),
            ("workers", self.workers),
            ("steps_per_worker", self.steps_per_worker),
            ("obs_size", self.obs_size),
            ("max_cycles", self.max_cycles),
        ] {
            if v == 0 {
                return bad(key, "must be positive".into());
            }
        }
        if self.workers * self.steps_per_worker < self.batch_size {
            return bad(
                "steps_per_worker",
                format!(
                    "workers x steps_per_worker = {} is below batch_size {}",
                    self.workers * self.steps_per_worker,
                    self.batch_size
                ),
            );
        }
        if self.model == ModelKind::Quantum {
            if self.hybrid_layers == 0 {
                return bad("hybrid_layers", "must be positive".into());
            }
            self.ansatz().validate().map_err(|e| ConfigError::Invalid {
                key: "qubits",
                message: e.to_string(),
            })?;
        }
        if self.cnn_channels.len() != self.cnn_kernels.len()
            || self.cnn_channels.len() != self.cnn_strides.len()
        {
            return bad(
                "cnn_channels",
                "cnn_channels, cnn_kernels and cnn_strides must have equal length".into(),
            );
        }
        self.env_config().validate()?;
        self.run_config().validate()?;
        // Builds every network once so shape errors surface here.
        let env = self.env()?;
        crate::marl::make_policies(
            self.strategy,
            &self
                .run_config()
                .actor_spec(crate::env::CoopEnv::obs_shape(&env)),
            crate::env::CoopEnv::obs_shape(&env),
            &mut rand::rngs::mock::StepRng::new(0, 1),
        )
        .map_err(RuntimeError::from)?;
        Ok(())
    }
}

/// Manifest text for `settings`: `format_version` followed by every setting.
pub fn manifest_toml(settings: &Settings) -> String {
    format!(
        "format_version = {MANIFEST_FORMAT_VERSION}\n{}",
        settings.to_toml()
    )
}

pub fn parse_manifest(text: &str, origin: &str) -> Result<Settings> {
    let parse = |e: toml::de::Error| ConfigError::Parse {
        origin: origin.to_owned(),
        message: e.to_string(),
    };
    let mut table: toml::Table = text.parse().map_err(parse)?;
    match table.remove("format_version") {
        Some(toml::Value::Integer(v)) if v == i64::from(MANIFEST_FORMAT_VERSION) => {}
        Some(toml::Value::Integer(v)) => return Err(ConfigError::Version(v)),
        _ => {
            return Err(ConfigError::Parse {
                origin: origin.to_owned(),
                message: "missing integer `format_version`".into(),
            })
        }
    }
    table.try_into().map_err(parse)
}

pub fn write_manifest(dir: &Path, settings: &Settings) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|source| ConfigError::Io {
        path: dir.to_owned(),
        source,
    })?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest_toml(settings)).map_err(|source| ConfigError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_manifest(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let s = Settings::default();
        assert_eq!(s.gamma, 0.95);
        assert_eq!(s.clip_eps, 0.3);
        assert_eq!(s.lr, 1e-4);
        assert_eq!(s.batch_size, 512);
        assert_eq!(s.kl_coef, 0.2);
        assert_eq!(s.vf_coef, 1.0);
        assert_eq!(s.entropy_coef, 0.5);
        assert_eq!((s.qubits, s.layers), (13, 9));
        assert_eq!(s.obs_size, 64);
        s.validate().unwrap();
    }

    #[test]
    fn desk_preset_is_small() {
        let d = Settings::desk();
        assert_eq!(
            (d.qubits, d.layers, d.obs_size, d.max_cycles),
            (4, 2, 16, 300)
        );
        d.validate().unwrap();
    }

    #[test]
    fn file_overlays_base() {
        let s = Settings::desk()
            .overlay_toml("qubits = 3\nentanglement = \"basic\"\n", "test")
            .unwrap();
        assert_eq!(s.qubits, 3);
        assert_eq!(s.entanglement, Entanglement::Basic);
        assert_eq!(s.obs_size, 16, "untouched keys keep the base value");
    }

    #[test]
    fn unknown_and_mistyped_keys_are_rejected() {
        let e = Settings::default()
            .overlay_toml("qbits = 3\n", "f.toml")
            .unwrap_err();
        assert!(e.to_string().contains("qbits"), "{e}");
        let e = Settings::default()
            .overlay_toml("qubits = \"many\"\n", "f.toml")
            .unwrap_err();
        assert!(e.to_string().contains("qubits"), "{e}");
    }

    #[test]
    fn invalid_values_name_their_key() {
        let s = Settings {
            gamma: 1.5,
            ..Settings::default()
        };
        match s.validate() {
            Err(ConfigError::Invalid { key, .. }) => assert_eq!(key, "gamma"),
            other => panic!("{other:?}"),
        }
        let s = Settings {
            steps_per_worker: 1,
            ..Settings::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn manifest_round_trips_exactly() {
        let s = Settings {
            lr: 0.1 + 0.2,
            seed: u64::MAX >> 1,
            ..Settings::desk()
        };
        let text = manifest_toml(&s);
        assert!(text.starts_with("format_version = 1\n"));
        assert_eq!(parse_manifest(&text, "m").unwrap(), s);
        assert!(matches!(
            parse_manifest(
                &text.replace("format_version = 1", "format_version = 9"),
                "m"
            ),
            Err(ConfigError::Version(9))
        ));
    }
}
