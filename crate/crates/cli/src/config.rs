use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use echotherm::dynamics::TimeGrid;
use echotherm::pipeline::{ShiftPolicy, SpectralSettings};
use echotherm::protocol::{NoiseModel, ProtocolKind};
use echotherm::spectral::frequency_coverage_ok;

/// Problem with a configuration, naming the offending field.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown preset {0:?}; available: {list}", list = preset_names().join(", "))]
    UnknownPreset(String),
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

pub const PRESETS: [(&str, &str); 5] = [
    ("fig3-L8", include_str!("../presets/fig3-L8.toml")),
    ("fig2-L16", include_str!("../presets/fig2-L16.toml")),
    ("fig4-noise", include_str!("../presets/fig4-noise.toml")),
    ("fig4-noise-100k", include_str!("../presets/fig4-noise-100k.toml")),
    ("fig4-exact", include_str!("../presets/fig4-exact.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub spectral: SpectralBlock,
    pub sampler: SamplerBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub sites: usize,
    #[serde(default = "one")]
    pub coupling: f64,
    pub field: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralBlock {
    pub dt: f64,
    pub t_max: f64,
    pub delta: f64,
    pub p_cut: f64,
    #[serde(default)]
    pub shift: ShiftPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerBlock {
    pub temperatures: Vec<f64>,
    pub n_mc: usize,
    pub burn_in: usize,
    #[serde(default = "one_usize")]
    pub n_chains: usize,
    #[serde(default)]
    pub seed: u64,
    /// Sample counts for the error-versus-N_MC study at the first
    /// temperature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_scaling: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolBlock {
    #[serde(default = "sequential")]
    pub kind: ProtocolKind,
    #[serde(default)]
    pub spam_p: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub spam_inversion: bool,
    #[serde(default)]
    pub dephasing_rescale: bool,
    pub levels: Vec<ShotLevel>,
}

/// One noisy run. `shots` absent means exact probabilities; `p_cut` absent
/// inherits the spectral block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotLevel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_cut: Option<f64>,
}

impl ShotLevel {
    pub fn label(&self) -> String {
        match self.shots {
            Some(n) => format!("shots-{n}"),
            None => "shots-exact".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    /// Write per-chain traces.
    #[serde(default)]
    pub traces: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            traces: false,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn sequential() -> ProtocolKind {
    ProtocolKind::Sequential
}

fn default_directory() -> PathBuf {
    PathBuf::from("results")
}

fn positive(field: &str, x: f64) -> Result<(), ConfigError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {x}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.into(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| ConfigError::UnknownPreset(name.into()))?;
        Self::from_toml(text, name)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if !(1..=echotherm::model::MAX_TABLE_SITES).contains(&m.sites) {
            return Err(invalid(
                "model.sites",
                format!("must lie in 1..={}, got {}", echotherm::model::MAX_TABLE_SITES, m.sites),
            ));
        }
        positive("model.coupling", m.coupling)?;
        if !(m.field >= 0.0 && m.field.is_finite()) {
            return Err(invalid("model.field", format!("must be non-negative, got {}", m.field)));
        }
        positive("model.alpha", m.alpha)?;

        let s = &self.spectral;
        positive("spectral.dt", s.dt)?;
        positive("spectral.t_max", s.t_max)?;
        positive("spectral.delta", s.delta)?;
        if !(s.p_cut >= 0.0 && s.p_cut.is_finite()) {
            return Err(invalid("spectral.p_cut", format!("must be non-negative, got {}", s.p_cut)));
        }
        TimeGrid::from_t_max(s.dt, s.t_max).map_err(|e| invalid("spectral.t_max", e.to_string()))?;

        let sm = &self.sampler;
        if sm.temperatures.is_empty() {
            return Err(invalid("sampler.temperatures", "must not be empty"));
        }
        for t in &sm.temperatures {
            positive("sampler.temperatures", *t)?;
        }
        if sm.burn_in >= sm.n_mc {
            return Err(invalid(
                "sampler.burn_in",
                format!("must be smaller than n_mc = {}, got {}", sm.n_mc, sm.burn_in),
            ));
        }
        if sm.n_chains == 0 {
            return Err(invalid("sampler.n_chains", "must be at least 1"));
        }
        if let Some(lengths) = &sm.error_scaling {
            let available = sm.n_mc - sm.burn_in;
            if lengths.len() < 2 {
                return Err(invalid("sampler.error_scaling", "needs at least two sample counts"));
            }
            if let Some(n) = lengths.iter().find(|&&n| n < 2 * echotherm::sampler::MIN_BINS || n > available) {
                return Err(invalid(
                    "sampler.error_scaling",
                    format!("{n} outside [{}, {available}]", 2 * echotherm::sampler::MIN_BINS),
                ));
            }
        }

        if let Some(p) = &self.protocol {
            self.noise_model(p, &ShotLevel { shots: None, p_cut: None })
                .validate()
                .map_err(|e| match e {
                    echotherm::Error::InvalidParameter { field, reason } => invalid(&field, reason),
                    other => invalid("protocol", other.to_string()),
                })?;
            if p.levels.is_empty() {
                return Err(invalid("protocol.levels", "must list at least one shot level"));
            }
            for level in &p.levels {
                if level.shots == Some(0) {
                    return Err(invalid("protocol.levels.shots", "must be at least 1"));
                }
                if let Some(c) = level.p_cut {
                    if !(c >= 0.0 && c.is_finite()) {
                        return Err(invalid("protocol.levels.p_cut", format!("must be non-negative, got {c}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Warnings that do not stop a run.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !frequency_coverage_ok(self.spectral.dt, self.model.field, self.model.sites, self.spectral.delta) {
            out.push(format!(
                "frequency window ±π/dt = ±{:.3} does not cover g√L + 3δ = {:.3}",
                std::f64::consts::PI / self.spectral.dt,
                self.model.field * (self.model.sites as f64).sqrt() + 3.0 * self.spectral.delta
            ));
        }
        out
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::from_t_max(self.spectral.dt, self.spectral.t_max).expect("validated")
    }

    pub fn spectral_settings(&self, p_cut: Option<f64>) -> SpectralSettings {
        SpectralSettings {
            grid: self.grid(),
            delta: self.spectral.delta,
            p_cut: p_cut.unwrap_or(self.spectral.p_cut),
            shift: self.spectral.shift,
        }
    }

    pub fn noise_model(&self, protocol: &ProtocolBlock, level: &ShotLevel) -> NoiseModel {
        NoiseModel {
            shots: level.shots,
            spam_p: protocol.spam_p,
            gamma: protocol.gamma,
            spam_inversion: protocol.spam_inversion,
            dephasing_rescale: protocol.dephasing_rescale,
        }
    }
}
