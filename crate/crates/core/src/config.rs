//! The single JSON configuration file shared by every pipeline stage.
//!
//! Unknown keys are rejected everywhere. `--set a.b.c=value` overrides paths
//! in the parsed JSON before it is typed, and one master `seed` fans out to
//! per-stage streams.

use crate::delineation::DelineationSpec;
use crate::model::ModelConfig;
use crate::preprocess::FilterSpec;
use crate::sentences::SentenceConfig;
use crate::signal_io::ResampleSpec;
use crate::training::TrainConfig;
use crate::vocabulary::VocabConfig;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    /// Pipeline sampling rate, Hz; everything is resampled to this.
    pub fs: u32,
    /// Window duration, seconds.
    pub window_s: u32,
    pub resample: ResampleSpec,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            fs: 250,
            window_s: 10,
            resample: ResampleSpec::default(),
        }
    }
}

impl SignalConfig {
    pub fn window_samples(&self) -> usize {
        (self.fs as usize) * (self.window_s as usize)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub windows_per_patient: usize,
    pub mean_hr_bpm: f64,
    pub hr_jitter_fraction: f64,
    pub noise_sd: f64,
    /// Fraction of each patient's windows generated with irregular rhythm.
    pub irregular_fraction: f64,
    pub per_patient_morphology: bool,
    /// Amplitude fraction defining ground-truth wave boundaries.
    pub boundary_level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 4,
            windows_per_patient: 10,
            mean_hr_bpm: 66.0,
            hr_jitter_fraction: 0.04,
            noise_sd: 0.02,
            irregular_fraction: 0.0,
            per_patient_morphology: true,
            boundary_level: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Held-out patient fraction for inter-patient splits.
    pub test_fraction: f64,
    /// Label treated as the positive/abnormal class in majority votes and
    /// binary tasks.
    pub positive_label: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.25,
            positive_label: "AFIB".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub format_version: FormatVersion,
    /// Master seed; per-stage streams derive from it.
    pub seed: u64,
    /// Worker threads for the per-window stages (1 keeps runs reproducible
    /// regardless of scheduling; outputs are order-preserving either way).
    pub threads: usize,
    pub signal: SignalConfig,
    pub filter: FilterSpec,
    pub delineation: DelineationSpec,
    pub vocab: VocabConfig,
    pub sentence: SentenceConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            format_version: FormatVersion,
            seed: 0,
            threads: 1,
            signal: SignalConfig::default(),
            filter: FilterSpec::default(),
            delineation: DelineationSpec::default(),
            vocab: VocabConfig::default(),
            sentence: SentenceConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Version marker that rejects mismatched files at parse time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormatVersion;

impl Default for FormatVersion {
    fn default() -> Self {
        FormatVersion
    }
}

impl Serialize for FormatVersion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u32(CONFIG_FORMAT_VERSION)
    }
}

impl<'de> Deserialize<'de> for FormatVersion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u32::deserialize(d)?;
        if v != CONFIG_FORMAT_VERSION {
            return Err(serde::de::Error::custom(format!(
                "unsupported config format_version {v} (expected {CONFIG_FORMAT_VERSION})"
            )));
        }
        Ok(FormatVersion)
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.filter.validate(self.signal.fs)?;
        self.model.validate()?;
        if self.model.window_samples != self.signal.window_samples() {
            return Err(Error::Config(format!(
                "model.window_samples {} does not match signal fs*window_s = {}",
                self.model.window_samples,
                self.signal.window_samples()
            )));
        }
        if !(0.0..1.0).contains(&self.eval.test_fraction) || self.eval.test_fraction <= 0.0 {
            return Err(Error::Config(format!(
                "eval.test_fraction {} must be in (0, 1)",
                self.eval.test_fraction
            )));
        }
        Ok(())
    }

    /// Derived per-stage seed, mixed from the master seed.
    pub fn stage_seed(&self, stage: Stage) -> u64 {
        let tag = stage as u64 + 1;
        let mut h = self.seed ^ 0x9E37_79B9_7F4A_7C15;
        h ^= tag.wrapping_mul(0xBF58_476D_1CE4_E5B9).rotate_left(31);
        h.wrapping_mul(0x94D0_49BB_1331_11EB)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth = 0,
    Vocab = 1,
    Tokenize = 2,
    Train = 3,
    Split = 4,
    Mask = 5,
}

/// Apply one `--set path=value` override to raw JSON. Values parse as JSON
/// when possible, else as strings.
pub fn apply_override(root: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{assignment}'")))?;
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("'{path}': segment '{key}' is not an object")))?;
        if i + 1 == parts.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cursor = obj
            .entry(key.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last segment")
}

/// Load a config file (or defaults), apply overrides, retype, validate.
pub fn load_config(path: Option<&std::path::Path>, sets: &[String]) -> Result<PipelineConfig> {
    let mut value: serde_json::Value = match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => serde_json::to_value(PipelineConfig::default())?,
    };
    for assignment in sets {
        apply_override(&mut value, assignment)?;
    }
    let cfg: PipelineConfig = serde_json::from_value(value)?;
    cfg.validate()?;
    Ok(cfg)
}
