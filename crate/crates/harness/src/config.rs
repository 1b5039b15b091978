//! Study configuration file (JSON, versioned).
//!
//! Relative paths resolve against the data root: `DRT_HARNESS_DATA` when set,
//! otherwise the directory holding the config file.

use std::path::{Path, PathBuf};

use drt_core::audio::{TrimParams, DEFAULT_FADE_MS, WB_RATE_HZ};
use drt_core::blocks::{CatchPolicy, DEFAULT_CATCH_TRIALS, DEFAULT_PRACTICE_ITEMS};
use drt_core::corpus::DEFAULT_INSTANCES_PER_WORD;
use drt_core::rng::split_seed;
use drt_core::session::{ProtocolConfig, DEFAULT_DIGIT_SNRS_DB};
use drt_core::simulator::{ListenerModel, DEFAULT_LISTENERS_PER_BLOCK};
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;
/// Environment variable naming the default service data directory.
pub const DATA_ENV: &str = "DRT_HARNESS_DATA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub version: u32,
    pub study_id: String,
    /// Language tag of the word list and the required first language.
    pub language: String,
    pub word_list: PathBuf,
    /// Manifest of raw (uncurated) recordings; audio paths relative to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_manifest: Option<PathBuf>,
    /// Output root for curated audio, manifests, plans and reports.
    pub output: PathBuf,
    #[serde(default)]
    pub curation: CurationConfig,
    #[serde(default)]
    pub condition: ConditionSpec,
    #[serde(default = "default_instances")]
    pub instances_per_word: usize,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default = "default_catch")]
    pub catch_trials: usize,
    #[serde(default)]
    pub catch_policy: CatchPolicy,
    #[serde(default = "default_practice")]
    pub practice_items: usize,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub digits: DigitsConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub bonus: BonusConfig,
    pub seeds: Seeds,
}

fn default_instances() -> usize {
    DEFAULT_INSTANCES_PER_WORD
}
fn default_blocks() -> usize {
    12
}
fn default_catch() -> usize {
    DEFAULT_CATCH_TRIALS
}
fn default_practice() -> usize {
    DEFAULT_PRACTICE_ITEMS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationConfig {
    pub target_rate_hz: u32,
    pub lead_ms: f64,
    pub trail_ms: f64,
    pub threshold_db: f64,
    pub frame_ms: f64,
    pub fade_ms: f64,
    pub target_rms_db: f64,
    /// Recordings with more full-scale samples than this are rejected.
    pub max_clipped_samples: usize,
    /// Bounds on the detected speech duration (before margins).
    pub min_speech_ms: f64,
    pub max_speech_ms: f64,
    /// Speech must start and end at least this far from the file edges.
    pub min_edge_ms: f64,
    /// File of recording ids excluded by a human reviewer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exclude_list: Option<PathBuf>,
}

impl Default for CurationConfig {
    fn default() -> Self {
        let trim = TrimParams::default();
        CurationConfig {
            target_rate_hz: WB_RATE_HZ,
            lead_ms: trim.lead_ms,
            trail_ms: trim.trail_ms,
            threshold_db: trim.threshold_db,
            frame_ms: trim.frame_ms,
            fade_ms: DEFAULT_FADE_MS,
            target_rms_db: -26.0,
            max_clipped_samples: 0,
            min_speech_ms: 150.0,
            max_speech_ms: 2500.0,
            min_edge_ms: 5.0,
            exclude_list: None,
        }
    }
}

impl CurationConfig {
    pub fn trim_params(&self) -> TrimParams {
        TrimParams {
            lead_ms: self.lead_ms,
            trail_ms: self.trail_ms,
            threshold_db: self.threshold_db,
            frame_ms: self.frame_ms,
        }
    }
}

/// Treatment applied to the curated wideband set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConditionSpec {
    /// The curated wideband recordings as they are.
    #[default]
    Wb,
    /// G.711 mu-law at 8 kHz, back to 16 kHz.
    PcmuNb {
        #[serde(default = "nb_label")]
        label: String,
    },
    /// A user-supplied program. `{input}` and `{output}` in the arguments
    /// are replaced by WAV paths.
    External { label: String, command: Vec<String> },
}

fn nb_label() -> String {
    "NB".into()
}

impl ConditionSpec {
    pub fn label(&self) -> &str {
        match self {
            ConditionSpec::Wb => "WB",
            ConditionSpec::PcmuNb { label } | ConditionSpec::External { label, .. } => label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DigitsConfig {
    pub snrs_db: Vec<f64>,
    /// Directory with one recording per digit, `0.wav` to `9.wav`. Without
    /// it, digit stimuli are not rendered.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recordings: Option<PathBuf>,
    /// Silence between digits of a triplet.
    pub gap_ms: f64,
}

impl Default for DigitsConfig {
    fn default() -> Self {
        DigitsConfig { snrs_db: DEFAULT_DIGIT_SNRS_DB.to_vec(), recordings: None, gap_ms: 150.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedCondition {
    /// Manifest of the condition's test set.
    pub manifest: PathBuf,
    pub model: ListenerModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub listeners_per_block: usize,
    /// One entry per condition; two entries also produce a comparison.
    pub conditions: Vec<SimulatedCondition>,
    /// Manifest of the wideband set used for catch trials and practice;
    /// defaults to the first condition's manifest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wb_manifest: Option<PathBuf>,
    pub paired: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig { listeners_per_block: DEFAULT_LISTENERS_PER_BLOCK, conditions: Vec::new(), wb_manifest: None, paired: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BonusConfig {
    pub top_fraction: f64,
    pub minor_units: u32,
}

impl Default for BonusConfig {
    fn default() -> Self {
        BonusConfig { top_fraction: 0.1, minor_units: drt_core::scoring::DEFAULT_BONUS_MINOR_UNITS }
    }
}

/// Every randomized step has its own seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub blocks: u64,
    pub catch: u64,
    pub practice: u64,
    pub digits: u64,
    pub sessions: u64,
    pub simulation: u64,
    pub noise: u64,
}

impl Seeds {
    /// Distinct seeds derived from one master value.
    pub fn derived(master: u64) -> Seeds {
        let s = |i| split_seed(master, i);
        Seeds { blocks: s(1), catch: s(2), practice: s(3), digits: s(4), sessions: s(5), simulation: s(6), noise: s(7) }
    }
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<StudyConfig> {
        let config: StudyConfig = serde_json::from_str(text).map_err(|e| HarnessError::at_line(e.line(), e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(HarnessError::invalid(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.study_id.is_empty() || !self.study_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(HarnessError::invalid("study_id must be non-empty and use only [A-Za-z0-9_-]"));
        }
        if self.instances_per_word == 0 || !self.instances_per_word.is_multiple_of(2) {
            return Err(HarnessError::invalid("instances_per_word must be a positive even number"));
        }
        if let ConditionSpec::External { command, .. } = &self.condition {
            let joined = command.join(" ");
            if command.is_empty() || !joined.contains("{input}") || !joined.contains("{output}") {
                return Err(HarnessError::invalid("external condition command needs {input} and {output} placeholders"));
            }
        }
        if !(0.0..=1.0).contains(&self.bonus.top_fraction) {
            return Err(HarnessError::invalid("bonus.top_fraction must lie in [0, 1]"));
        }
        let p = &self.protocol;
        if !(0.0..=1.0).contains(&p.catch_threshold) || !(0.0..=1.0).contains(&p.screening.min_approval_rate) {
            return Err(HarnessError::invalid("protocol thresholds must lie in [0, 1]"));
        }
        for c in &self.simulation.conditions {
            c.model.validate().map_err(HarnessError::invalid)?;
        }
        Ok(())
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let config = StudyConfig::parse(&read_to_string(path)?).map_err(|e| e.in_file(path))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, root })
    }
}

/// A config together with the directory its relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: StudyConfig,
    pub root: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output)
    }

    /// Replaces every seed by one derived from `master`.
    pub fn override_seeds(&mut self, master: u64) {
        self.config.seeds = Seeds::derived(master);
    }
}
