use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dp_neuronet::DpTrainConfig;
use crate::error::{Error, Result};
use crate::evalkit::{ProbeConfig, N_FOLDS};
use crate::neuronet::NeuroNetConfig;
use crate::physiome::{PhysioMEConfig, PhysioMETrainConfig, Placeholder, RestorationStrategy};
use crate::signal::{frame_count, FrameSpec, SyntheticConfig};

pub const PRESETS: [(&str, &str); 3] = [
    ("synthetic", include_str!("../../presets/synthetic.toml")),
    ("sleep", include_str!("../../presets/sleep.toml")),
    ("vital", include_str!("../../presets/vital.toml")),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub modality_names: Vec<String>,
    pub frame_sec: f64,
    pub step_sec: f64,
    /// Zero-phase band-pass `[low, high]` in Hz applied before framing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandpass_hz: Option<[f64; 2]>,
    pub synthetic: SyntheticConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub strategy: RestorationStrategy,
    /// How many of the five folds to train and evaluate.
    pub folds: usize,
}

/// Every setting of a run. Serialized next to each artifact it produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub output_dir: String,
    pub data: DataConfig,
    pub backbone: NeuroNetConfig,
    pub dp: DpTrainConfig,
    pub physiome: PhysioMEConfig,
    pub physiome_train: PhysioMETrainConfig,
    pub probe: ProbeConfig,
    pub eval: EvalConfig,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| Error::Config(e.to_string().replace('\n', " ")))
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
        Self::from_toml(text)
    }

    /// Parses a config. A top-level `preset = "<name>"` starts from that
    /// preset and applies the remaining keys as overrides, table by table.
    pub fn from_toml(text: &str) -> Result<Self> {
        let over = parse_table(text)?;
        let table = match over.get("preset").and_then(|v| v.as_str()) {
            Some(name) => {
                let base_text = PRESETS
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, t)| *t)
                    .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
                let mut base = parse_table(base_text)?;
                merge(&mut base, over);
                base
            }
            None => over,
        };
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A preset name or a path to a TOML file.
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if !path.exists() {
            if PRESETS.iter().any(|(n, _)| *n == spec) {
                return Self::preset(spec);
            }
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            return Err(Error::Config(format!("{spec:?} is neither a config file nor a preset ({})", names.join(", "))));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("embedded config: {e}")))
    }

    /// Frame and step lengths in samples.
    pub fn frame_samples(&self) -> Result<(usize, usize)> {
        FrameSpec::new(self.data.frame_sec, self.data.step_sec)?.in_samples(self.data.synthetic.sample_rate_hz)
    }

    pub fn n_modalities(&self) -> usize {
        self.data.modality_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let syn = &self.data.synthetic;
        syn.validate()?;
        if self.data.modality_names.len() != syn.modalities {
            return Err(Error::Config(format!(
                "{} modality names for {} modalities",
                self.data.modality_names.len(),
                syn.modalities
            )));
        }
        if !(1..=6).contains(&syn.modalities) {
            return Err(Error::Config("between 1 and 6 modalities are supported".into()));
        }
        if let Some([lo, hi]) = self.data.bandpass_hz {
            if !(lo >= 0.0 && hi > lo) {
                return Err(Error::Config(format!("band-pass [{lo}, {hi}] is not a valid band")));
            }
        }
        let (f, s) = self.frame_samples().map_err(|e| Error::Config(e.to_string()))?;
        let len = (syn.window_sec * syn.sample_rate_hz).round() as usize;
        frame_count(len, f, s).map_err(|e| Error::Config(e.to_string()))?;
        self.backbone.validate()?;
        self.dp.validate()?;
        self.physiome.validate()?;
        self.physiome_train.validate()?;
        self.probe.validate()?;
        if !(1..=N_FOLDS).contains(&self.eval.folds) {
            return Err(Error::Config(format!("eval.folds must be in 1..={N_FOLDS}")));
        }
        Ok(())
    }

    /// The same run with PhysioME trained for `placeholder`.
    pub fn with_placeholder(&self, placeholder: Placeholder) -> RunConfig {
        let mut cfg = self.clone();
        cfg.physiome.placeholder = placeholder;
        cfg
    }
}
