use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::signal::{read_container, write_container, Container, NamedTensor, TensorData};

use super::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    DpNeuronet,
    Physiome,
    LinearHead,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::DpNeuronet => "dp_neuronet",
            Stage::Physiome => "physiome",
            Stage::LinearHead => "linear_head",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Stage::DpNeuronet, Stage::Physiome, Stage::LinearHead]
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Corrupt(format!("unknown checkpoint stage {s:?}")))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const STAGE: &str = "meta/stage";
const CONFIG: &str = "meta/run_config_json";
const FOLD: &str = "meta/fold";
const TRAINABLE: &str = "meta/trainable";
const PARAM_PREFIX: &str = "param/";

/// Named parameters plus the run config and pipeline stage that produced them.
#[derive(Clone, Debug)]
pub struct CheckpointBundle {
    pub stage: Stage,
    pub config: RunConfig,
    pub fold: usize,
    pub params: ParamStore,
}

fn bytes(name: &str, data: Vec<u8>) -> NamedTensor {
    NamedTensor::new(name, vec![data.len()], TensorData::U8(data)).expect("shape matches")
}

impl CheckpointBundle {
    pub fn to_container(&self) -> Container {
        let mut c = Container { n_modalities: self.config.n_modalities() as u32, n_samples: 0, tensors: Vec::new() };
        c.push(bytes(STAGE, self.stage.as_str().as_bytes().to_vec()));
        c.push(bytes(CONFIG, self.config.to_json().into_bytes()));
        c.push(NamedTensor::new(FOLD, vec![1], TensorData::I64(vec![self.fold as i64])).expect("scalar"));
        let flags: Vec<u8> = self.params.iter().map(|(_, p)| p.trainable as u8).collect();
        c.push(bytes(TRAINABLE, flags));
        for (name, p) in self.params.iter() {
            let t = NamedTensor::new(format!("{PARAM_PREFIX}{name}"), p.value.shape().to_vec(), TensorData::F64(p.value.data().to_vec()))
                .expect("shape matches");
            c.push(t);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let text = |name: &str| -> Result<String> {
            String::from_utf8(c.get(name)?.as_u8()?.to_vec()).map_err(|_| Error::Corrupt(format!("{name} is not UTF-8")))
        };
        let stage = Stage::parse(&text(STAGE)?)?;
        let config = RunConfig::from_json(&text(CONFIG)?)?;
        let fold = *c.get(FOLD)?.as_i64()?.first().ok_or_else(|| Error::Corrupt("empty fold tag".into()))? as usize;
        let flags = c.get(TRAINABLE)?.as_u8()?;
        let mut params = ParamStore::new();
        let tensors: Vec<&NamedTensor> = c.tensors.iter().filter(|t| t.name.starts_with(PARAM_PREFIX)).collect();
        if tensors.len() != flags.len() {
            return Err(Error::Corrupt("trainable flags do not match the parameter count".into()));
        }
        for (t, &flag) in tensors.into_iter().zip(flags) {
            let name = &t.name[PARAM_PREFIX.len()..];
            params.insert(name, Tensor::new(t.shape.clone(), t.as_f64()?.to_vec()), flag != 0);
        }
        Ok(Self { stage, config, fold, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_container(path, &self.to_container())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&read_container(path)?)
    }

    /// Loads and checks the stage tag.
    pub fn load_stage(path: impl AsRef<Path>, expected: Stage) -> Result<Self> {
        let b = Self::load(path)?;
        b.expect_stage(expected)?;
        Ok(b)
    }

    pub fn expect_stage(&self, expected: Stage) -> Result<()> {
        if self.stage != expected {
            return Err(Error::Stage { expected: expected.to_string(), found: self.stage.to_string() });
        }
        Ok(())
    }

    /// SHA-256 of the serialized bundle.
    pub fn digest(&self) -> String {
        hex_digest(&self.to_container().to_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
