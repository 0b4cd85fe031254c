//! The single human-editable TOML configuration.
//!
//! Every section is optional and falls back to the documented defaults;
//! unknown keys anywhere are rejected. `schema_version` must be present.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compose::TumorSpec;
use crate::dataset::{ClassMix, GeneratorConfig, SamplingParams, SizeClass};
use crate::error::{Error, Result};
use crate::metrics::EvalParams;
use crate::placement::PlacementParams;
use crate::selection::StudyConfig;
use crate::vessels::VesselParams;
use crate::volume_io::PreprocessParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    /// Default seed when `--seed` is not given.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub vessels: VesselParams,
    #[serde(default)]
    pub placement: PlacementParams,
    #[serde(default)]
    pub sampling: SamplingParams,
    #[serde(default = "default_spec_retries")]
    pub spec_retries: usize,
    /// Size class table, referenced by name everywhere else.
    #[serde(default = "SizeClass::defaults")]
    pub classes: Vec<SizeClass>,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub validation: ValidationSection,
    #[serde(default)]
    pub stream: StreamSection,
    #[serde(default)]
    pub evaluation: EvalParams,
    #[serde(default)]
    pub preprocess: PreprocessParams,
    #[serde(default)]
    pub study: StudyConfig,
}

fn default_spec_retries() -> usize {
    GeneratorConfig::default().spec_retries
}

/// `synth`: either an explicit tumor or a class to sample from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub classes: Vec<String>,
    /// Explicit tumor; overrides `classes` and is inserted once.
    pub tumor: Option<TumorSpec>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            classes: vec!["medium".into()],
            tumor: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSection {
    pub classes: Vec<String>,
}

impl Default for ValidationSection {
    fn default() -> Self {
        ValidationSection {
            classes: vec!["small".into(), "medium".into(), "large".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamSection {
    pub class_mix: BTreeMap<String, f64>,
    pub tumors_per_item: [usize; 2],
}

impl Default for StreamSection {
    fn default() -> Self {
        StreamSection {
            class_mix: SizeClass::defaults().into_iter().map(|c| (c.name, 0.25)).collect(),
            tumors_per_item: [1, 3],
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        Config {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            vessels: VesselParams::default(),
            placement: PlacementParams::default(),
            sampling: SamplingParams::default(),
            spec_retries: default_spec_retries(),
            classes: SizeClass::defaults(),
            synth: SynthSection::default(),
            validation: ValidationSection::default(),
            stream: StreamSection::default(),
            evaluation: EvalParams::default(),
            preprocess: PreprocessParams::default(),
            study: StudyConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.vessels.validate().map_err(cfg_err)?;
        self.placement.validate().map_err(cfg_err)?;
        self.preprocess.validate().map_err(cfg_err)?;
        self.study.validate().map_err(cfg_err)?;
        for c in &self.classes {
            c.validate().map_err(cfg_err)?;
        }
        self.classes_named(&self.synth.classes)?;
        self.classes_named(&self.validation.classes)?;
        self.class_mix()?;
        let [lo, hi] = self.stream.tumors_per_item;
        if lo == 0 || hi < lo {
            return Err(Error::Config(format!("stream.tumors_per_item [{lo}, {hi}] is invalid")));
        }
        if let Some(t) = &self.synth.tumor {
            t.validate().map_err(cfg_err)?;
        }
        Ok(())
    }

    pub fn class(&self, name: &str) -> Result<SizeClass> {
        self.classes
            .iter()
            .find(|c| c.name == name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown size class {name:?}")))
    }

    pub fn classes_named(&self, names: &[String]) -> Result<Vec<SizeClass>> {
        names.iter().map(|n| self.class(n)).collect()
    }

    pub fn class_mix(&self) -> Result<ClassMix> {
        let entries = self
            .stream
            .class_mix
            .iter()
            .map(|(n, w)| Ok((self.class(n)?, *w)))
            .collect::<Result<Vec<_>>>()?;
        ClassMix::new(entries).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            vessels: self.vessels.clone(),
            placement: self.placement.clone(),
            sampling: self.sampling.clone(),
            spec_retries: self.spec_retries,
        }
    }
}
