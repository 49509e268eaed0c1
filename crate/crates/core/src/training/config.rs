use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::dataset::DEFAULT_EV_SET;
use crate::error::{Error, Result};
use crate::megnet::MegnetConfig;
use crate::regnet::RegnetConfig;
use crate::tensor::Real;

use super::adam::AdamConfig;
use super::losses::CHARBONNIER_EPS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Megnet,
    Regnet,
    Cotrain,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Megnet => "megnet",
            Stage::Regnet => "regnet",
            Stage::Cotrain => "cotrain",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "megnet" => Ok(Stage::Megnet),
            "regnet" => Ok(Stage::Regnet),
            "cotrain" => Ok(Stage::Cotrain),
            _ => Err(Error::InvalidArgument(format!(
                "unknown stage {s:?} (expected megnet, regnet or cotrain)"
            ))),
        }
    }
}

/// Network widths and working resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// 64 px inputs, 32-channel tokens.
    Desk,
    /// 512 px inputs, 192-channel tokens.
    Full,
    /// 16 px inputs with tiny widths, for tests.
    Micro,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
            Profile::Micro => "micro",
        }
    }

    pub fn megnet(self) -> MegnetConfig {
        match self {
            Profile::Micro => MegnetConfig::micro(),
            _ => MegnetConfig::default(),
        }
    }

    pub fn regnet(self) -> RegnetConfig {
        match self {
            Profile::Desk => RegnetConfig::desk(),
            Profile::Full => RegnetConfig::full(),
            Profile::Micro => RegnetConfig::micro(),
        }
    }

    /// Side length images are resized to before correction.
    pub fn image_size(self) -> usize {
        match self {
            Profile::Desk => 64,
            Profile::Full => 512,
            Profile::Micro => 16,
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            "micro" => Ok(Profile::Micro),
            _ => Err(Error::InvalidArgument(format!(
                "unknown profile {s:?} (expected desk, full or micro)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub batch_size: usize,
    pub patch_size: usize,
    pub epochs: usize,
    pub learning_rate: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub adam_eps: Real,
    pub seed: u64,
    pub profile: Profile,
    pub charbonnier_epsilon: Real,
    pub clip_norm: Real,
    /// Validate every this many epochs (and after the last).
    pub val_every: usize,
    /// Id-hash bucket held out of the training split for validation.
    pub val_bucket: u64,
    /// Generator pairs drawn per scene per epoch.
    pub samples_per_scene: usize,
    /// Generated exposures, not including the input's 0.
    pub ev_set: Vec<Real>,
    /// Exposure shifts sampled when training the generator.
    pub megnet_deltas: Vec<Real>,
}

impl TrainConfig {
    /// Desk-scale defaults for `stage`.
    pub fn for_stage(stage: Stage) -> Self {
        let (batch_size, patch_size, epochs, samples_per_scene) = match stage {
            Stage::Megnet => (16, 32, 120, 4),
            Stage::Regnet => (4, 64, 40, 1),
            Stage::Cotrain => (4, 64, 15, 1),
        };
        TrainConfig {
            stage,
            batch_size,
            patch_size,
            epochs,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            profile: Profile::Desk,
            charbonnier_epsilon: CHARBONNIER_EPS,
            clip_norm: 5.0,
            val_every: 5,
            val_bucket: 1,
            samples_per_scene,
            ev_set: DEFAULT_EV_SET.iter().copied().filter(|&e| e != 0.0).collect(),
            megnet_deltas: vec![-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5],
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.charbonnier_epsilon > 0.0) {
            return bad(format!(
                "charbonnier_epsilon must be positive, got {}",
                self.charbonnier_epsilon
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if self.batch_size == 0 || self.patch_size == 0 || self.samples_per_scene == 0 {
            return bad("batch_size, patch_size and samples_per_scene must be positive".into());
        }
        if self.val_every == 0 {
            return bad("val_every must be positive".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.megnet_deltas.is_empty() {
            return bad("megnet_deltas is empty".into());
        }
        crate::megnet::stack_evs(&self.ev_set)?;
        Ok(())
    }

    /// `key = value` lines, one per field, in a fixed order.
    pub fn to_text(&self) -> String {
        let list = |v: &[Real]| v.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        for (k, v) in [
            ("stage", self.stage.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("seed", self.seed.to_string()),
            ("profile", self.profile.as_str().to_string()),
            ("charbonnier_epsilon", self.charbonnier_epsilon.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("val_every", self.val_every.to_string()),
            ("val_bucket", self.val_bucket.to_string()),
            ("samples_per_scene", self.samples_per_scene.to_string()),
            ("ev_set", list(&self.ev_set)),
            ("megnet_deltas", list(&self.megnet_deltas)),
        ] {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Overrides fields from `pairs`; unknown keys are an error.
    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse {v:?}")))
        }
        let v = value.trim();
        match key {
            "stage" => self.stage = v.parse()?,
            "batch_size" => self.batch_size = num(key, v)?,
            "patch_size" => self.patch_size = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "learning_rate" | "lr" => self.learning_rate = num(key, v)?,
            "beta1" => self.beta1 = num(key, v)?,
            "beta2" => self.beta2 = num(key, v)?,
            "adam_eps" => self.adam_eps = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "profile" => self.profile = v.parse()?,
            "charbonnier_epsilon" => self.charbonnier_epsilon = num(key, v)?,
            "clip_norm" => self.clip_norm = num(key, v)?,
            "val_every" => self.val_every = num(key, v)?,
            "val_bucket" => self.val_bucket = num(key, v)?,
            "samples_per_scene" => self.samples_per_scene = num(key, v)?,
            "ev_set" => self.ev_set = parse_list(key, v)?,
            "megnet_deltas" => self.megnet_deltas = parse_list(key, v)?,
            _ => return Err(Error::InvalidArgument(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_key_values(text)?;
        let stage = pairs
            .get("stage")
            .ok_or_else(|| Error::Format("training config lacks a stage".into()))?
            .parse()?;
        let mut cfg = Self::for_stage(stage);
        cfg.apply(&pairs)?;
        Ok(cfg)
    }
}

/// Comma-separated reals; empty text is an empty list.
pub fn parse_list(key: &str, v: &str) -> Result<Vec<Real>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse {s:?}")))
        })
        .collect()
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped;
/// a repeated key keeps its last value.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("config line {}: expected `key = value`", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Format(format!("config line {}: empty key", n + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        for stage in [Stage::Megnet, Stage::Regnet, Stage::Cotrain] {
            let mut c = TrainConfig::for_stage(stage);
            c.learning_rate = 3.5e-4;
            c.ev_set = vec![-1.5, 1.5];
            assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
        }
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = TrainConfig::for_stage(Stage::Megnet);
        assert!(c.set("learning_rate", "abc").is_err());
        assert!(c.set("bogus", "1").is_err());
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::for_stage(Stage::Megnet);
        c.charbonnier_epsilon = -1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::for_stage(Stage::Megnet);
        c.ev_set = vec![1.0, 0.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn key_values_with_comments() {
        let kv = parse_key_values("# header\na = 1\n\nb=two # trailing\na = 3\n").unwrap();
        assert_eq!(kv["a"], "3");
        assert_eq!(kv["b"], "two");
        assert!(parse_key_values("novalue\n").is_err());
    }
}
