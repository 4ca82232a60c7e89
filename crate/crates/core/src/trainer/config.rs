//! Flat `key = value` configuration covering training and the synthetic
//! generator.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::{stratified_split, Dataset, MissingPolicy, Split, SynthConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub missing_policy: MissingPolicy,
    pub val_frac: f64,
    pub test_frac: f64,
    /// 0 trains on one stratified split; `k >= 3` runs k-fold cross-validation.
    pub folds: usize,
    pub disable_udcl: bool,
    pub disable_spcl: bool,
    pub disable_attention: bool,
    pub point_alignment: bool,
    pub baseline: bool,
    /// Adapter output width.
    pub width: usize,
    /// Gaussian embedding width.
    pub emb_dim: usize,
    pub heads: usize,
    /// Channels of the common reconstruction space.
    pub latent_dim: usize,
    /// Frames of the common reconstruction space.
    pub frames: usize,
    pub flow_layers: usize,
    pub flow_hidden: usize,
    pub s_max: f64,
    pub refine_blocks: usize,
    pub third_block: bool,
    pub sim_shift: f64,
    pub spcl_tau: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            lambda: 10.0,
            gamma: 1.0,
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            missing_policy: MissingPolicy::Uniform7,
            val_frac: 0.15,
            test_frac: 0.15,
            folds: 0,
            disable_udcl: false,
            disable_spcl: false,
            disable_attention: false,
            point_alignment: false,
            baseline: false,
            width: 64,
            emb_dim: 16,
            heads: 2,
            latent_dim: 32,
            frames: 8,
            flow_layers: 4,
            flow_hidden: 64,
            s_max: 2.0,
            refine_blocks: 2,
            third_block: false,
            sim_shift: 0.0,
            spcl_tau: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (k, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return bad(format!("{k} must be a finite value >= 0, got {w}"));
            }
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.folds == 1 || self.folds == 2 {
            return bad("folds must be 0 or at least 3".into());
        }
        if !(self.spcl_tau > 0.0) {
            return bad("spcl_tau must be positive".into());
        }
        if self.latent_dim % 2 != 0 {
            return bad(format!("latent_dim must be even, got {}", self.latent_dim));
        }
        if self.heads == 0 || self.width % self.heads != 0 || self.latent_dim % self.heads != 0 {
            return bad("width and latent_dim must be divisible by heads".into());
        }
        Ok(())
    }

    /// Weights after applying the ablation switches.
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: if self.disable_udcl || self.baseline {
                0.0
            } else {
                self.alpha
            },
            beta: if self.disable_spcl || self.baseline {
                0.0
            } else {
                self.beta
            },
            lambda: if self.baseline { 0.0 } else { self.lambda },
            gamma: if self.baseline { 0.0 } else { self.gamma },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
}

/// Everything one config file can set.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub data_seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            data_seed: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {v:?} for {key}"))),
    }
}

impl Config {
    /// The stratified train/val/test split this config trains and reports on.
    pub fn split(&self, dataset: &Dataset) -> Result<Split> {
        stratified_split(
            dataset,
            self.train.val_frac,
            self.train.test_frac,
            self.data_seed,
        )
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "alpha" => t.alpha = parse_num(key, v)?,
            "beta" => t.beta = parse_num(key, v)?,
            "lambda" => t.lambda = parse_num(key, v)?,
            "gamma" => t.gamma = parse_num(key, v)?,
            "learning_rate" => t.learning_rate = parse_num(key, v)?,
            "batch_size" => t.batch_size = parse_num(key, v)?,
            "epochs" => t.epochs = parse_num(key, v)?,
            "seed" => t.seed = parse_num(key, v)?,
            "missing_policy" => t.missing_policy = MissingPolicy::parse(v)?,
            "val_frac" => t.val_frac = parse_num(key, v)?,
            "test_frac" => t.test_frac = parse_num(key, v)?,
            "folds" => t.folds = parse_num(key, v)?,
            "disable_udcl" => t.disable_udcl = parse_bool(key, v)?,
            "disable_spcl" => t.disable_spcl = parse_bool(key, v)?,
            "disable_attention" => t.disable_attention = parse_bool(key, v)?,
            "point_alignment" => t.point_alignment = parse_bool(key, v)?,
            "baseline" => t.baseline = parse_bool(key, v)?,
            "width" => t.width = parse_num(key, v)?,
            "emb_dim" => t.emb_dim = parse_num(key, v)?,
            "heads" => t.heads = parse_num(key, v)?,
            "latent_dim" => t.latent_dim = parse_num(key, v)?,
            "frames" => t.frames = parse_num(key, v)?,
            "flow_layers" => t.flow_layers = parse_num(key, v)?,
            "flow_hidden" => t.flow_hidden = parse_num(key, v)?,
            "s_max" => t.s_max = parse_num(key, v)?,
            "refine_blocks" => t.refine_blocks = parse_num(key, v)?,
            "third_block" => t.third_block = parse_bool(key, v)?,
            "sim_shift" => t.sim_shift = parse_num(key, v)?,
            "spcl_tau" => t.spcl_tau = parse_num(key, v)?,
            "num_classes" => s.num_classes = parse_num(key, v)?,
            "n_per_class" => s.n_per_class = parse_num(key, v)?,
            "dim_s" => s.dims[0] = parse_num(key, v)?,
            "dim_v" => s.dims[1] = parse_num(key, v)?,
            "dim_t" => s.dims[2] = parse_num(key, v)?,
            "len_s" => s.lengths[0] = parse_num(key, v)?,
            "len_v" => s.lengths[1] = parse_num(key, v)?,
            "len_t" => s.lengths[2] = parse_num(key, v)?,
            "semantic_dim" => s.semantic_dim = parse_num(key, v)?,
            "emotion_dim" => s.emotion_dim = parse_num(key, v)?,
            "emotion_jitter" => s.emotion_jitter = parse_num(key, v)?,
            "noise_std" => s.noise_std = parse_num(key, v)?,
            "strength_s" => s.strengths[0] = parse_num(key, v)?,
            "strength_v" => s.strengths[1] = parse_num(key, v)?,
            "strength_t" => s.strengths[2] = parse_num(key, v)?,
            "data_seed" => self.data_seed = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {k:?}",
                    n + 1
                )));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key in a fixed order. Parsing the output gives back `self`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let s = &self.synth;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("alpha", t.alpha.to_string());
        kv("beta", t.beta.to_string());
        kv("lambda", t.lambda.to_string());
        kv("gamma", t.gamma.to_string());
        kv("learning_rate", t.learning_rate.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("epochs", t.epochs.to_string());
        kv("seed", t.seed.to_string());
        kv("missing_policy", t.missing_policy.to_string());
        kv("val_frac", t.val_frac.to_string());
        kv("test_frac", t.test_frac.to_string());
        kv("folds", t.folds.to_string());
        kv("disable_udcl", t.disable_udcl.to_string());
        kv("disable_spcl", t.disable_spcl.to_string());
        kv("disable_attention", t.disable_attention.to_string());
        kv("point_alignment", t.point_alignment.to_string());
        kv("baseline", t.baseline.to_string());
        kv("width", t.width.to_string());
        kv("emb_dim", t.emb_dim.to_string());
        kv("heads", t.heads.to_string());
        kv("latent_dim", t.latent_dim.to_string());
        kv("frames", t.frames.to_string());
        kv("flow_layers", t.flow_layers.to_string());
        kv("flow_hidden", t.flow_hidden.to_string());
        kv("s_max", t.s_max.to_string());
        kv("refine_blocks", t.refine_blocks.to_string());
        kv("third_block", t.third_block.to_string());
        kv("sim_shift", t.sim_shift.to_string());
        kv("spcl_tau", t.spcl_tau.to_string());
        kv("num_classes", s.num_classes.to_string());
        kv("n_per_class", s.n_per_class.to_string());
        for (i, m) in ["s", "v", "t"].iter().enumerate() {
            kv(&format!("dim_{m}"), s.dims[i].to_string());
        }
        for (i, m) in ["s", "v", "t"].iter().enumerate() {
            kv(&format!("len_{m}"), s.lengths[i].to_string());
        }
        kv("semantic_dim", s.semantic_dim.to_string());
        kv("emotion_dim", s.emotion_dim.to_string());
        kv("emotion_jitter", s.emotion_jitter.to_string());
        kv("noise_std", s.noise_std.to_string());
        for (i, m) in ["s", "v", "t"].iter().enumerate() {
            kv(&format!("strength_{m}"), s.strengths[i].to_string());
        }
        kv("data_seed", self.data_seed.to_string());
        out
    }

    /// SHA-256 of [`Config::to_text`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
