//! `key = value` run configuration.
//!
//! Keys are the snake_case field names of [`TrainConfig`] and
//! [`SynthConfig`], plus the feature-extraction keys `rate_hz`, `window_s`
//! and `stride_s`. `seed` sets both the training and the generator seed.
//! Unknown or repeated keys are errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optim::OptimizerKind;
use crate::synth::SynthConfig;
use crate::trainer::{Mode, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    /// Sampling rate of raw CSV input.
    pub rate_hz: Option<f64>,
    pub window_s: f64,
    pub stride_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            rate_hz: None,
            window_s: 1.0,
            stride_s: 1.0,
        }
    }
}

pub const KEYS: &[&str] = &[
    "mode",
    "lr",
    "epochs",
    "batch_source",
    "batch_target",
    "q",
    "subdomain_warmup_epochs",
    "pseudo_refresh_every",
    "grl_lambda",
    "grl_ramp",
    "ae_pretrain_epochs",
    "ae_lr",
    "ae_optimizer",
    "optimizer",
    "seed",
    "num_subjects",
    "num_classes",
    "samples_per_class",
    "feature_dims",
    "class_separation",
    "subject_shift",
    "noise_sigma",
    "rate_hz",
    "window_s",
    "stride_s",
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{v}`"))),
    }
}

fn optimizer(key: &str, v: &str) -> Result<OptimizerKind> {
    match v {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" => Ok(OptimizerKind::Sgd),
        _ => Err(Error::config(key, format!("expected adam or sgd, got `{v}`"))),
    }
}

fn optimizer_name(k: OptimizerKind) -> &'static str {
    match k {
        OptimizerKind::Adam => "adam",
        OptimizerKind::Sgd => "sgd",
    }
}

fn dims(key: &str, v: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = v.split([',', 'x']).map(str::trim).collect();
    match parts.as_slice() {
        [h, w, b] => Ok((num(key, h)?, num(key, w)?, num(key, b)?)),
        _ => Err(Error::config(key, format!("expected three dims like `4,4,5`, got `{v}`"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').map(|(k, v)| (k.trim(), v.trim())).ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, format!("repeated on line {}", i + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "mode" => t.mode = Mode::parse(v).ok_or_else(|| Error::config(key, format!("unknown mode `{v}`")))?,
            "lr" => t.lr = num(key, v)?,
            "epochs" => t.epochs = num(key, v)?,
            "batch_source" => t.batch_source = num(key, v)?,
            "batch_target" => t.batch_target = num(key, v)?,
            "q" => t.q = num(key, v)?,
            "subdomain_warmup_epochs" => t.subdomain_warmup_epochs = num(key, v)?,
            "pseudo_refresh_every" => t.pseudo_refresh_every = num(key, v)?,
            "grl_lambda" => t.grl_lambda = num(key, v)?,
            "grl_ramp" => t.grl_ramp = boolean(key, v)?,
            "ae_pretrain_epochs" => t.ae_pretrain_epochs = num(key, v)?,
            "ae_lr" => t.ae_lr = num(key, v)?,
            "ae_optimizer" => t.ae_optimizer = optimizer(key, v)?,
            "optimizer" => t.optimizer = optimizer(key, v)?,
            "seed" => {
                t.seed = num(key, v)?;
                s.seed = t.seed;
            }
            "num_subjects" => s.num_subjects = num(key, v)?,
            "num_classes" => s.num_classes = num(key, v)?,
            "samples_per_class" => s.samples_per_class = num(key, v)?,
            "feature_dims" => s.feature_dims = dims(key, v)?,
            "class_separation" => s.class_separation = num(key, v)?,
            "subject_shift" => s.subject_shift = num(key, v)?,
            "noise_sigma" => s.noise_sigma = num(key, v)?,
            "rate_hz" => self.rate_hz = Some(num(key, v)?),
            "window_s" => self.window_s = num(key, v)?,
            "stride_s" => self.stride_s = num(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate()?;
        if let Some(r) = self.rate_hz {
            if !(r > 0.0) {
                return Err(Error::config("rate_hz", "must be positive"));
            }
        }
        if !(self.window_s > 0.0) {
            return Err(Error::config("window_s", "must be positive"));
        }
        if !(self.stride_s > 0.0) {
            return Err(Error::config("stride_s", "must be positive"));
        }
        Ok(())
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let (t, s) = (&self.train, &self.synth);
        let (h, w, b) = s.feature_dims;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("mode", t.mode.name().into());
        kv("lr", t.lr.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_source", t.batch_source.to_string());
        kv("batch_target", t.batch_target.to_string());
        kv("q", t.q.to_string());
        kv("subdomain_warmup_epochs", t.subdomain_warmup_epochs.to_string());
        kv("pseudo_refresh_every", t.pseudo_refresh_every.to_string());
        kv("grl_lambda", t.grl_lambda.to_string());
        kv("grl_ramp", t.grl_ramp.to_string());
        kv("ae_pretrain_epochs", t.ae_pretrain_epochs.to_string());
        kv("ae_lr", t.ae_lr.to_string());
        kv("ae_optimizer", optimizer_name(t.ae_optimizer).into());
        kv("optimizer", optimizer_name(t.optimizer).into());
        kv("seed", t.seed.to_string());
        kv("num_subjects", s.num_subjects.to_string());
        kv("num_classes", s.num_classes.to_string());
        kv("samples_per_class", s.samples_per_class.to_string());
        kv("feature_dims", format!("{h},{w},{b}"));
        kv("class_separation", s.class_separation.to_string());
        kv("subject_shift", s.subject_shift.to_string());
        kv("noise_sigma", s.noise_sigma.to_string());
        if let Some(r) = self.rate_hz {
            kv("rate_hz", r.to_string());
        }
        kv("window_s", self.window_s.to_string());
        kv("stride_s", self.stride_s.to_string());
        out
    }
}
