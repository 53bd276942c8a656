//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comments and blank lines are ignored
//! grid.x = 48
//! model.arch = rsp
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rsp_core::model::{Architecture, ModelConfig};
use rsp_core::projection::GridGeometry;
use rsp_core::sim::SimConfig;
use rsp_core::train::TrainConfig;
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};

const REQUIRED: &[&str] = &[
    "grid.x",
    "grid.y",
    "grid.resolution_m",
    "grid.frame_rate_hz",
    "model.arch",
    "model.s",
    "model.f",
    "model.m",
    "model.d_h",
    "sim.objects",
    "sim.v_max",
    "sim.p_drop",
    "sim.p_fp",
    "seed",
];

const OPTIONAL: &[&str] = &[
    "model.head_width",
    "model.aspp_branch",
    "model.aspp_width",
    "model.aspp_rates",
    "model.aspp_blocks",
    "model.pyramid_m",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.epochs",
    "train.seq_len",
    "train.clip_norm",
    "loss.heteroscedastic",
    "loss.ce_weight",
    "loss.velocity_weight",
    "loss.aux_weight",
    "loss.refined_weight",
    "sim.obstacles",
    "sim.static_fraction",
    "sim.rays",
    "sim.seq_len",
    "data.heldout_every",
];

/// Everything one experiment needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub seed: u64,
    /// Every `heldout_every`-th sequence is held out for evaluation.
    pub heldout_every: usize,
    entries: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        text.parse()
    }

    /// The parsed entries in canonical form, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 over the entries that determine generated data.
    pub fn data_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.entries {
            if k.starts_with("grid.") || k.starts_with("sim.") || k == "seed" || k == "model.s" {
                h.update(format!("{k}={v}\n"));
            }
        }
        format!("{:x}", h.finalize())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Replaces one entry and re-derives the typed configuration.
    pub fn with(&self, key: &str, value: &str) -> Result<Self> {
        let mut e = self.entries.clone();
        e.insert(key.into(), value.into());
        Self::from_entries(e)
    }

    pub fn geometry(&self) -> GridGeometry {
        self.model.geom
    }

    fn from_entries(entries: BTreeMap<String, String>) -> Result<Self> {
        for k in entries.keys() {
            if !REQUIRED.contains(&k.as_str()) && !OPTIONAL.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
        }
        let r = Reader(&entries);
        let geom = GridGeometry::new(
            r.req("grid.x")?,
            r.req("grid.y")?,
            r.req("grid.resolution_m")?,
            r.req("grid.frame_rate_hz")?,
        )?;
        let arch = Architecture::parse(r.raw("model.arch")?)?;
        let heteroscedastic: bool = r.opt("loss.heteroscedastic", false)?;

        let mut model = ModelConfig::new(arch, geom);
        model.s = r.req("model.s")?;
        model.f = r.req("model.f")?;
        model.m = r.req("model.m")?;
        model.d_h = r.req("model.d_h")?;
        model.head_width = r.opt("model.head_width", model.head_width)?;
        model.aspp_branch = r.opt("model.aspp_branch", model.aspp_branch)?;
        model.aspp_width = r.opt("model.aspp_width", model.aspp_width)?;
        model.aspp_blocks = r.opt("model.aspp_blocks", model.aspp_blocks)?;
        model.pyramid_m = r.opt("model.pyramid_m", model.pyramid_m)?;
        if let Some(rates) = entries.get("model.aspp_rates") {
            model.aspp_rates = rates
                .split(',')
                .map(|s| parse_value("model.aspp_rates", s.trim()))
                .collect::<Result<_>>()?;
        }
        model.heteroscedastic = heteroscedastic;
        model.validate()?;

        let defaults = SimConfig::default();
        let sim = SimConfig {
            objects: r.req("sim.objects")?,
            obstacles: r.opt("sim.obstacles", defaults.obstacles)?,
            v_max: r.req("sim.v_max")?,
            static_fraction: r.opt("sim.static_fraction", defaults.static_fraction)?,
            p_drop: r.req("sim.p_drop")?,
            p_fp: r.req("sim.p_fp")?,
            rays: r.opt("sim.rays", defaults.rays)?,
            seq_len: r.opt("sim.seq_len", defaults.seq_len)?,
            channels: model.s,
        };
        sim.validate()?;

        let seed: u64 = r.req("seed")?;
        let d = TrainConfig::default();
        let mut train = TrainConfig {
            epochs: r.opt("train.epochs", d.epochs)?,
            seq_len: r.opt("train.seq_len", d.seq_len)?,
            ce_weight: r.opt("loss.ce_weight", d.ce_weight)?,
            velocity_weight: r.opt("loss.velocity_weight", d.velocity_weight)?,
            aux_weight: r.opt("loss.aux_weight", d.aux_weight)?,
            refined_weight: r.opt("loss.refined_weight", d.refined_weight)?,
            heteroscedastic,
            clip_norm: None,
            seed,
            ..d
        };
        train.adam.lr = r.opt("train.lr", d.adam.lr)?;
        train.adam.beta1 = r.opt("train.beta1", d.adam.beta1)?;
        train.adam.beta2 = r.opt("train.beta2", d.adam.beta2)?;
        train.adam.eps = r.opt("train.eps", d.adam.eps)?;
        let clip: f64 = r.opt("train.clip_norm", 0.0)?;
        if clip > 0.0 {
            train.clip_norm = Some(clip);
        }
        if train.seq_len == 0 || !(train.adam.lr > 0.0) {
            return Err(Error::Config("train.seq_len and train.lr must be positive".into()));
        }
        let heldout_every = r.opt("data.heldout_every", 5)?;
        if heldout_every < 2 {
            return Err(Error::Config("data.heldout_every must be at least 2".into()));
        }
        Ok(Self {
            model,
            sim,
            train,
            seed,
            heldout_every,
            entries,
        })
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: "expected `key = value`".into(),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: "empty key or value".into(),
                });
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: format!("duplicate key `{k}`"),
                });
            }
        }
        for k in REQUIRED {
            if !entries.contains_key(*k) {
                return Err(Error::Config(format!("missing required key `{k}`")));
            }
        }
        Self::from_entries(entries)
    }
}

fn parse_value<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

struct Reader<'a>(&'a BTreeMap<String, String>);

impl Reader<'_> {
    fn raw(&self, key: &str) -> Result<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn req<V: FromStr>(&self, key: &str) -> Result<V> {
        parse_value(key, self.raw(key)?)
    }

    fn opt<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        match self.0.get(key) {
            Some(v) => parse_value(key, v),
            None => Ok(default),
        }
    }
}
