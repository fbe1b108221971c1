//! Flat `key=value` run configuration.
//!
//! A config file holds one `key=value` pair per line; blank lines and lines
//! starting with `#` are ignored. Later assignments override earlier ones,
//! and command-line overrides are applied after the file. Unknown keys are
//! rejected. [`RunConfig::to_text`] writes every key, so its output parses
//! back to the same configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datagen::SyntheticSpec;
use crate::error::{Error, Result};
use crate::hypergraph::NodeHomophily;
use crate::io::read_text;
use crate::objectives::Reconstruction;
use crate::pipeline::{ContrastOn, Mode, ProbeConfig, TrainConfig};

/// Every recognized key, in the order written by [`RunConfig::to_text`].
pub const KEYS: &[&str] = &[
    "data",
    "data_seed",
    "num_classes",
    "nodes_per_class",
    "edges_per_class",
    "edge_size",
    "majority_count",
    "feature_dim",
    "sigma",
    "homophily",
    "mode",
    "seed",
    "alpha",
    "lambda",
    "tau",
    "hard",
    "recon",
    "contrast_on",
    "hidden",
    "heads",
    "head_dim",
    "layers",
    "latent_dim",
    "vba_hidden",
    "proj_dim",
    "lr",
    "weight_decay",
    "epochs",
    "num_views",
    "p_mask",
    "p_pert",
    "p_drop_edge",
    "p_drop_node",
    "aug_noise_std",
    "member_removal_fraction",
    "split",
    "select_every",
    "probe_hidden",
    "probe_epochs",
    "probe_lr",
    "probe_weight_decay",
    "repeats",
    "checkpoint",
    "embeddings",
];

/// Everything a command needs, resolved from defaults, a config file and
/// overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Dataset directory or manifest. When absent, commands that need data
    /// generate the synthetic benchmark from `synthetic`.
    pub data: Option<PathBuf>,
    /// Generator settings; `synthetic.seed` is the `data_seed` key.
    pub synthetic: SyntheticSpec,
    pub homophily: NodeHomophily,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    /// Number of consecutive seeds, starting at `seed`, in an experiment.
    pub repeats: usize,
    pub checkpoint: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            synthetic: SyntheticSpec::default(),
            homophily: NodeHomophily::default(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            repeats: 5,
            checkpoint: None,
            embeddings: None,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got `{value}`"
        ))),
    }
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or(String::new(), |p| p.display().to_string())
}

impl RunConfig {
    /// Parses `text` on top of the defaults.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text, origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::parse(&read_text(path)?, path)
    }

    /// Applies the assignments in `text` in order.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply_override(line)
                .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let e = &mut t.encoder;
        let s = &mut self.synthetic;
        let p = &mut self.probe;
        match key {
            "data" => self.data = path(value),
            "data_seed" => s.seed = num(key, value)?,
            "num_classes" => s.num_classes = num(key, value)?,
            "nodes_per_class" => s.nodes_per_class = num(key, value)?,
            "edges_per_class" => s.edges_per_class = num(key, value)?,
            "edge_size" => s.edge_size = num(key, value)?,
            "majority_count" => s.majority_count = num(key, value)?,
            "feature_dim" => s.feature_dim = num(key, value)?,
            "sigma" => s.noise_std = num(key, value)?,
            "homophily" => {
                self.homophily = match value {
                    "edge_averaged" => NodeHomophily::EdgeAveraged,
                    "co_members" => NodeHomophily::CoMembers,
                    _ => return Err(Error::Config(format!("homophily: unknown rule `{value}`"))),
                }
            }
            "mode" => {
                t.mode = match value {
                    "supervised" => Mode::Supervised,
                    "ssl" => Mode::Ssl,
                    _ => {
                        return Err(Error::Config(format!(
                            "mode: expected supervised or ssl, got `{value}`"
                        )))
                    }
                }
            }
            "seed" => {
                t.seed = num(key, value)?;
                p.seed = t.seed;
            }
            "alpha" => t.alpha = num(key, value)?,
            "lambda" => t.lambda = num(key, value)?,
            "tau" => t.gumbel.tau = num(key, value)?,
            "hard" => t.gumbel.hard = flag(key, value)?,
            "recon" => {
                t.recon = match value {
                    "hard" => Reconstruction::Hard,
                    "soft" => Reconstruction::Soft,
                    _ => {
                        return Err(Error::Config(format!(
                            "recon: expected hard or soft, got `{value}`"
                        )))
                    }
                }
            }
            "contrast_on" => {
                t.contrast_on = match value {
                    "projected" => ContrastOn::Projected,
                    "readout" => ContrastOn::Readout,
                    _ => {
                        return Err(Error::Config(format!(
                            "contrast_on: expected projected or readout, got `{value}`"
                        )))
                    }
                }
            }
            "hidden" => e.hidden = num(key, value)?,
            "heads" => e.heads = num(key, value)?,
            "head_dim" => e.head_dim = num(key, value)?,
            "layers" => e.layers = num(key, value)?,
            "latent_dim" => e.latent_dim = num(key, value)?,
            "vba_hidden" => e.vba_hidden = num(key, value)?,
            "proj_dim" => e.proj_dim = num(key, value)?,
            "lr" => t.lr = num(key, value)?,
            "weight_decay" => t.weight_decay = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "num_views" => t.num_views = num(key, value)?,
            "p_mask" => t.p_mask = num(key, value)?,
            "p_pert" => t.p_pert = num(key, value)?,
            "p_drop_edge" => t.p_drop_edge = num(key, value)?,
            "p_drop_node" => t.p_drop_node = num(key, value)?,
            "aug_noise_std" => t.aug_noise_std = num(key, value)?,
            "member_removal_fraction" => t.member_removal_fraction = num(key, value)?,
            "split" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|v| num(key, v.trim()))
                    .collect::<Result<_>>()?;
                t.split = parts.try_into().map_err(|_| {
                    Error::Config(format!("split: expected three ratios, got `{value}`"))
                })?;
            }
            "select_every" => t.select_every = num(key, value)?,
            "probe_hidden" => p.hidden = num(key, value)?,
            "probe_epochs" => p.epochs = num(key, value)?,
            "probe_lr" => p.lr = num(key, value)?,
            "probe_weight_decay" => p.weight_decay = num(key, value)?,
            "repeats" => self.repeats = num(key, value)?,
            "checkpoint" => self.checkpoint = path(value),
            "embeddings" => self.embeddings = path(value),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Checks the training, probe and experiment settings. Generator
    /// settings are checked when data is generated.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.probe.hidden == 0 || self.probe.epochs == 0 || !(self.probe.lr > 0.0) {
            return Err(Error::Config(
                "probe_hidden, probe_epochs and probe_lr must be positive".into(),
            ));
        }
        if self.probe.weight_decay < 0.0 {
            return Err(Error::Config(
                "probe_weight_decay must be non-negative".into(),
            ));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be positive".into()));
        }
        Ok(())
    }

    /// Seeds of an experiment: `seed, seed + 1, …` (`repeats` of them).
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64)
            .map(|i| self.train.seed + i)
            .collect()
    }

    /// Every key with its resolved value, one per line.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let e = &t.encoder;
        let s = &self.synthetic;
        let p = &self.probe;
        let mut out = String::new();
        for key in KEYS {
            let value = match *key {
                "data" => show_path(&self.data),
                "data_seed" => s.seed.to_string(),
                "num_classes" => s.num_classes.to_string(),
                "nodes_per_class" => s.nodes_per_class.to_string(),
                "edges_per_class" => s.edges_per_class.to_string(),
                "edge_size" => s.edge_size.to_string(),
                "majority_count" => s.majority_count.to_string(),
                "feature_dim" => s.feature_dim.to_string(),
                "sigma" => s.noise_std.to_string(),
                "homophily" => match self.homophily {
                    NodeHomophily::EdgeAveraged => "edge_averaged".into(),
                    NodeHomophily::CoMembers => "co_members".into(),
                },
                "mode" => match t.mode {
                    Mode::Supervised => "supervised".into(),
                    Mode::Ssl => "ssl".into(),
                },
                "seed" => t.seed.to_string(),
                "alpha" => t.alpha.to_string(),
                "lambda" => t.lambda.to_string(),
                "tau" => t.gumbel.tau.to_string(),
                "hard" => t.gumbel.hard.to_string(),
                "recon" => match t.recon {
                    Reconstruction::Hard => "hard".into(),
                    Reconstruction::Soft => "soft".into(),
                },
                "contrast_on" => match t.contrast_on {
                    ContrastOn::Projected => "projected".into(),
                    ContrastOn::Readout => "readout".into(),
                },
                "hidden" => e.hidden.to_string(),
                "heads" => e.heads.to_string(),
                "head_dim" => e.head_dim.to_string(),
                "layers" => e.layers.to_string(),
                "latent_dim" => e.latent_dim.to_string(),
                "vba_hidden" => e.vba_hidden.to_string(),
                "proj_dim" => e.proj_dim.to_string(),
                "lr" => t.lr.to_string(),
                "weight_decay" => t.weight_decay.to_string(),
                "epochs" => t.epochs.to_string(),
                "num_views" => t.num_views.to_string(),
                "p_mask" => t.p_mask.to_string(),
                "p_pert" => t.p_pert.to_string(),
                "p_drop_edge" => t.p_drop_edge.to_string(),
                "p_drop_node" => t.p_drop_node.to_string(),
                "aug_noise_std" => t.aug_noise_std.to_string(),
                "member_removal_fraction" => t.member_removal_fraction.to_string(),
                "split" => format!("{},{},{}", t.split[0], t.split[1], t.split[2]),
                "select_every" => t.select_every.to_string(),
                "probe_hidden" => p.hidden.to_string(),
                "probe_epochs" => p.epochs.to_string(),
                "probe_lr" => p.lr.to_string(),
                "probe_weight_decay" => p.weight_decay.to_string(),
                "repeats" => self.repeats.to_string(),
                "checkpoint" => show_path(&self.checkpoint),
                "embeddings" => show_path(&self.embeddings),
                other => unreachable!("key {other} has no writer"),
            };
            writeln!(out, "{key}={value}").unwrap();
        }
        out
    }
}
