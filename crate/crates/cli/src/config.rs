//! Flat `key = value` run configuration shared by every subcommand.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use mmce_core::eval::EligibilityOptions;
use mmce_core::{GenConfig, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub eligibility: EligibilityOptions,
    pub strata: usize,
    pub budget: Option<f64>,
    /// Every `candidate_stride`-th grid point is an allocation candidate.
    pub candidate_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gen: GenConfig::default(),
            train: TrainConfig::default(),
            eligibility: EligibilityOptions::default(),
            strata: 5,
            budget: None,
            candidate_stride: 1,
        }
    }
}

pub const KEYS: &[&str] = &[
    "n_riders",
    "feature_dim",
    "signal_dims",
    "bias_strength",
    "blank_fraction",
    "t_max",
    "feature_noise",
    "treatment_noise",
    "outcome_noise",
    "long_tail",
    "saturation",
    "seed",
    "scheme",
    "head",
    "epochs",
    "batch_size",
    "lr",
    "loss_a",
    "loss_b",
    "hidden",
    "monotonicity_threshold",
    "positivity_bins",
    "important_features",
    "sutva",
    "strata",
    "budget",
    "candidate_stride",
];

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

fn parse_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse::<usize>(p.trim())).collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| mmce_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let err = |message: String| CliError::ConfigKey {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                return Err(err(format!("unknown config key `{key}`")));
            };
            if seen.contains(&known) {
                return Err(err(format!("duplicate config key `{key}`")));
            }
            seen.push(known);
            cfg.set(known, value).map_err(|m| err(format!("invalid value for `{key}` {m}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let g = &mut self.gen;
        let t = &mut self.train;
        match key {
            "n_riders" => g.n_riders = parse(v)?,
            "feature_dim" => g.feature_dim = parse(v)?,
            "signal_dims" => g.signal_dims = parse(v)?,
            "bias_strength" => g.bias_strength = parse(v)?,
            "blank_fraction" => g.blank_fraction = parse(v)?,
            "t_max" => {
                g.t_max = parse(v)?;
                t.t_max = Some(g.t_max);
            }
            "feature_noise" => g.feature_noise = parse(v)?,
            "treatment_noise" => g.treatment_noise = parse(v)?,
            "outcome_noise" => g.outcome_noise = parse(v)?,
            "long_tail" => g.long_tail = parse(v)?,
            "saturation" => g.saturation = parse(v)?,
            "seed" => {
                g.seed = parse(v)?;
                t.seed = g.seed;
            }
            "scheme" => t.scheme = parse(v)?,
            "head" => t.head = parse(v)?,
            "epochs" => t.epochs = parse(v)?,
            "batch_size" => t.batch_size = parse(v)?,
            "lr" => t.lr = parse(v)?,
            "loss_a" => t.a = parse(v)?,
            "loss_b" => t.b = parse(v)?,
            "hidden" => t.hidden = parse_list(v)?,
            "monotonicity_threshold" => self.eligibility.monotonicity_threshold = parse(v)?,
            "positivity_bins" => self.eligibility.n_bins = parse(v)?,
            "important_features" => self.eligibility.important_features = parse_list(v)?,
            "sutva" => self.eligibility.sutva = parse(v)?,
            "strata" => self.strata = parse(v)?,
            "budget" => self.budget = Some(parse(v)?),
            "candidate_stride" => self.candidate_stride = parse(v)?,
            _ => unreachable!("key list and setter out of sync: {key}"),
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.gen.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        let e = &self.eligibility;
        let bad = |m: String| Err(CliError::Config(m));
        if !(0.0..=1.0).contains(&e.monotonicity_threshold) {
            return bad(format!("monotonicity_threshold must be in [0, 1], got {}", e.monotonicity_threshold));
        }
        if e.n_bins < 2 {
            return bad(format!("positivity_bins must be >= 2, got {}", e.n_bins));
        }
        if self.strata < 2 {
            return bad(format!("strata must be >= 2, got {}", self.strata));
        }
        if let Some(b) = self.budget {
            if !(b >= 0.0 && b.is_finite()) {
                return bad(format!("budget must be finite and >= 0, got {b}"));
            }
        }
        if self.candidate_stride == 0 {
            return bad("candidate_stride must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mmce_core::{HeadKind, SchemeKind};

    fn parse_str(s: &str) -> Result<RunConfig> {
        RunConfig::parse(s, Path::new("run.cfg"))
    }

    #[test]
    fn empty_is_default() {
        assert_eq!(parse_str("").unwrap(), RunConfig::default());
        assert_eq!(parse_str("# only a comment\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn keys_are_applied() {
        let c = parse_str(
            "n_riders = 500\nbias_strength=0\nscheme = mmce1 # trailing\nhead = isotonic\nhidden = 8, 4\n\
             important_features = 0,1\nsutva = false\nbudget = 12.5\nt_max = 3\nseed = 9\nlong_tail = true\n",
        )
        .unwrap();
        assert_eq!(c.gen.n_riders, 500);
        assert_eq!(c.gen.bias_strength, 0.0);
        assert_eq!(c.train.scheme, SchemeKind::Mmce1);
        assert_eq!(c.train.head, HeadKind::IsotonicEncodingLR);
        assert_eq!(c.train.hidden, vec![8, 4]);
        assert_eq!(c.eligibility.important_features, vec![0, 1]);
        assert!(!c.eligibility.sutva);
        assert_eq!(c.budget, Some(12.5));
        assert_eq!((c.gen.t_max, c.train.t_max), (3.0, Some(3.0)));
        assert_eq!((c.gen.seed, c.train.seed), (9, 9));
        assert!(c.gen.long_tail);
    }

    #[test]
    fn unknown_key_named() {
        let e = parse_str("epochs = 2\nfoo=1\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let msg = e.to_string();
        assert!(msg.contains("`foo`") && msg.contains(":2:"), "{msg}");
    }

    #[test]
    fn bad_values_rejected() {
        for text in [
            "epochs = many",
            "bias_strength = 1.5",
            "budget = -1",
            "strata = 1",
            "scheme = mmce9",
            "epochs = 1\nepochs = 2",
            "no equals sign",
            "monotonicity_threshold = 2",
            "hidden = 4,0",
        ] {
            let e = parse_str(text).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}: {e}");
        }
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = RunConfig::default();
        for k in KEYS {
            let v = match *k {
                "scheme" => "mmce2",
                "head" => "linear",
                "long_tail" | "sutva" => "true",
                "hidden" | "important_features" => "2",
                "bias_strength" | "blank_fraction" | "monotonicity_threshold" => "0.5",
                _ => "2",
            };
            c.set(k, v).unwrap();
        }
    }
}
