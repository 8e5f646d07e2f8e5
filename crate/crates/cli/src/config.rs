//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments run to the end of the line
//! n_groups = 2
//! ca_mode  = constant
//! ca_scale = 0.1
//! train_manifest = images/train.txt   # relative to this file
//! ```
//!
//! Every key is optional; unset keys take the defaults listed in
//! [`RunConfig::default`]. Unknown and repeated keys are errors.

use std::fmt;
use std::path::{Path, PathBuf};

use rcan_core::data::{DegradationKind, DegradationSpec};
use rcan_core::network::DIV2K_RGB_MEAN;
use rcan_core::optim::AdamHyper;
use rcan_core::train::TrainOptions;
use rcan_core::{CaMode, RcanConfig, Real};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// 1-based line number, 0 for errors not tied to a line.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: RcanConfig,
    pub hyper: AdamHyper,
    pub degradation: DegradationSpec,
    pub train_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    /// LR patch side.
    pub patch_size: usize,
    pub batch_size: usize,
    pub augment: bool,
    /// When positive, this many patch pairs are drawn once and reused for
    /// every step instead of sampling fresh crops.
    pub fixed_patches: usize,
    pub steps: u64,
    pub seed: u64,
    pub report_interval: u64,
    pub checkpoint_interval: u64,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

impl Default for RunConfig {
    /// Full-size network at ×4 with the published optimiser settings:
    /// batches of 16 LR patches of 48×48, Adam (0.9, 0.999, 1e-8), learning
    /// rate 1e-4 halved every 200k iterations.
    fn default() -> Self {
        Self {
            model: RcanConfig::default(),
            hyper: AdamHyper::default(),
            degradation: DegradationSpec::bicubic(4),
            train_manifest: None,
            eval_manifest: None,
            patch_size: 48,
            batch_size: 16,
            augment: true,
            fixed_patches: 0,
            steps: 1000,
            seed: 0,
            report_interval: 100,
            checkpoint_interval: 0,
            checkpoint: None,
            log: None,
        }
    }
}

const KEYS: &[&str] = &[
    "n_groups",
    "n_blocks",
    "n_feats",
    "reduction",
    "scale",
    "use_lsc",
    "use_ssc",
    "ca_mode",
    "ca_scale",
    "mean_shift",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "lr_halving_interval",
    "degradation",
    "blur_sigma",
    "blur_ksize",
    "train_manifest",
    "eval_manifest",
    "patch_size",
    "batch_size",
    "augment",
    "fixed_patches",
    "steps",
    "seed",
    "report_interval",
    "checkpoint_interval",
    "checkpoint",
    "log",
];

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse::<T>().map_err(|_| format!("`{v}` is not a valid number"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn parse_mean(v: &str) -> Result<Option<[Real; 3]>, String> {
    match v {
        "none" => Ok(None),
        "div2k" => Ok(Some(DIV2K_RGB_MEAN)),
        _ => {
            let parts: Vec<&str> = v.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(format!("expected `none`, `div2k` or three comma-separated values, got `{v}`"));
            }
            let mut m = [0.0; 3];
            for (dst, p) in m.iter_mut().zip(parts) {
                *dst = parse_num(p)?;
            }
            Ok(Some(m))
        }
    }
}

impl RunConfig {
    /// Parses configuration text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ParseError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        let mut ca_mode: Option<String> = None;
        let mut ca_scale: Real = 1.0;
        let mut kind = "bi".to_string();
        let mut sigma = DegradationSpec::BD_SIGMA;
        let mut ksize = DegradationSpec::BD_KSIZE;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| ParseError { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let key = *KEYS.iter().find(|k| **k == key).ok_or_else(|| err(format!("unknown key `{key}`")))?;
            if seen.contains(&key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            seen.push(key);
            let path = || Some(base.join(value));
            let bad = |m: String| err(format!("invalid value for `{key}`: {m}"));
            let m = &mut cfg.model;
            match key {
                "n_groups" => m.n_groups = parse_num(value).map_err(bad)?,
                "n_blocks" => m.n_blocks = parse_num(value).map_err(bad)?,
                "n_feats" => m.n_feats = parse_num(value).map_err(bad)?,
                "reduction" => m.reduction = parse_num(value).map_err(bad)?,
                "scale" => m.scale = parse_num(value).map_err(bad)?,
                "use_lsc" => m.use_lsc = parse_bool(value).map_err(bad)?,
                "use_ssc" => m.use_ssc = parse_bool(value).map_err(bad)?,
                "ca_mode" => match value {
                    "learned" | "constant" => ca_mode = Some(value.to_string()),
                    _ => return Err(bad(format!("expected `learned` or `constant`, got `{value}`"))),
                },
                "ca_scale" => ca_scale = parse_num(value).map_err(bad)?,
                "mean_shift" => m.mean_shift = parse_mean(value).map_err(bad)?,
                "lr" => cfg.hyper.lr0 = parse_num(value).map_err(bad)?,
                "beta1" => cfg.hyper.beta1 = parse_num(value).map_err(bad)?,
                "beta2" => cfg.hyper.beta2 = parse_num(value).map_err(bad)?,
                "eps" => cfg.hyper.eps = parse_num(value).map_err(bad)?,
                "lr_halving_interval" => cfg.hyper.halving_interval = parse_num(value).map_err(bad)?,
                "degradation" => match value {
                    "bi" | "bd" => kind = value.to_string(),
                    _ => return Err(bad(format!("expected `bi` or `bd`, got `{value}`"))),
                },
                "blur_sigma" => sigma = parse_num(value).map_err(bad)?,
                "blur_ksize" => ksize = parse_num(value).map_err(bad)?,
                "train_manifest" => cfg.train_manifest = path(),
                "eval_manifest" => cfg.eval_manifest = path(),
                "patch_size" => cfg.patch_size = parse_num(value).map_err(bad)?,
                "batch_size" => cfg.batch_size = parse_num(value).map_err(bad)?,
                "augment" => cfg.augment = parse_bool(value).map_err(bad)?,
                "fixed_patches" => cfg.fixed_patches = parse_num(value).map_err(bad)?,
                "steps" => cfg.steps = parse_num(value).map_err(bad)?,
                "seed" => cfg.seed = parse_num(value).map_err(bad)?,
                "report_interval" => cfg.report_interval = parse_num(value).map_err(bad)?,
                "checkpoint_interval" => cfg.checkpoint_interval = parse_num(value).map_err(bad)?,
                "checkpoint" => cfg.checkpoint = path(),
                "log" => cfg.log = path(),
                _ => unreachable!("key list and match arms agree"),
            }
        }
        match ca_mode.as_deref() {
            Some("constant") => cfg.model.ca_mode = CaMode::Constant(ca_scale),
            Some(_) | None if seen.contains(&"ca_scale") => {
                return Err(ParseError {
                    line: 0,
                    message: "`ca_scale` requires `ca_mode = constant`".into(),
                })
            }
            Some(_) => cfg.model.ca_mode = CaMode::Learned,
            None => {}
        }
        cfg.degradation = DegradationSpec {
            kind: if kind == "bd" {
                DegradationKind::BlurDown { sigma, ksize }
            } else {
                DegradationKind::Bicubic
            },
            scale: cfg.model.scale,
        };
        cfg.validate().map_err(|message| ParseError { line: 0, message })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        Self::parse(&text, base).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.degradation.validate().map_err(|e| e.to_string())?;
        if self.patch_size == 0 || self.batch_size == 0 {
            return Err("patch_size and batch_size must be positive".into());
        }
        let h = &self.hyper;
        if !(h.lr0 >= 0.0) || !(0.0..1.0).contains(&h.beta1) || !(0.0..1.0).contains(&h.beta2) || !(h.eps > 0.0) {
            return Err("optimiser settings out of range".into());
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            steps: self.steps,
            seed: self.seed,
            hyper: self.hyper,
            report_interval: self.report_interval,
            checkpoint_interval: self.checkpoint_interval,
        }
    }
}
