//! Run configuration: flat `key=value` lines, `#` comments, keys namespaced
//! by a section prefix. Unknown or duplicate keys are errors — a typo must
//! fail the run, not silently fall back to a default.
//!
//! ```text
//! # optimizer
//! fit.iterations=2000
//! fit.seed=7
//! fit.k_buffer=16
//! fit.checkpoint_interval=0
//!
//! # loss term weights
//! loss.lambda_r=0.2
//! loss.lambda_depth=1.0
//! loss.lambda_intensity=0.5
//! loss.lambda_raydrop=1.0
//! loss.lambda_normal=0.0001
//!
//! # learning rates (omitted keys derive from scene extent)
//! lr.center=0.00016
//! lr.tangent=0.001
//! lr.log_scale=0.005
//! lr.opacity=0.05
//! lr.sh=0.0025
//!
//! # densification
//! densify.grad_threshold=0.0002
//! densify.alpha_threshold=0.005
//! densify.split_scale_frac=0.01
//! densify.split_shrink=1.6
//! densify.interval=500
//! densify.start=500
//! densify.stop=15000
//! ```

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optim::{FitConfig, GroupLrs};

/// A fit configuration plus optional learning-rate overrides. The center
/// rate scales with scene extent, which is unknown until the initial scene
/// is loaded, so overrides stay separate until [`RunConfig::resolve_lrs`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub lr_center: Option<f64>,
    pub lr_tangent: Option<f64>,
    pub lr_log_scale: Option<f64>,
    pub lr_opacity: Option<f64>,
    pub lr_sh: Option<f64>,
}

impl RunConfig {
    /// Fold overrides into the extent-derived defaults. `None` when nothing
    /// was overridden (the optimizer then derives rates itself).
    pub fn resolve_lrs(&self, extent: f64) -> Option<GroupLrs> {
        let overrides = [
            self.lr_center,
            self.lr_tangent,
            self.lr_log_scale,
            self.lr_opacity,
            self.lr_sh,
        ];
        if overrides.iter().all(Option::is_none) {
            return None;
        }
        let mut lrs = GroupLrs::for_extent(extent);
        if let Some(v) = self.lr_center {
            lrs.center = v;
        }
        if let Some(v) = self.lr_tangent {
            lrs.tangent = v;
        }
        if let Some(v) = self.lr_log_scale {
            lrs.log_scale = v;
        }
        if let Some(v) = self.lr_opacity {
            lrs.opacity = v;
        }
        if let Some(v) = self.lr_sh {
            lrs.sh = v;
        }
        Some(lrs)
    }
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    parse_run_config(&std::fs::read_to_string(path)?)
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got '{line}'", idx + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::Config(format!("duplicate config key '{key}'")));
        }
        apply(&mut cfg, key, value)?;
    }
    check(&cfg)?;
    Ok(cfg)
}

fn apply(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "fit.iterations" => cfg.fit.iterations = parse(key, value)?,
        "fit.seed" => cfg.fit.seed = parse(key, value)?,
        "fit.k_buffer" => cfg.fit.k_buffer = parse(key, value)?,
        "fit.checkpoint_interval" => cfg.fit.checkpoint_interval = parse(key, value)?,
        "loss.lambda_r" => cfg.fit.weights.lambda_r = parse(key, value)?,
        "loss.lambda_depth" => cfg.fit.weights.lambda_depth = parse(key, value)?,
        "loss.lambda_intensity" => cfg.fit.weights.lambda_intensity = parse(key, value)?,
        "loss.lambda_raydrop" => cfg.fit.weights.lambda_raydrop = parse(key, value)?,
        "loss.lambda_normal" => cfg.fit.weights.lambda_normal = parse(key, value)?,
        "lr.center" => cfg.lr_center = Some(parse(key, value)?),
        "lr.tangent" => cfg.lr_tangent = Some(parse(key, value)?),
        "lr.log_scale" => cfg.lr_log_scale = Some(parse(key, value)?),
        "lr.opacity" => cfg.lr_opacity = Some(parse(key, value)?),
        "lr.sh" => cfg.lr_sh = Some(parse(key, value)?),
        "densify.grad_threshold" => cfg.fit.densify.grad_threshold = parse(key, value)?,
        "densify.alpha_threshold" => cfg.fit.densify.alpha_threshold = parse(key, value)?,
        "densify.split_scale_frac" => cfg.fit.densify.split_scale_frac = parse(key, value)?,
        "densify.split_shrink" => cfg.fit.densify.split_shrink = parse(key, value)?,
        "densify.interval" => cfg.fit.densify.interval = parse(key, value)?,
        "densify.start" => cfg.fit.densify.start = parse(key, value)?,
        "densify.stop" => cfg.fit.densify.stop = parse(key, value)?,
        _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
    }
    Ok(())
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("invalid value for '{key}': '{value}'")))
}

fn check(cfg: &RunConfig) -> Result<()> {
    cfg.fit.weights.validate()?;
    if cfg.fit.k_buffer == 0 {
        return Err(Error::Config("fit.k_buffer must be at least 1".into()));
    }
    let d = &cfg.fit.densify;
    if !(d.grad_threshold >= 0.0) || !d.grad_threshold.is_finite() {
        return Err(Error::Config("densify.grad_threshold must be finite and >= 0".into()));
    }
    if !(0.0..1.0).contains(&d.alpha_threshold) {
        return Err(Error::Config("densify.alpha_threshold must lie in [0, 1)".into()));
    }
    if !(d.split_scale_frac > 0.0) || !(d.split_shrink >= 1.0) {
        return Err(Error::Config(
            "densify.split_scale_frac must be > 0, densify.split_shrink >= 1".into(),
        ));
    }
    if d.interval == 0 {
        return Err(Error::Config("densify.interval must be at least 1".into()));
    }
    if d.start > d.stop {
        return Err(Error::Config("densify.start must not exceed densify.stop".into()));
    }
    for (name, v) in [
        ("lr.center", cfg.lr_center),
        ("lr.tangent", cfg.lr_tangent),
        ("lr.log_scale", cfg.lr_log_scale),
        ("lr.opacity", cfg.lr_opacity),
        ("lr.sh", cfg.lr_sh),
    ] {
        if let Some(v) = v {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_example_parses() {
        let text = "\n# optimizer\nfit.iterations=2000\nfit.seed=7\nfit.k_buffer=8\n\
                    loss.lambda_r=0.3\nlr.center=0.0002\ndensify.interval=250\n";
        let cfg = parse_run_config(text).unwrap();
        assert_eq!(cfg.fit.iterations, 2000);
        assert_eq!(cfg.fit.seed, 7);
        assert_eq!(cfg.fit.k_buffer, 8);
        assert_eq!(cfg.fit.weights.lambda_r, 0.3);
        assert_eq!(cfg.lr_center, Some(0.0002));
        assert_eq!(cfg.fit.densify.interval, 250);
        // Untouched keys keep their defaults.
        assert_eq!(cfg.fit.densify.grad_threshold, 0.0002);
        assert_eq!(cfg.fit.weights.lambda_depth, 1.0);
    }

    #[test]
    fn unknown_key_is_named_in_the_error() {
        let err = parse_run_config("fit.iterationz=5\n").unwrap_err();
        assert!(err.to_string().contains("fit.iterationz"), "{err}");
    }

    #[test]
    fn duplicates_bad_values_and_bad_lines_fail() {
        assert!(parse_run_config("fit.seed=1\nfit.seed=2\n").is_err());
        assert!(parse_run_config("fit.iterations=many\n").is_err());
        assert!(parse_run_config("fit.iterations\n").is_err());
        assert!(parse_run_config("loss.lambda_r=1.5\n").is_err());
        assert!(parse_run_config("densify.interval=0\n").is_err());
        assert!(parse_run_config("fit.k_buffer=0\n").is_err());
        assert!(parse_run_config("lr.center=-1\n").is_err());
    }

    #[test]
    fn lr_overrides_fold_into_extent_defaults() {
        let cfg = parse_run_config("lr.opacity=0.1\n").unwrap();
        let lrs = cfg.resolve_lrs(2.0).unwrap();
        assert_eq!(lrs.opacity, 0.1);
        assert_eq!(lrs.center, GroupLrs::for_extent(2.0).center);

        let cfg = parse_run_config("fit.seed=3\n").unwrap();
        assert!(cfg.resolve_lrs(2.0).is_none());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = parse_run_config("# nothing\n\n   \n# fit.seed=9\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }
}
