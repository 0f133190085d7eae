//! `key = value` configuration files. `#` starts a comment; unknown keys are
//! rejected; absent keys keep their defaults.

use std::path::Path;
use std::str::FromStr;

use crate::mining::FacilityVariant;
use crate::pipeline::PipelineConfig;
use crate::proposals::Connectivity;
use crate::{Error, Result, Scalar};

/// Every accepted key, in the order [`render_config`] writes them.
pub const KEYS: &[&str] = &[
    "alpha",
    "lambda_o",
    "lambda_m",
    "na_frac",
    "beta",
    "facility_variant",
    "learning_rate",
    "momentum",
    "epochs",
    "prob_clip_eps",
    "affine",
    "iou_converge",
    "max_outer_iters",
    "refine_blend",
    "tau",
    "connectivity",
    "min_area_frac",
    "mbd_max_passes",
    "mbd_tol",
];

fn parse_value<V: FromStr>(line: usize, key: &str, raw: &str) -> Result<V> {
    raw.parse().map_err(|_| Error::Config {
        line,
        msg: format!("bad value {raw:?} for `{key}`"),
    })
}

fn parse_real<T: Scalar>(line: usize, key: &str, raw: &str) -> Result<T> {
    let x: f64 = parse_value(line, key, raw)?;
    if !x.is_finite() {
        return Err(Error::Config {
            line,
            msg: format!("`{key}` must be finite"),
        });
    }
    Ok(T::lit(x))
}

pub fn parse_config<T: Scalar>(text: &str) -> Result<PipelineConfig<T>> {
    let mut cfg = PipelineConfig::<T>::default();
    for (k, raw_line) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            msg: format!("expected `key = value`, got {content:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "alpha" => cfg.mining.alpha = parse_real(line, key, value)?,
            "lambda_o" => cfg.mining.lambda_o = parse_real(line, key, value)?,
            "lambda_m" => cfg.mining.lambda_m = parse_real(line, key, value)?,
            "na_frac" => cfg.mining.na_frac = parse_real(line, key, value)?,
            "beta" => cfg.mining.beta = parse_real(line, key, value)?,
            "facility_variant" => {
                cfg.mining.variant = value
                    .parse::<FacilityVariant>()
                    .map_err(|msg| Error::Config { line, msg })?
            }
            "learning_rate" => cfg.train.learning_rate = parse_real(line, key, value)?,
            "momentum" => cfg.train.momentum = parse_real(line, key, value)?,
            "epochs" => cfg.train.epochs = parse_value(line, key, value)?,
            "prob_clip_eps" => cfg.train.prob_clip_eps = parse_real(line, key, value)?,
            "affine" => cfg.train.affine = parse_value(line, key, value)?,
            "iou_converge" => cfg.iou_converge = parse_real(line, key, value)?,
            "max_outer_iters" => cfg.max_outer_iters = parse_value(line, key, value)?,
            "refine_blend" => cfg.refine_blend = parse_real(line, key, value)?,
            "tau" => cfg.proposal.tau = parse_real(line, key, value)?,
            "connectivity" => {
                let n: u32 = parse_value(line, key, value)?;
                cfg.proposal.connectivity = Connectivity::from_count(n).ok_or_else(|| Error::Config {
                    line,
                    msg: format!("connectivity must be 4 or 8, got {n}"),
                })?;
            }
            "min_area_frac" => cfg.proposal.min_area_frac = parse_real(line, key, value)?,
            "mbd_max_passes" => cfg.motion.max_passes = parse_value(line, key, value)?,
            "mbd_tol" => cfg.motion.tol = parse_real(line, key, value)?,
            _ => {
                return Err(Error::Config {
                    line,
                    msg: format!("unknown key `{key}`"),
                })
            }
        }
    }
    cfg.validate().map_err(|e| Error::Config {
        line: 0,
        msg: e.to_string(),
    })?;
    Ok(cfg)
}

pub fn load_config<T: Scalar>(path: impl AsRef<Path>) -> Result<PipelineConfig<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Full config file with every key set.
pub fn render_config<T: Scalar>(cfg: &PipelineConfig<T>) -> String {
    let values: Vec<String> = vec![
        cfg.mining.alpha.to_string(),
        cfg.mining.lambda_o.to_string(),
        cfg.mining.lambda_m.to_string(),
        cfg.mining.na_frac.to_string(),
        cfg.mining.beta.to_string(),
        cfg.mining.variant.to_string(),
        cfg.train.learning_rate.to_string(),
        cfg.train.momentum.to_string(),
        cfg.train.epochs.to_string(),
        cfg.train.prob_clip_eps.to_string(),
        cfg.train.affine.to_string(),
        cfg.iou_converge.to_string(),
        cfg.max_outer_iters.to_string(),
        cfg.refine_blend.to_string(),
        cfg.proposal.tau.to_string(),
        cfg.proposal.connectivity.count().to_string(),
        cfg.proposal.min_area_frac.to_string(),
        cfg.motion.max_passes.to_string(),
        cfg.motion.tol.to_string(),
    ];
    KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
}
