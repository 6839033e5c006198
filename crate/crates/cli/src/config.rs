//! `key = value` configuration files mirroring the solver and ground-truth
//! parameter sets. Lines starting with `#` are comments. Values given on
//! the command line override the file.

use std::path::Path;

use msflow_core::gt::GtConfig;
use msflow_core::solver::{ChannelMode, SolverParams};

use crate::AppError;

/// Parse a channel-mode spec: `da`, `fixed:<lambda>`, `rgb` or `nir`.
pub fn parse_mode(text: &str) -> Result<ChannelMode, AppError> {
    if let Some(rest) = text.strip_prefix("fixed:") {
        let lambda: f64 = rest
            .parse()
            .map_err(|_| AppError::validation(format!("bad fixed weight in mode '{text}'")))?;
        return Ok(ChannelMode::Fixed(lambda));
    }
    match text {
        "da" | "detail_aware" => Ok(ChannelMode::DetailAware),
        "rgb" | "rgb_only" => Ok(ChannelMode::RgbOnly),
        "nir" | "nir_only" => Ok(ChannelMode::NirOnly),
        _ => Err(AppError::validation(format!(
            "unknown mode '{text}' (expected da, fixed:<l>, rgb or nir)"
        ))),
    }
}

pub fn mode_label(mode: &ChannelMode) -> String {
    match mode {
        ChannelMode::Fixed(l) => format!("fixed:{l}"),
        other => other.name().to_string(),
    }
}

/// Apply a config file onto solver and ground-truth parameter sets.
pub fn apply_config_file(
    path: &Path,
    solver: &mut SolverParams,
    gt: &mut GtConfig,
) -> Result<(), AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::validation(format!("cannot read config {}: {e}", path.display())))?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| AppError::validation(format!("config line {}: expected key = value", lineno + 1)))?;
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| AppError::validation(format!("config line {}: bad {what} '{value}'", lineno + 1));
        let as_f64 = || value.parse::<f64>().map_err(|_| bad("number"));
        let as_usize = || value.parse::<usize>().map_err(|_| bad("integer"));
        let as_bool = || value.parse::<bool>().map_err(|_| bad("boolean"));
        match key {
            "gamma" => solver.gamma = as_f64()?,
            "theta" => solver.theta = as_f64()?,
            "epsilon" => solver.epsilon = as_f64()?,
            "pyramid_factor" => solver.pyramid_factor = as_f64()?,
            "min_level_size" => solver.min_level_size = as_usize()?,
            "outer_iters" => solver.outer_iters = as_usize()?,
            "inner_iters" => solver.inner_iters = as_usize()?,
            "sor_iters" => solver.sor_iters = as_usize()?,
            "sor_omega" => solver.sor_omega = as_f64()?,
            "sor_tol" => solver.sor_tol = as_f64()?,
            "mode" => solver.mode = parse_mode(value)?,
            "lambda_steepness" => solver.lambda_steepness = as_f64()?,
            "lambda_midpoint" => solver.lambda_midpoint = as_f64()?,
            "lambda_per_level" => solver.lambda_per_level = as_bool()?,
            "sequential_sor" => solver.sequential_sor = as_bool()?,
            "m_p" => gt.m_p = as_usize()?,
            "fb_threshold" => gt.fb_threshold = as_f64()?,
            "downsample_factor" => gt.downsample_factor = as_usize()?,
            _ => {
                return Err(AppError::validation(format!(
                    "config line {}: unknown key '{key}'",
                    lineno + 1
                )))
            }
        }
    }
    Ok(())
}
