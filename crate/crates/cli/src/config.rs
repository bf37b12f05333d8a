//! Flat `section.key = value` run configuration with flag overrides.
//!
//! Command-line flags take precedence over file values, which take
//! precedence over built-in defaults. The effective configuration is echoed
//! next to every output for provenance.

use crate::util::{read_text, CliError, CliResult};
use crowdtrack::detpost::{BoxSmoothParams, FusionParams, NmsParams};
use crowdtrack::posetrack::PoseSmoothParams;
use crowdtrack::tracker::TrackerParams;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Default, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        let Some(path) = path else {
            return Ok(cfg);
        };
        let text = read_text(path)?;
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(format!(
                    "{}:{}: expected 'section.key = value'",
                    path.display(),
                    line_no + 1
                )));
            };
            cfg.values
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(cfg)
    }

    /// Flag override: highest precedence, recorded in the echo.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                CliError::config(format!("config key '{key}': bad value '{raw}': {e}"))
            }),
        }
    }

    pub fn get_f64(&self, key: &str, default: f64) -> CliResult<f64> {
        Ok(self.parse::<f64>(key)?.unwrap_or(default))
    }

    pub fn get_bool(&self, key: &str, default: bool) -> CliResult<bool> {
        match self.values.get(key).map(String::as_str) {
            None => Ok(default),
            Some("true") | Some("on") | Some("1") => Ok(true),
            Some("false") | Some("off") | Some("0") => Ok(false),
            Some(other) => Err(CliError::config(format!(
                "config key '{key}': expected a boolean, got '{other}'"
            ))),
        }
    }

    pub fn nms_params(&self) -> CliResult<NmsParams> {
        let d = NmsParams::default();
        let p = NmsParams {
            iou_threshold: self.get_f64("nms.iou_threshold", d.iou_threshold)?,
            score_floor: self.get_f64("nms.score_floor", d.score_floor)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn fusion_params(&self) -> CliResult<FusionParams> {
        let d = FusionParams::default();
        let p = FusionParams {
            weight_a: self.get_f64("fusion.weight_a", d.weight_a)?,
            weight_b: self.get_f64("fusion.weight_b", d.weight_b)?,
            match_iou: self.get_f64("fusion.match_iou", d.match_iou)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn box_smooth_params(&self) -> CliResult<BoxSmoothParams> {
        let d = BoxSmoothParams::default();
        let p = BoxSmoothParams {
            alpha: self.get_f64("boxsmooth.alpha", d.alpha)?,
            match_iou: self.get_f64("boxsmooth.match_iou", d.match_iou)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn pose_smooth_params(&self) -> CliResult<PoseSmoothParams> {
        let p = PoseSmoothParams {
            alpha: self.get_f64("posesmooth.alpha", PoseSmoothParams::default().alpha)?,
        };
        p.validate()?;
        Ok(p)
    }

    /// Tracker parameters from `tracker.*` keys; unknown tracker keys are a
    /// configuration error.
    pub fn tracker_params(&self) -> CliResult<TrackerParams> {
        let mut flat = String::new();
        for (key, value) in &self.values {
            if let Some(name) = key.strip_prefix("tracker.") {
                let _ = writeln!(flat, "{name} = {value}");
            }
        }
        Ok(TrackerParams::from_config_str(&flat)?)
    }

    /// Deterministic echo of every key in effect.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.values {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}
