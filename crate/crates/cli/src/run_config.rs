//! `key=value` run configuration covering rasterization, the detector and
//! the train/validation split.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use symdet::{DetectorConfig, RasterConfig};

use crate::CliError;

pub const DEFAULT_SPLIT_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub raster: RasterConfig,
    pub detector: DetectorConfig,
    pub split_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            raster: RasterConfig::default(),
            detector: DetectorConfig::default(),
            split_fraction: DEFAULT_SPLIT_FRACTION,
        }
    }
}

fn number<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, CliError> {
    value.trim().parse().map_err(|_| CliError::Usage(format!("config {key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "max_dim" => cfg.raster.max_dim = number(k, v)?,
                "stroke_thickness" => cfg.raster.stroke_thickness = number(k, v)?,
                "min_box_dim" => cfg.raster.min_box_dim = number(k, v)?,
                "margin" => cfg.raster.margin = number(k, v)?,
                "split_fraction" => cfg.split_fraction = number(k, v)?,
                _ => {
                    if !cfg.detector.set(k, v).map_err(|e| CliError::Usage(e.to_string()))? {
                        return Err(CliError::Usage(format!("config line {}: unknown key {k:?}", n + 1)));
                    }
                }
            }
        }
        cfg.raster.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.detector.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if !(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0) {
            return Err(CliError::Usage("split_fraction must lie in (0, 1)".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                Self::parse(&fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?)
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let r = &self.raster;
        let _ = writeln!(
            out,
            "max_dim={}\nstroke_thickness={}\nmin_box_dim={}\nmargin={}",
            r.max_dim, r.stroke_thickness, r.min_box_dim, r.margin
        );
        let _ = writeln!(out, "split_fraction={}", self.split_fraction);
        out + &self.detector.to_text()
    }
}
