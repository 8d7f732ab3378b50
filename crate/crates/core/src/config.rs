//! Top-level configuration with strict JSON parsing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytics::AnalyticsParams;
use crate::error::{Error, Result};
use crate::geometry::GeometryParams;
use crate::imaging::CameraParams;
use crate::optics::OpticalParams;
use crate::photophysics::KineticsParams;
use crate::tracking::TrackingParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetParams {
    /// Probability that a sub-image holds two mitochondria instead of one.
    pub pair_probability: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams { pair_probability: 0.5, train_fraction: 0.7, val_fraction: 0.2 }
    }
}

impl DatasetParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pair_probability) {
            return Err(Error::invalid("dataset: pair_probability must lie in [0, 1]"));
        }
        let (t, v) = (self.train_fraction, self.val_fraction);
        if !(t >= 0.0 && v >= 0.0 && t + v <= 1.0) {
            return Err(Error::invalid("dataset: split fractions must be >= 0 and sum to <= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub geometry: GeometryParams,
    pub photophysics: KineticsParams,
    pub optics: OpticalParams,
    pub camera: CameraParams,
    pub dataset: DatasetParams,
    pub tracking: TrackingParams,
    pub analytics: AnalyticsParams,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.photophysics.validate()?;
        self.optics.validate()?;
        self.camera.validate()?;
        self.dataset.validate()?;
        self.tracking.validate()?;
        self.analytics.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_text(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = Config::default();
        c.validate().unwrap();
        let back = Config::from_json(&c.to_json()).unwrap();
        assert_eq!(back.to_json(), c.to_json());
    }

    #[test]
    fn partial_sections_take_defaults() {
        let c = Config::from_json(r#"{"camera": {"baseline": 50}}"#).unwrap();
        assert_eq!(c.camera.baseline, 50);
        assert_eq!(c.camera.pixel_size, 80.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(Config::from_json(r#"{"camra": {}}"#), Err(Error::Config(_))));
        assert!(Config::from_json(r#"{"camera": {"pixelsize": 80}}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let e = Config::from_json(r#"{"dataset": {"pair_probability": 1.5}}"#).unwrap_err();
        assert!(e.is_validation());
    }
}
