//! Seeded, geometry-preserving image corruptions and a dataset-level driver.

pub mod dataset;
pub mod ops;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{corrupt_dataset, derive_seed, CorruptionReport, FailureEntry, ManifestEntry};
pub use ops::{blur, blur_plane, fog, gaussian_noise, rain};

/// Kind-specific parameters at full strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Corruption {
    /// `sigma` in pixel intensity units.
    GaussianNoise { sigma: f64 },
    /// `density` in streaks per kilopixel, `angle` in degrees from vertical.
    Rain { density: f64, angle: f64 },
    /// `airlight` is a gray level in `[0, 255]`.
    Fog { attenuation: f64, airlight: f64 },
    /// `radius` in pixels.
    Blur { radius: f64 },
}

impl Corruption {
    pub fn kind(&self) -> &'static str {
        match self {
            Corruption::GaussianNoise { .. } => "gaussian_noise",
            Corruption::Rain { .. } => "rain",
            Corruption::Fog { .. } => "fog",
            Corruption::Blur { .. } => "blur",
        }
    }
}

fn one() -> f64 {
    1.0
}

/// A corruption plus its severity. Severity multiplies the strength parameter
/// (noise sigma, rain density, fog attenuation, blur radius); severity 0 is
/// the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    #[serde(flatten)]
    pub corruption: Corruption,
    #[serde(default = "one")]
    pub severity: f64,
    /// Used by [`CorruptionSpec::apply`]; dataset runs derive per-image seeds instead.
    #[serde(default)]
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(corruption: Corruption, severity: f64, seed: u64) -> Self {
        CorruptionSpec { corruption, severity, seed }
    }

    pub fn kind(&self) -> &'static str {
        self.corruption.kind()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.severity) {
            return Err(Error::config("severity", format!("must lie in [0, 1], got {}", self.severity)));
        }
        let check = |field: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be finite and non-negative, got {v}")))
            }
        };
        match self.corruption {
            Corruption::GaussianNoise { sigma } => check("sigma", sigma),
            Corruption::Rain { density, angle } => {
                check("density", density)?;
                if angle.is_finite() {
                    Ok(())
                } else {
                    Err(Error::config("angle", "must be finite"))
                }
            }
            Corruption::Fog { attenuation, airlight } => {
                check("attenuation", attenuation)?;
                if (0.0..=255.0).contains(&airlight) {
                    Ok(())
                } else {
                    Err(Error::config("airlight", format!("must lie in [0, 255], got {airlight}")))
                }
            }
            Corruption::Blur { radius } => check("radius", radius),
        }
    }

    /// Parameters with severity applied, as written to the manifest.
    pub fn params_string(&self) -> String {
        let s = self.severity;
        match self.corruption {
            Corruption::GaussianNoise { sigma } => format!("sigma={};severity={s}", sigma * s),
            Corruption::Rain { density, angle } => {
                format!("density={};angle={angle};severity={s}", density * s)
            }
            Corruption::Fog { attenuation, airlight } => {
                format!("attenuation={};airlight={airlight};severity={s}", attenuation * s)
            }
            Corruption::Blur { radius } => format!("radius={};severity={s}", radius * s),
        }
    }

    pub fn apply(&self, img: &RgbImage) -> Result<RgbImage> {
        self.apply_with_seed(img, self.seed)
    }

    pub fn apply_with_seed(&self, img: &RgbImage, seed: u64) -> Result<RgbImage> {
        self.validate()?;
        let s = self.severity;
        match self.corruption {
            Corruption::GaussianNoise { sigma } => gaussian_noise(img, sigma * s, seed),
            Corruption::Rain { density, angle } => rain(img, density * s, angle, seed),
            Corruption::Fog { attenuation, airlight } => fog(img, attenuation * s, airlight),
            Corruption::Blur { radius } => blur(img, radius * s),
        }
    }
}

/// One spec of each kind at moderate strength.
pub fn default_suite() -> Vec<CorruptionSpec> {
    vec![
        CorruptionSpec::new(Corruption::GaussianNoise { sigma: 20.0 }, 1.0, 0),
        CorruptionSpec::new(Corruption::Rain { density: 2.0, angle: 15.0 }, 1.0, 0),
        CorruptionSpec::new(Corruption::Fog { attenuation: 1.5, airlight: 220.0 }, 1.0, 0),
        CorruptionSpec::new(Corruption::Blur { radius: 3.0 }, 1.0, 0),
    ]
}
