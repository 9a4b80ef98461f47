//! Synthetic drifting streams from skew-normal mixtures.
//!
//! A scenario describes mixture components by their parameters at t = 0
//! and t = 1; every parameter and mixture weight moves linearly between
//! those endpoints. The generator returns both the samples and the exact
//! mixture density for error measurement.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, TdxError};
use crate::seeding::derive_seed;
use crate::stream::StreamSample;

const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Location, scale and shape of one skew-normal component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewNormalParams {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
}

impl SkewNormalParams {
    pub fn new(location: f64, scale: f64, shape: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() || !location.is_finite() || !shape.is_finite() {
            return Err(TdxError::InvalidArgument(format!(
                "invalid skew-normal parameters (location {location}, scale {scale}, shape {shape})"
            )));
        }
        Ok(Self {
            location,
            scale,
            shape,
        })
    }

    /// Density `2/scale * phi(z) * Phi(shape * z)`.
    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        let phi = INV_SQRT_2PI * (-0.5 * z * z).exp();
        let cdf = standard_normal_cdf(self.shape * z);
        2.0 / self.scale * phi * cdf
    }
}

pub(crate) fn standard_normal_cdf(x: f64) -> f64 {
    // Normal::new only fails for invalid parameters, not for (0, 1).
    static_normal().cdf(x)
}

fn static_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters")
}

/// Draws one skew-normal variate via the two-normal construction:
/// with `delta = shape / sqrt(1 + shape^2)` and independent standard
/// normals `u0, u1`, return
/// `location + scale * (delta |u0| + sqrt(1 - delta^2) u1)`.
pub fn sample_skew_normal<R: Rng + ?Sized>(p: &SkewNormalParams, rng: &mut R) -> f64 {
    let delta = p.shape / (1.0 + p.shape * p.shape).sqrt();
    let u0: f64 = rng.sample(StandardNormal);
    let u1: f64 = rng.sample(StandardNormal);
    let z = delta * u0.abs() + (1.0 - delta * delta).sqrt() * u1;
    p.location + p.scale * z
}

/// One mixture component with linearly drifting parameters and weight.
///
/// Field names match the scenario JSON schema: `*0` values apply at
/// t = 0, `*1` values at t = 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioComponent {
    pub xi0: f64,
    pub omega0: f64,
    pub alpha0: f64,
    pub xi1: f64,
    pub omega1: f64,
    pub alpha1: f64,
    pub w0: f64,
    pub w1: f64,
}

impl ScenarioComponent {
    fn params_at(&self, t: f64) -> SkewNormalParams {
        SkewNormalParams {
            location: lerp(self.xi0, self.xi1, t),
            scale: lerp(self.omega0, self.omega1, t),
            shape: lerp(self.alpha0, self.alpha1, t),
        }
    }

    fn weight_at(&self, t: f64) -> f64 {
        lerp(self.w0, self.w1, t)
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// A drifting-stream recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftScenario {
    pub name: String,
    pub n_instances: usize,
    pub n_time_points: usize,
    pub x_range: (f64, f64),
    pub components: Vec<ScenarioComponent>,
    /// Free-form origin note carried through to output metadata.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl DriftScenario {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(TdxError::ScenarioValidation(
                "scenario needs at least one component".into(),
            ));
        }
        if self.n_instances == 0 {
            return Err(TdxError::ScenarioValidation(
                "scenario generates no instances".into(),
            ));
        }
        if self.n_time_points < 2 {
            return Err(TdxError::ScenarioValidation(
                "scenario needs at least 2 time points".into(),
            ));
        }
        if !(self.x_range.0 < self.x_range.1) {
            return Err(TdxError::ScenarioValidation(format!(
                "x_range must satisfy lo < hi, got [{}, {}]",
                self.x_range.0, self.x_range.1
            )));
        }
        for (i, c) in self.components.iter().enumerate() {
            SkewNormalParams::new(c.xi0, c.omega0, c.alpha0).map_err(|_| {
                TdxError::ScenarioValidation(format!("component {i} invalid at t=0"))
            })?;
            SkewNormalParams::new(c.xi1, c.omega1, c.alpha1).map_err(|_| {
                TdxError::ScenarioValidation(format!("component {i} invalid at t=1"))
            })?;
            if c.w0 < 0.0 || c.w1 < 0.0 {
                return Err(TdxError::ScenarioValidation(format!(
                    "component {i} has a negative mixture weight"
                )));
            }
        }
        // Linear interpolation keeps weights in [0, 1] and their sum at 1
        // exactly when both endpoint vectors are proper.
        for (label, sum) in [
            ("t=0", self.components.iter().map(|c| c.w0).sum::<f64>()),
            ("t=1", self.components.iter().map(|c| c.w1).sum::<f64>()),
        ] {
            if (sum - 1.0).abs() > 1e-9 {
                return Err(TdxError::ScenarioValidation(format!(
                    "mixture weights at {label} sum to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let scenario: DriftScenario = serde_json::from_reader(reader)
            .map_err(|e| TdxError::Schema(format!("scenario file does not parse: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Exact mixture density evaluator for this scenario.
    pub fn true_density(&self) -> TrueDensity {
        TrueDensity {
            components: self.components.clone(),
        }
    }

    /// The equally spaced time grid `0, 1/(P-1), ..., 1`.
    pub fn time_grid(&self) -> Vec<f64> {
        let p = self.n_time_points;
        (0..p).map(|k| k as f64 / (p - 1) as f64).collect()
    }
}

/// Exact time-dependent mixture density of a scenario.
#[derive(Debug, Clone)]
pub struct TrueDensity {
    components: Vec<ScenarioComponent>,
}

impl TrueDensity {
    pub fn density(&self, x: f64, t: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight_at(t) * c.params_at(t).pdf(x))
            .sum()
    }

    pub fn curve(&self, t: f64, grid: &[f64]) -> crate::curve::DensityCurve {
        let values: Vec<f64> = grid.iter().map(|&x| self.density(x, t)).collect();
        crate::curve::DensityCurve::new(grid.to_vec(), values).expect("mixture density curve")
    }
}

/// Generates the stream: instances are split as evenly as possible over
/// the time grid (counts differ by at most one), each time point uses its
/// own derived seed, and within a time point each instance first draws
/// its component by the time-t weights and then a skew-normal variate.
pub fn generate_stream(
    scenario: &DriftScenario,
    seed: u64,
) -> Result<(Vec<StreamSample>, TrueDensity)> {
    scenario.validate()?;
    let times = scenario.time_grid();
    let p = times.len();
    let base = scenario.n_instances / p;
    let extra = scenario.n_instances % p;

    let mut samples = Vec::with_capacity(scenario.n_instances);
    for (k, &t) in times.iter().enumerate() {
        let count = base + usize::from(k < extra);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        let weights: Vec<f64> = scenario.components.iter().map(|c| c.weight_at(t)).collect();
        let params: Vec<SkewNormalParams> =
            scenario.components.iter().map(|c| c.params_at(t)).collect();
        for _ in 0..count {
            let component = pick_component(&weights, rng.random::<f64>());
            let x = sample_skew_normal(&params[component], &mut rng);
            samples.push(StreamSample { t, x });
        }
    }
    Ok((samples, scenario.true_density()))
}

fn pick_component(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    weights.len() - 1
}
