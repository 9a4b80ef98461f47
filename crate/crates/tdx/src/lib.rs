//! Temporal density extrapolation for univariate data streams.
//!
//! The density of a drifting stream is modelled as a fixed expansion of
//! Gaussian basis functions whose mixture weights evolve over time: the
//! weights are mapped to an unconstrained space with an isometric
//! log-ratio transform, modelled there by polynomial regression, and
//! fitted by temporally weighted maximum likelihood with a multistart
//! quasi-Newton solver. A fitted model evaluates the density at any
//! `(x, t)`, including time points past the training window.
//!
//! The crate also ships the experiment toolkit around the model:
//! synthetic drift generators, a spline-smoothed histogram baseline for
//! real data, MAE/latency scoring with Wilcoxon significance tests, and
//! two-phase hyperparameter selection. The `tdx` binary exposes all of it
//! as subcommands.
//!
//! ```
//! use tdx::{fit_tdx, Hyperparams, SolverConfig};
//!
//! // A toy stream whose mass moves right over time.
//! let xs: Vec<f64> = (0..200).map(|i| 1.0 + (i as f64) * 0.01).collect();
//! let ts: Vec<f64> = (0..200).map(|i| (i as f64) / 199.0).collect();
//!
//! let hp = Hyperparams { m: 6, h: 0.8, r: 1, lambda: 1.0, kappa: 0.5 };
//! let cfg = SolverConfig { seed: 7, ..SolverConfig::default() };
//! let (model, _report) = fit_tdx(&xs, &ts, &hp, &cfg, None).unwrap();
//!
//! // Density forecast half a window past the training data.
//! let f = model.density_at(2.5, 1.5).unwrap();
//! assert!(f.is_finite() && f > 0.0);
//! ```

pub mod baseline;
pub mod basis;
pub mod cli;
pub mod compositional;
pub mod curve;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod modelselect;
pub mod objective;
pub mod optimizer;
pub mod seeding;
pub mod stats;
pub mod stream;

pub use basis::BasisSet;
pub use compositional::{Composition, IlrBasis};
pub use curve::DensityCurve;
pub use datagen::{generate_stream, DriftScenario, SkewNormalParams, TrueDensity};
pub use error::{Result, TdxError};
pub use evaluation::{
    mae, run_experiment, wilcoxon_signed_rank, ExperimentPlan, ExperimentReport, KappaPolicy,
    TruthSource,
};
pub use model::{forecast_grid, CoefficientMatrix, TdxModel};
pub use modelselect::{h_bounds, select_hyperparams, sensitivity_sweep, SearchSpace, SweepKind};
pub use objective::{FitData, Hyperparams};
pub use optimizer::{fit_static, fit_tdx, multistart_fit, FitReport, SolverConfig};
pub use stream::StreamSample;
