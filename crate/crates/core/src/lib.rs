//! Analytic theory and Monte-Carlo engine for bias, variance, and double
//! descent in two over-parameterized regression models: ridge(-less) linear
//! regression and the random nonlinear features model (a two-layer network
//! whose first layer is random and frozen).
//!
//! The crate is organized around the pipeline used by the CLI:
//!
//! * [`config`] — experiment geometry, teacher/student specification, and the
//!   deterministic RNG contract shared by every sampler.
//! * [`nonlinearity`] — standard-Gaussian moments of scalar nonlinearities and
//!   the derived variance constants that parameterize the closed forms.
//! * [`datagen`] — teacher-model sampling (features, ground truth, noise) and
//!   the decomposition of labels into linear and nonlinear parts.
//! * [`fitkit`] — hidden features, primal/dual ridge solves, test error, and
//!   empirical susceptibility traces.
//! * [`theory`] — closed-form training/test error and the ensemble-averaged
//!   bias-variance decomposition for both architectures, at finite ridge and
//!   in the ridge-less limit.
//! * [`spectra`] — analytic eigenvalue densities of the kernel matrix
//!   (Marchenko-Pastur and the quartic Green's-function spectrum), support
//!   edges, and the zero-eigenvalue weight.
//! * [`mc`] — the Monte-Carlo harness: paired-training-set decomposition
//!   estimates, kernel eigenvalue histograms, and minimum-principal-component
//!   spread reports.

pub mod config;
pub mod datagen;
pub mod error;
pub mod fitkit;
pub mod mc;
pub mod nonlinearity;
pub mod poly;
pub mod spectra;
pub mod theory;

pub use config::{
    Architecture, ExperimentConfig, ExperimentShape, RngContract, StudentSpec, TeacherSpec,
};
pub use error::{Error, Result};
pub use nonlinearity::{DerivedVariances, NonlinearityStats, Registry, Role};
pub use theory::{EnsembleAverages, Susceptibilities, TheoryResult};

/// Formats a float with 17 significant digits, enough to round-trip `f64`.
/// Divergent values serialize as the literal `inf`.
pub fn fmt_g17(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{x:.16e}")
    }
}
