//! Desk-scale laboratory for data-attribution-based compensation and the
//! adversarial manipulation of it.
//!
//! The crate models a two-round data marketplace: a model is trained on an
//! initial corpus, contributors add new points, the model is retrained, and
//! each contributor is paid in proportion to how often their points land in
//! the per-validation-point top-k of a training-data attribution score.
//! Everything needed to simulate that pipeline end to end lives here:
//!
//! - [`data`] — synthetic Gaussian-blob datasets, IDX/CSV ingestion, and the
//!   contribution split (initial corpus, benign/adversary contributions,
//!   validation sets, shadow pool).
//! - [`model`] — deterministic little models (logistic regression, MLP,
//!   small CNN) with analytic gradients, Gauss-Newton curvature products,
//!   and softmax probability queries.
//! - [`attribution`] — influence functions via conjugate-gradient inverse
//!   Hessian-vector products, gradient dot products, randomly projected
//!   kernel attribution, and truncated Monte-Carlo Shapley values.
//! - [`compensation`] — the top-k payout mechanism and its change metrics.
//! - [`shadow`] — the transfer attack that trains an ensemble of shadow
//!   models and ascends a differentiable surrogate of the payout.
//! - [`outlier`] — black-box (query-only) perturbation attacks plus
//!   white-box gradient baselines.
//! - [`theory`] — numerical verification that attribution scores are stable
//!   to single-point perturbations at the predicted O(1/n) rate.
//! - [`experiment`] — a reproducible harness tying the stages together with
//!   manifests, content hashes, and report tables.
//!
//! All randomness flows through explicitly seeded ChaCha8 generators and all
//! parallelism preserves deterministic assembly order, so any run is
//! reproducible bit-for-bit from its manifest.

pub mod attribution;
pub mod compensation;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod outlier;
pub mod shadow;
pub(crate) mod snapshot;
pub mod theory;

pub use error::{CoreError, Result};
