//! Stochastic gradient descent read as implicit variational inference.
//!
//! Starting from `theta_0 ~ N(0, sigma0^2 I)`, every SGD step pushes the
//! distribution of parameters through the update map. Tracking
//! `log |det J|` of each step gives the entropy of the implied distribution
//! `q_t`, and `log p(theta_t, x) + S[q_t]` is a single-sample estimate of the
//! variational lower bound on `log p(x)`, available online during training.
//!
//! * [`model`]: objectives with value, gradient and exact Hessian-vector products.
//! * [`entropy`]: exact and linear-time estimates of the per-step entropy change.
//! * [`optimizer`]: the training loop, gradient warping and ensembles.
//! * [`bound`]: the bound itself plus closed-form references for conjugate models.
//! * [`data`]: dataset loading, generation and splitting.

pub mod batch;
pub mod bound;
pub mod data;
pub mod entropy;
pub mod error;
pub mod model;
pub mod optimizer;
pub mod params;
pub mod rng;

pub use batch::{BatchMode, BatchSchedule, BatchSelector};
pub use bound::{analytic_evidence, analytic_pushforward_entropy, bound_at, energy_estimate, BoundReport, EvidenceOracle};
pub use data::Dataset;
pub use entropy::{EntropyDelta, EstimatorMode, StepJacobianSpec};
pub use error::{Error, Result};
pub use model::{Objective, ObjectiveKind};
pub use optimizer::{run_ensemble, run_training, EntropyLedger, RunConfig, TrainTrace};
pub use params::{GaussianPrior, ParamVector};
