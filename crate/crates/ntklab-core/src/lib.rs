//! Numerical laboratory for two-layer ReLU networks in the NTK regime.
//!
//! The crate trains the antisymmetrically-initialized two-layer ReLU network
//! under discretized gradient flow, both on the empirical risk of a finite
//! sample and on the population risk over the uniform sphere (simulated by
//! Monte Carlo), and checks the quantities that the accompanying theory
//! predicts: exact eigenvalues of the analytical NTK operator, kernel
//! concentration, Gram-matrix eigenvalue events, exponential risk decay and
//! the benign-overfitting conjunction.
//!
//! Modules map one-to-one onto the subsystems:
//!
//! * [`sphere_data`] — uniform samples on the sphere, bounded regression
//!   functions and noise, the feature/label/noise containers.
//! * [`relu_net`] — the network itself: antisymmetric initialization,
//!   forward pass, gradient feature maps, the Khatri–Rao gradient matrix.
//! * [`ntk_kernel`] — analytical and empirical kernels, Gram matrices,
//!   operator-norm diagnostics.
//! * [`ntk_spectrum`] — Funk–Hecke eigenvalues of the analytical operator,
//!   Legendre polynomials in `d` dimensions, the quadrature oracle, and the
//!   accuracy plan (`λ_ε`, `L_ε`, `T_ε`).
//! * [`flow_engine`] — explicit-Euler gradient flow along the empirical,
//!   population and joint trajectories, with risk and movement diagnostics.
//! * [`assumption_ledger`] — the thirteen parameter conditions, margins and
//!   the depth auto-selector.
//! * [`verify_harness`] — seed-frequency suites that aggregate the above
//!   into machine-readable reports.

pub mod assumption_ledger;
pub mod error;
pub mod flow_engine;
pub mod linalg;
pub mod ntk_kernel;
pub mod ntk_spectrum;
pub mod relu_net;
pub mod rng;
pub mod sphere_data;
pub mod verify_harness;

pub use assumption_ledger::{AssumptionReport, ParamTuple};
pub use error::{Error, Result};
pub use flow_engine::{FlowConfig, FlowOutcome, Trajectory};
pub use ntk_kernel::GramMatrix;
pub use ntk_spectrum::{EpsilonPlan, SpectrumTable};
pub use relu_net::{GradientMatrix, NetworkState};
pub use sphere_data::{Dataset, NoiseModel, RegressionFunction};
pub use verify_harness::SuiteReport;
