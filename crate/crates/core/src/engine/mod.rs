//! Nested Laplace approximation: Gaussian approximations of the latent
//! field, hyperparameter exploration, marginals and marginal likelihood.

mod fit;
mod gaussian;
mod marginal;
mod simulate;
mod theta;

pub use gaussian::{GaussianApprox, NewtonOptions, Prepared};
pub use theta::{
    ccd_design, explore_theta, laplace_integral, maximize, mode_hessian, profile_theta, ExploreOptions, IntStrategy, LaplaceIntegral, ModeOptions, ModeResult,
    Objective, Standardization, ThetaNode,
};
pub use marginal::{emarginal, qmarginal, zmarginal, MarginalDensity, Summary, GRID_POINTS, GRID_SDS};
pub use fit::{
    fit, ComponentInfo, EngineConfig, FitResult, LatentStrategy, LinComb, ModeDiagnostics, NodeStats, SpdeInfo,
    Timings,
};
pub use simulate::{sample_spde_field, simulate, SimRow, SimulatedData, SimulationSpec};
