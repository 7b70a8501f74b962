//! Relativistic diffusions: coefficients, the auxiliary function ψ_β, the
//! limiting variance Σ_β² and Monte Carlo checks of the central limit theorem.

pub mod coefficients;
pub mod error;
pub mod interp;
pub mod ode;
pub mod psi;
pub mod quadrature;
pub mod simulator;
pub mod special;
pub mod stats;
pub mod variance;

pub use coefficients::{
    builtin_dh, builtin_roup, check_hypotheses, derive, resolve_model, DerivedCoefficients, HypothesesReport,
    ModelFile, ModelKind, ModelSpec,
};
pub use error::{Error, Result};
pub use psi::{
    apply_psi, build_pair, build_zeta1, build_zeta2, solve_psi, solve_psi_d1, solve_psi_general, wronskian,
    HomogeneousPair, PsiMethod, PsiSolution, RadialGrid,
};
pub use quadrature::{integrate, integrate_to_infinity, IntegralValue, QuadratureConfig};
pub use simulator::{
    clt_check, clt_report, equilibrium_bin_probabilities, equilibrium_distance, estimate_msd, run_at,
    simulate_trajectory, sweep_beta, sweep_beta_detailed, EnsembleStats, SimConfig, SweepRow, Trajectory,
};
pub use special::{constant_a, e1, e1_square_moment};
pub use stats::{normality_report, NormalityReport};
pub use variance::{
    conjecture_2_over_2_plus_beta, sigma2_asymptotic, sigma2_dh_d1, sigma2_lemma2, sigma2_prop2, Regime,
    VarianceMethod, VarianceResult,
};
