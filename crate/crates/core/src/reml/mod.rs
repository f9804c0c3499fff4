//! Restricted maximum likelihood for the random-regressions model.
//!
//! Two engines share one parameterization and one optimizer:
//!
//! * [`fit_balanced`] works from the sufficient statistics of a balanced
//!   design, so one likelihood evaluation is O(1);
//! * [`fit_general`] handles unbalanced clusters with extra fixed-effect
//!   columns, assembling the likelihood cluster by cluster.
//!
//! Both optimize over the relative parameters `θ = (λ_c, λ_s, ρ)` with
//! `λ_c = σ_c / σ_e`, `λ_s = σ_s / σ_e`, inside the box `λ ≥ 0`, `|ρ| ≤ 1`.
//! `σ²_e` is profiled out in closed form. Zero variances and `|ρ| = 1` are
//! ordinary points of that box, so boundary estimates come out exactly.
//!
//! Log-likelihood values omit the additive constant `-(n - p)/2 · ln 2π`.
//! The balanced and general forms differ from each other by a further
//! data-independent constant (see [`general_constant_offset`]); only
//! differences across parameter values are meaningful.

mod balanced;
mod dense;
mod general;
pub mod optimize;

use serde::{Deserialize, Serialize, Serializer};

use crate::model_system::VarianceParams;

pub use balanced::{
    fit_balanced, log_restricted_likelihood, log_rl_gradient, profile_constant, profile_sigma2_r,
    profiled_log_rl, relative_objective,
};
pub use dense::{log_rl_dense_oracle, log_rl_dense_oracle_general};
pub use general::{eblups, fit_general, general_constant_offset, log_rl_general, ClusterDesign, GeneralDataset, GeneralFitResult};

/// Outcome category of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Classification {
    Good,
    RhoMinusOne,
    RhoPlusOne,
    /// A random-effect variance is zero; the correlation is undefined.
    ZeroVariance,
}

impl Classification {
    pub const ALL: [Classification; 4] = [
        Classification::Good,
        Classification::RhoMinusOne,
        Classification::RhoPlusOne,
        Classification::ZeroVariance,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Good => "GOOD",
            Classification::RhoMinusOne => "RHO_MINUS_ONE",
            Classification::RhoPlusOne => "RHO_PLUS_ONE",
            Classification::ZeroVariance => "ZERO_VARIANCE",
        }
    }

    pub fn is_boundary(&self) -> bool {
        *self != Classification::Good
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Classification {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Classification::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| crate::Error::invalid(format!("unknown classification `{s}`")))
    }
}

/// Thresholds that turn a maximizer into a [`Classification`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyTolerances {
    /// `ρ ≤ -1 + rho` counts as `ρ̂ = -1` (and symmetrically for `+1`).
    pub rho: f64,
    /// A random-effect variance below `variance_ratio · σ²_e` counts as zero.
    pub variance_ratio: f64,
}

impl Default for ClassifyTolerances {
    fn default() -> Self {
        Self {
            rho: 1e-6,
            variance_ratio: 1e-10,
        }
    }
}

impl ClassifyTolerances {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.rho >= 0.0 && self.rho < 1.0) {
            return Err(crate::Error::invalid(format!("rho tolerance must lie in [0, 1), got {}", self.rho)));
        }
        if !(self.variance_ratio >= 0.0 && self.variance_ratio.is_finite()) {
            return Err(crate::Error::invalid("variance tolerance must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Which random-effect variance sits at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryVariance {
    Sigma2C,
    Sigma2S,
    Both,
}

fn zero_variances(vp: &VarianceParams, tol: &ClassifyTolerances) -> Option<BoundaryVariance> {
    let limit = tol.variance_ratio * vp.sigma2_e;
    match (vp.sigma2_c <= limit, vp.sigma2_s <= limit) {
        (true, true) => Some(BoundaryVariance::Both),
        (true, false) => Some(BoundaryVariance::Sigma2C),
        (false, true) => Some(BoundaryVariance::Sigma2S),
        (false, false) => None,
    }
}

/// Classifies a maximizer. A zero variance takes precedence over the
/// correlation categories.
pub fn classify(vp: &VarianceParams, tol: &ClassifyTolerances) -> Classification {
    if zero_variances(vp, tol).is_some() {
        Classification::ZeroVariance
    } else if vp.rho <= -1.0 + tol.rho {
        Classification::RhoMinusOne
    } else if vp.rho >= 1.0 - tol.rho {
        Classification::RhoPlusOne
    } else {
        Classification::Good
    }
}

/// Optimizer and classification settings shared by both engines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Deterministic multistart count (1 to 5).
    pub n_starts: usize,
    pub nelder_mead: optimize::NelderMeadOptions,
    /// Maximum golden-section polishing cycles after each Nelder–Mead run.
    pub polish_cycles: usize,
    pub tolerances: ClassifyTolerances,
    /// Fit degenerate data (`RSS = 0`, `T = 0`) at `σ²_e = 1e-12` instead of failing.
    pub degenerate_floor: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_starts: 5,
            nelder_mead: optimize::NelderMeadOptions::default(),
            polish_cycles: 60,
            tolerances: ClassifyTolerances::default(),
            degenerate_floor: false,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> crate::Result<()> {
        if !(1..=5).contains(&self.n_starts) {
            return Err(crate::Error::invalid("n_starts must be between 1 and 5"));
        }
        let nm = &self.nelder_mead;
        if nm.max_evals == 0 || !(nm.f_tol > 0.0) || !(nm.x_tol > 0.0) {
            return Err(crate::Error::invalid("optimizer tolerances must be positive"));
        }
        self.tolerances.validate()
    }
}

/// Floor used for `σ²_e` when fitting degenerate data under
/// [`FitOptions::degenerate_floor`].
pub const DEGENERATE_SIGMA2_E: f64 = 1e-12;

/// Extra information about how a fit was reached. Not part of the JSON record.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitDiagnostics {
    /// Number of multistarts whose optima differ from the best by more than 1e-6
    /// in log RL. Non-zero values indicate multimodality.
    pub n_inferior_starts: usize,
    /// For boundary fits: how much the log RL drops when the boundary
    /// coordinate is moved to the nearest "interior" probe point
    /// (`|ρ| = 0.99`, or a variance of `1e-4 σ²_e`), the other parameters
    /// re-optimized only through `σ²_e`. Small values mean a flat likelihood.
    pub boundary_drop: Option<f64>,
    /// Relative parameters `(λ_c, λ_s, ρ)` at the maximizer.
    pub theta: [f64; 3],
}

/// Result of a balanced fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    #[serde(flatten)]
    pub params: VarianceParams,
    #[serde(serialize_with = "serialize_classification")]
    pub classification: Classification,
    pub log_rl: f64,
    pub converged: bool,
    pub n_evals: usize,
    pub boundary_variance: Option<BoundaryVariance>,
    #[serde(skip)]
    pub diagnostics: FitDiagnostics,
}

fn serialize_classification<S: Serializer>(c: &Classification, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(c.as_str())
}

impl FitResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

/// Maximizer in relative coordinates before it is turned into a result.
#[derive(Debug, Clone)]
pub(crate) struct RelativeOptimum {
    pub theta: [f64; 3],
    pub n_evals: usize,
    pub converged: bool,
    pub n_inferior_starts: usize,
}

/// Relative covariance factor `Λ` with `Σ / σ²_e = ΛΛ'`.
pub(crate) fn relative_factor(theta: &[f64; 3]) -> [[f64; 2]; 2] {
    let [lc, ls, rho] = *theta;
    [[lc, 0.0], [rho * ls, ls * (1.0 - rho * rho).max(0.0).sqrt()]]
}

pub(crate) fn params_from_theta(sigma2_e: f64, theta: &[f64; 3]) -> VarianceParams {
    VarianceParams {
        sigma2_e,
        sigma2_c: sigma2_e * theta[0] * theta[0],
        sigma2_s: sigma2_e * theta[1] * theta[1],
        rho: theta[2],
    }
}

/// Runs the multistart optimizer over `θ = (λ_c, λ_s, ρ)`.
///
/// Starts are the center `theta0` plus four corners of the box
/// `[λ/2, 2λ] × [λ/2, 2λ] × [ρ - 0.5, ρ + 0.5]` (both λ low or both high,
/// each with both ρ corners), a set that is symmetric under `ρ → -ρ`.
pub(crate) fn maximize_relative<F: FnMut(&[f64]) -> f64>(
    f: F,
    theta0: [f64; 3],
    opts: &FitOptions,
) -> RelativeOptimum {
    use optimize::{nelder_mead_core, polish, Bounds, Counted};

    let bounds = Bounds::new(vec![0.0, 0.0, -1.0], vec![f64::INFINITY, f64::INFINITY, 1.0]);
    let [lc, ls, r0] = theta0;
    let r_lo = (r0 - 0.5).max(-0.95);
    let r_hi = (r0 + 0.5).min(0.95);
    let starts = [
        [lc, ls, r0],
        [0.5 * lc, 0.5 * ls, r_lo],
        [0.5 * lc, 0.5 * ls, r_hi],
        [2.0 * lc, 2.0 * ls, r_lo],
        [2.0 * lc, 2.0 * ls, r_hi],
    ];

    let mut obj = Counted::new(f);
    let mut results: Vec<([f64; 3], f64, bool)> = Vec::with_capacity(opts.n_starts);
    for start in starts.iter().take(opts.n_starts) {
        let step = [
            0.25 * start[0].max(1e-3),
            0.25 * start[1].max(1e-3),
            if start[2] > 0.0 { -0.2 } else { 0.2 },
        ];
        let (mut x, mut value, mut converged) = nelder_mead_core(&mut obj, start, &step, &bounds, &opts.nelder_mead);
        polish(&mut obj, &mut x, &mut value, &bounds, 1e-14, opts.polish_cycles);
        // One restart from the polished point catches simplices that collapsed
        // against a face of the box away from the optimum.
        let step2 = [0.05 * x[0].max(1e-3), 0.05 * x[1].max(1e-3), if x[2] > 0.0 { -0.05 } else { 0.05 }];
        let (x2, v2, c2) = nelder_mead_core(&mut obj, &x, &step2, &bounds, &opts.nelder_mead);
        if v2 > value {
            x = x2;
            value = v2;
            polish(&mut obj, &mut x, &mut value, &bounds, 1e-14, opts.polish_cycles);
        }
        converged = converged || c2;
        results.push(([x[0], x[1], x[2]], value, converged));
    }

    let best = results
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("at least one start");
    let (theta, value, converged) = results[best];
    let n_inferior_starts = results.iter().filter(|r| value - r.1 > 1e-6).count();
    RelativeOptimum {
        theta,
        n_evals: obj.evals,
        converged: converged && value.is_finite(),
        n_inferior_starts,
    }
}
