//! Closed-form predictor of a `ρ̂ = -1` boundary estimate.
//!
//! The predictor is the slope at `ρ = -1` of the profiled log RL in `(r, ρ)`
//! after every data-dependent quantity is replaced by its expectation under
//! the model (`RSS → N(s-2)σ²_e`, `T → (N-1)σ²_r [[s+r, √(sq)ρ], [√(sq)ρ, q+r]]`).
//! Writing `A = (1 + r/s)(1 + r/q)` and `c = (N-1) / N(s-2)`,
//!
//! ```text
//! pred = (Ns-N-1)/(A-1) · [1 - (Ns-2)/(Ns-N-1) · (1 - cρ) / (1 + 2c(A+ρ)/(A-1))]
//! ```
//!
//! which simplifies to `(N-1)(1+ρ)(eB + 2(1+c)) / [B(eB + 2c(1+ρ))]` with
//! `B = A - 1` and `e = 1 + 2c`. Small values go with frequent `ρ̂ = -1`.
//! The `ρ̂ = +1` predictor is the same function of `-ρ`.
//!
//! [`PredictorForm::AsPrinted`] divides the first factor by `A` instead of
//! `A - 1`, as the formula is sometimes quoted; [`expected_profile_slope`]
//! computes the slope by brute force and agrees with the default form only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Table;
use crate::model_system::{moment_q, DesignSpec, SuffStats};
use crate::reml::profiled_log_rl;
use crate::rng;

/// Validated `(N, s, ρ, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorInputs {
    n_clusters: usize,
    cluster_size: usize,
    rho: f64,
    r: f64,
}

impl PredictorInputs {
    /// `N ≥ 2`, odd `s ≥ 3`, `-1 < ρ < 1`, `0 < r < ∞`.
    pub fn new(n_clusters: usize, cluster_size: usize, rho: f64, r: f64) -> Result<Self> {
        DesignSpec::new(n_clusters, cluster_size)?;
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::invalid(format!("rho must lie in (-1, 1), got {rho}")));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::invalid(format!("r must be positive and finite, got {r}")));
        }
        Ok(Self {
            n_clusters,
            cluster_size,
            rho,
            r,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn cluster_size(&self) -> usize {
        self.cluster_size
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn q(&self) -> f64 {
        moment_q(self.cluster_size).expect("validated at construction")
    }

    /// The same inputs with `ρ` negated.
    pub fn mirrored(&self) -> Self {
        Self { rho: -self.rho, ..*self }
    }
}

/// Which algebraic form of the predictor to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorForm {
    /// First factor `(Ns-N-1) / (A-1)`; reproduces the published tables.
    #[default]
    Corrected,
    /// First factor `(Ns-N-1) / A`.
    AsPrinted,
}

/// `ln(x·e^{ln_b} + k)` without forming `e^{ln_b}` when it is huge.
fn ln_affine(ln_b: f64, x: f64, k: f64) -> f64 {
    if ln_b > 0.0 {
        ln_b + (x + k * (-ln_b).exp()).ln()
    } else {
        (x * ln_b.exp() + k).ln()
    }
}

/// Natural log of the `ρ̂ = -1` predictor.
pub fn ln_predictor(inputs: &PredictorInputs, form: PredictorForm) -> f64 {
    let n = inputs.n_clusters as f64;
    let s = inputs.cluster_size as f64;
    let q = inputs.q();
    let (rho, r) = (inputs.rho, inputs.r);
    let c = (n - 1.0) / (n * (s - 2.0));
    let e = 1.0 + 2.0 * c;
    // B = (1 + r/s)(1 + r/q) - 1 = r (1/s + 1/q + r/sq).
    let ln_b = r.ln() + (1.0 / s + 1.0 / q + r / (s * q)).ln();
    let ln_pred = (n - 1.0).ln() + (1.0 + rho).ln() + ln_affine(ln_b, e, 2.0 * (1.0 + c))
        - ln_b
        - ln_affine(ln_b, e, 2.0 * c * (1.0 + rho));
    match form {
        PredictorForm::Corrected => ln_pred,
        PredictorForm::AsPrinted => ln_pred + ln_b - ((r / s).ln_1p() + (r / q).ln_1p()),
    }
}

/// Predictor of `ρ̂ = -1` in the given form.
pub fn predictor_minus_one_with(inputs: &PredictorInputs, form: PredictorForm) -> f64 {
    ln_predictor(inputs, form).exp()
}

/// Predictor of `ρ̂ = +1`: the `-1` predictor at `-ρ`.
pub fn predictor_plus_one_with(inputs: &PredictorInputs, form: PredictorForm) -> f64 {
    predictor_minus_one_with(&inputs.mirrored(), form)
}

/// Predictor of `ρ̂ = -1` (corrected form). Always strictly positive in exact
/// arithmetic; the floating-point value underflows to 0 only below `1e-308`.
pub fn predictor_minus_one(inputs: &PredictorInputs) -> f64 {
    predictor_minus_one_with(inputs, PredictorForm::Corrected)
}

/// Predictor of `ρ̂ = +1` (corrected form).
pub fn predictor_plus_one(inputs: &PredictorInputs) -> f64 {
    predictor_plus_one_with(inputs, PredictorForm::Corrected)
}

/// `log₁₀` of the `-1` predictor; finite even where the predictor underflows.
pub fn log10_predictor_minus_one(inputs: &PredictorInputs, form: PredictorForm) -> f64 {
    ln_predictor(inputs, form) / std::f64::consts::LN_10
}

/// `log₁₀` of the `+1` predictor.
pub fn log10_predictor_plus_one(inputs: &PredictorInputs, form: PredictorForm) -> f64 {
    log10_predictor_minus_one(&inputs.mirrored(), form)
}

/// Slope in `ρ` at `ρ = -1` of the profiled log RL evaluated at expected
/// sufficient statistics (`σ²_r = 1`), by a second-order one-sided finite
/// difference.
///
/// This is the quantity the predictor simplifies; it matches the
/// [`PredictorForm::Corrected`] value to about six significant digits.
pub fn expected_profile_slope(inputs: &PredictorInputs) -> Result<f64> {
    let design = DesignSpec::new(inputs.n_clusters, inputs.cluster_size)?;
    let (n, s, q, r, rho) = (
        inputs.n_clusters as f64,
        inputs.cluster_size as f64,
        inputs.q(),
        inputs.r,
        inputs.rho,
    );
    let off = (n - 1.0) * (s * q).sqrt() * rho;
    let ss = SuffStats {
        rss: n * (s - 2.0) * r,
        t_outer: [[(n - 1.0) * (s + r), off], [off, (n - 1.0) * (q + r)]],
        sum_sq: 1.0,
        design,
    };
    let h = 1e-5;
    let f = |x: f64| profiled_log_rl(&ss, r, x);
    Ok((-3.0 * f(-1.0)? + 4.0 * f(-1.0 + h)? - f(-1.0 + 2.0 * h)?) / (2.0 * h))
}

/// Marginal grids for [`predictor_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawSpec {
    pub n_clusters: Vec<usize>,
    pub cluster_size: Vec<usize>,
    pub rho: Vec<f64>,
    pub log10_r: Vec<f64>,
}

impl Default for DrawSpec {
    /// `N ∈ {50, 150, …, 1050}`, `s ∈ {5, 15, …, 105}`, `ρ ∈ {-0.9, …, -0.1}`,
    /// `log₁₀ r ∈ {-2, -1.6, …, 2}`.
    fn default() -> Self {
        Self {
            n_clusters: (0..11).map(|k| 50 + 100 * k).collect(),
            cluster_size: (0..11).map(|k| 5 + 10 * k).collect(),
            rho: (1..=9).rev().map(|k| -(k as f64) / 10.0).collect(),
            log10_r: (0..11).map(|k| -2.0 + 0.4 * k as f64).collect(),
        }
    }
}

impl DrawSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters.is_empty() || self.cluster_size.is_empty() || self.rho.is_empty() || self.log10_r.is_empty()
        {
            return Err(Error::invalid("every predictor-sweep grid needs at least one level"));
        }
        for &n in &self.n_clusters {
            for &s in &self.cluster_size {
                DesignSpec::new(n, s)?;
            }
        }
        for &rho in &self.rho {
            for &lr in &self.log10_r {
                PredictorInputs::new(self.n_clusters[0], self.cluster_size[0], rho, 10f64.powf(lr))?;
            }
        }
        Ok(())
    }
}

/// One draw of the predictor sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub draw: usize,
    #[serde(rename = "N")]
    pub n_clusters: usize,
    #[serde(rename = "s")]
    pub cluster_size: usize,
    pub rho: f64,
    pub log10_r: f64,
    pub log10_pred_m1: f64,
    pub log10_pred_p1: f64,
}

/// Draws `n_draws` independent `(N, s, ρ, log₁₀ r)` tuples, each coordinate
/// uniform over its grid, and evaluates both predictors (corrected form).
pub fn predictor_sweep(spec: &DrawSpec, n_draws: usize, seed: u64) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut rng = rng::stream(rng::replicate_seed(seed, "predictor-sweep", 0));
    (0..n_draws)
        .map(|draw| {
            let n = spec.n_clusters[rng.random_range(0..spec.n_clusters.len())];
            let s = spec.cluster_size[rng.random_range(0..spec.cluster_size.len())];
            let rho = spec.rho[rng.random_range(0..spec.rho.len())];
            let log10_r = spec.log10_r[rng.random_range(0..spec.log10_r.len())];
            let inputs = PredictorInputs::new(n, s, rho, 10f64.powf(log10_r))?;
            Ok(SweepRow {
                draw: draw + 1,
                n_clusters: n,
                cluster_size: s,
                rho,
                log10_r,
                log10_pred_m1: log10_predictor_minus_one(&inputs, PredictorForm::Corrected),
                log10_pred_p1: log10_predictor_plus_one(&inputs, PredictorForm::Corrected),
            })
        })
        .collect()
}

/// Sweep rows as an ANOVA input table with columns
/// `N, s, rho, log10_r, log10_pred_m1, log10_pred_p1`.
pub fn sweep_table(rows: &[SweepRow]) -> Result<Table> {
    let col = |f: fn(&SweepRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    Table::new()
        .with_column("N", col(|r| r.n_clusters as f64))?
        .with_column("s", col(|r| r.cluster_size as f64))?
        .with_column("rho", col(|r| r.rho))?
        .with_column("log10_r", col(|r| r.log10_r))?
        .with_column("log10_pred_m1", col(|r| r.log10_pred_m1))?
        .with_column("log10_pred_p1", col(|r| r.log10_pred_p1))
}

/// Writes sweep rows as CSV (`draw,N,s,rho,log10_r,log10_pred_m1,log10_pred_p1`).
pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
