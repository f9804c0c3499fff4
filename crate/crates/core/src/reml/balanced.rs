//! Restricted likelihood of the balanced design from `(RSS, T)`.
//!
//! With `F = DΣD + σ²_e I₂` and `D = diag(√s, √q)`,
//!
//! ```text
//! ℓ = -N(s-2)/2 · ln σ²_e - RSS / 2σ²_e - (N-1)/2 · ln det F - ½ tr(F⁻¹T)
//! ```

use super::{
    classify, maximize_relative, params_from_theta, zero_variances, Classification, FitDiagnostics, FitOptions,
    FitResult, DEGENERATE_SIGMA2_E,
};
use crate::error::{Error, Result};
use crate::model_system::{SuffStats, VarianceParams};

type M2 = [[f64; 2]; 2];

fn det2(m: &M2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// `tr(A⁻¹B)` for symmetric 2×2 `A`, `B`, with `det A` supplied.
fn trace_inv_times(a: &M2, det_a: f64, b: &M2) -> f64 {
    (a[1][1] * b[0][0] - a[0][1] * b[1][0] - a[1][0] * b[0][1] + a[0][0] * b[1][1]) / det_a
}

fn inv2(m: &M2) -> M2 {
    let d = det2(m);
    [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
}

fn mul2(a: &M2, b: &M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn trace2(a: &M2) -> f64 {
    a[0][0] + a[1][1]
}

struct Dims {
    n: f64,
    s: f64,
    q: f64,
}

impl Dims {
    fn of(ss: &SuffStats) -> Self {
        Self {
            n: ss.design.n_clusters() as f64,
            s: ss.design.cluster_size() as f64,
            q: ss.design.q(),
        }
    }

    fn within_df(&self) -> f64 {
        self.n * (self.s - 2.0)
    }

    fn reml_df(&self) -> f64 {
        self.n * self.s - 2.0
    }
}

fn f_matrix(d: &Dims, vp: &VarianceParams) -> M2 {
    let sq = (d.s * d.q).sqrt();
    let cov = vp.rho * (vp.sigma2_c * vp.sigma2_s).sqrt();
    [
        [d.s * vp.sigma2_c + vp.sigma2_e, sq * cov],
        [sq * cov, d.q * vp.sigma2_s + vp.sigma2_e],
    ]
}

/// Log restricted likelihood at `vp`, additive constant omitted.
pub fn log_restricted_likelihood(ss: &SuffStats, vp: &VarianceParams) -> Result<f64> {
    if !(vp.sigma2_e > 0.0) {
        return Err(Error::NonFinite(format!(
            "log restricted likelihood needs sigma2_e > 0, got {}",
            vp.sigma2_e
        )));
    }
    vp.validate()?;
    let d = Dims::of(ss);
    let f = f_matrix(&d, vp);
    let det_f = det2(&f);
    let value = -0.5 * d.within_df() * vp.sigma2_e.ln() - ss.rss / (2.0 * vp.sigma2_e)
        - 0.5 * (d.n - 1.0) * det_f.ln()
        - 0.5 * trace_inv_times(&f, det_f, &ss.t_outer);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("log restricted likelihood at {vp:?}")))
    }
}

/// Analytic gradient of [`log_restricted_likelihood`] with respect to
/// `(σ²_e, σ²_c, σ²_s, ρ)`. Requires both random-effect variances positive.
pub fn log_rl_gradient(ss: &SuffStats, vp: &VarianceParams) -> Result<[f64; 4]> {
    vp.validate()?;
    if !(vp.sigma2_c > 0.0 && vp.sigma2_s > 0.0) {
        return Err(Error::invalid("gradient requires positive random-effect variances"));
    }
    let d = Dims::of(ss);
    let f = f_matrix(&d, vp);
    let fi = inv2(&f);
    let w = mul2(&mul2(&fi, &ss.t_outer), &fi);
    let (sc, ss_) = (vp.sigma2_c.sqrt(), vp.sigma2_s.sqrt());
    let sq = (d.s * d.q).sqrt();

    // dF for each coordinate, already sandwiched by D.
    let d_e: M2 = [[1.0, 0.0], [0.0, 1.0]];
    let off_c = sq * vp.rho * ss_ / (2.0 * sc);
    let d_c: M2 = [[d.s, off_c], [off_c, 0.0]];
    let off_s = sq * vp.rho * sc / (2.0 * ss_);
    let d_s: M2 = [[0.0, off_s], [off_s, d.q]];
    let d_r: M2 = [[0.0, sq * sc * ss_], [sq * sc * ss_, 0.0]];

    let g = |df: &M2| -0.5 * (d.n - 1.0) * trace2(&mul2(&fi, df)) + 0.5 * trace2(&mul2(&w, df));
    let g_e = -0.5 * d.within_df() / vp.sigma2_e + ss.rss / (2.0 * vp.sigma2_e * vp.sigma2_e) + g(&d_e);
    Ok([g_e, g(&d_c), g(&d_s), g(&d_r)])
}

/// Log RL with `σ²_e` profiled out, as a function of `θ = (λ_c, λ_s, ρ)`.
///
/// Returns `(ℓ(σ̂²_e(θ), θ), σ̂²_e(θ))` where
/// `σ̂²_e(θ) = [RSS + tr(F̃⁻¹T)] / (Ns - 2)` and `F̃ = DΣ̃D + I₂`. The value equals
/// [`log_restricted_likelihood`] at the corresponding absolute parameters.
/// Outside the box, or for degenerate data, the value is `-inf`.
pub fn relative_objective(ss: &SuffStats, theta: &[f64; 3]) -> (f64, f64) {
    let [lc, ls, rho] = *theta;
    if !(lc >= 0.0 && ls >= 0.0 && (-1.0..=1.0).contains(&rho)) {
        return (f64::NEG_INFINITY, f64::NAN);
    }
    let d = Dims::of(ss);
    let cross = (d.s * d.q).sqrt() * rho * lc * ls;
    let f = [[1.0 + d.s * lc * lc, cross], [cross, 1.0 + d.q * ls * ls]];
    let det_f = det2(&f);
    let quad = ss.rss + trace_inv_times(&f, det_f, &ss.t_outer);
    let df = d.reml_df();
    if !(quad > 0.0 && det_f > 0.0) {
        return (f64::NEG_INFINITY, f64::NAN);
    }
    let sigma2_e = quad / df;
    let value = -0.5 * df * sigma2_e.ln() - 0.5 * df - 0.5 * (d.n - 1.0) * det_f.ln();
    (value, sigma2_e)
}

fn check_ratio(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("variance ratio r must be positive and finite, got {r}")))
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::invalid(format!("rho must lie in [-1, 1], got {rho}")))
    }
}

/// `RSS / r + tr(M⁻¹T)` with `M = DΣ̃D + rI₂`, `Σ̃ = [[1, ρ], [ρ, 1]]`.
fn profile_bracket(ss: &SuffStats, d: &Dims, r: f64, rho: f64) -> (f64, f64) {
    let cross = (d.s * d.q).sqrt() * rho;
    let m = [[d.s + r, cross], [cross, d.q + r]];
    let det_m = det2(&m);
    (ss.rss / r + trace_inv_times(&m, det_m, &ss.t_outer), det_m)
}

/// Maximizing `σ²_r` of the `σ²_c = σ²_s = σ²_r` log RL given `r = σ²_e / σ²_r`
/// and `ρ`.
pub fn profile_sigma2_r(ss: &SuffStats, r: f64, rho: f64) -> Result<f64> {
    check_ratio(r)?;
    check_rho(rho)?;
    let d = Dims::of(ss);
    let (bracket, _) = profile_bracket(ss, &d, r, rho);
    Ok(bracket / d.reml_df())
}

/// Profiled log RL in `(r, ρ)`:
///
/// ```text
/// -N(s-2)/2 · ln r - (N-1)/2 · ln[(s+r)(q+r) - sqρ²] - (Ns-2)/2 · ln[RSS/r + tr(M⁻¹T)]
/// ```
///
/// This drops the constant [`profile_constant`]: adding it gives
/// [`log_restricted_likelihood`] at `σ²_c = σ²_s = σ̂²_r`, `σ²_e = r σ̂²_r`.
pub fn profiled_log_rl(ss: &SuffStats, r: f64, rho: f64) -> Result<f64> {
    check_ratio(r)?;
    check_rho(rho)?;
    let d = Dims::of(ss);
    let (bracket, det_m) = profile_bracket(ss, &d, r, rho);
    let value = -0.5 * d.within_df() * r.ln() - 0.5 * (d.n - 1.0) * det_m.ln() - 0.5 * d.reml_df() * bracket.ln();
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("profiled log RL (degenerate data?)".into()))
    }
}

/// `(Ns - 2)/2 · [ln(Ns - 2) - 1]`, the constant separating
/// [`profiled_log_rl`] from the full log RL at the profiled point.
pub fn profile_constant(ss: &SuffStats) -> f64 {
    let df = Dims::of(ss).reml_df();
    0.5 * df * (df.ln() - 1.0)
}

/// Method-of-moments starting point in relative coordinates.
///
/// `σ²_e ≈ RSS / N(s-2)`; the diagonal of `T / (N-1)` estimates
/// `sσ²_c + σ²_e` and `qσ²_s + σ²_e`; the off-diagonal estimates `√(sq)·σ_cs`.
fn moment_start(ss: &SuffStats) -> [f64; 3] {
    let d = Dims::of(ss);
    let k = d.n - 1.0;
    let mut e0 = ss.rss / d.within_df();
    if !(e0 > 0.0) {
        e0 = (ss.trace_t() / k / (d.s + d.q)).max(f64::MIN_POSITIVE);
    }
    let c0 = ((ss.t_outer[0][0] / k - e0) / d.s).max(1e-4 * e0);
    let s0 = ((ss.t_outer[1][1] / k - e0) / d.q).max(1e-4 * e0);
    let cov0 = ss.t_outer[0][1] / k / (d.s * d.q).sqrt();
    let rho0 = (cov0 / (c0 * s0).sqrt()).clamp(-0.95, 0.95);
    [(c0 / e0).sqrt(), (s0 / e0).sqrt(), if rho0.is_finite() { rho0 } else { 0.0 }]
}

fn degenerate_result(ss: &SuffStats, opts: &FitOptions) -> Result<FitResult> {
    if !opts.degenerate_floor {
        return Err(Error::DegenerateData);
    }
    let params = VarianceParams {
        sigma2_e: DEGENERATE_SIGMA2_E,
        sigma2_c: 0.0,
        sigma2_s: 0.0,
        rho: 0.0,
    };
    Ok(FitResult {
        params,
        classification: Classification::ZeroVariance,
        log_rl: log_restricted_likelihood(ss, &params)?,
        converged: true,
        n_evals: 0,
        boundary_variance: zero_variances(&params, &opts.tolerances),
        diagnostics: FitDiagnostics::default(),
    })
}

/// Log-RL drop from a boundary maximizer to the nearest interior probe point.
pub(crate) fn boundary_drop<F: Fn(&[f64; 3]) -> f64>(
    objective: F,
    theta: &[f64; 3],
    value: f64,
    classification: Classification,
) -> Option<f64> {
    let mut probe = *theta;
    match classification {
        Classification::Good => return None,
        Classification::RhoMinusOne => probe[2] = -0.99,
        Classification::RhoPlusOne => probe[2] = 0.99,
        Classification::ZeroVariance => {
            for l in probe.iter_mut().take(2) {
                *l = l.max(1e-2);
            }
        }
    }
    Some(value - objective(&probe))
}

/// Maximizes the restricted likelihood of a balanced dataset.
///
/// Never fails for non-degenerate data: a run that exhausts its evaluation
/// budget comes back with `converged = false`.
pub fn fit_balanced(ss: &SuffStats, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    if ss.is_degenerate() {
        return degenerate_result(ss, opts);
    }
    let objective = |t: &[f64]| relative_objective(ss, &[t[0], t[1], t[2]]).0;
    let opt = maximize_relative(objective, moment_start(ss), opts);
    let (value, sigma2_e) = relative_objective(ss, &opt.theta);
    let params = params_from_theta(sigma2_e, &opt.theta);
    let classification = classify(&params, &opts.tolerances);
    let drop = boundary_drop(|t| relative_objective(ss, t).0, &opt.theta, value, classification);
    Ok(FitResult {
        params,
        classification,
        log_rl: value,
        converged: opt.converged,
        n_evals: opt.n_evals,
        boundary_variance: zero_variances(&params, &opts.tolerances),
        diagnostics: FitDiagnostics {
            n_inferior_starts: opt.n_inferior_starts,
            boundary_drop: drop,
            theta: opt.theta,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_system::{simulate, sufficient_stats, DesignSpec, FixedEffects};

    fn sample_ss(n: usize, s: usize, vp: VarianceParams, seed: u64) -> SuffStats {
        let d = DesignSpec::new(n, s).unwrap();
        sufficient_stats(&simulate(d, FixedEffects::default(), vp, seed).unwrap())
    }

    #[test]
    fn zero_random_effects_collapse() {
        let ss = sample_ss(8, 5, VarianceParams::new(2.0, 1.0, 0.5, 0.3).unwrap(), 1);
        let (n, s) = (8.0, 5.0);
        let e = 1.7;
        let vp = VarianceParams::new(e, 0.0, 0.0, 0.0).unwrap();
        let want = -(n * (s - 2.0) / 2.0) * f64::ln(e) - ss.rss / (2.0 * e) - (n - 1.0) * f64::ln(e)
            - ss.trace_t() / (2.0 * e);
        let got = log_restricted_likelihood(&ss, &vp).unwrap();
        assert!((got - want).abs() < 1e-10 * want.abs());
        // Maximized at (RSS + tr T) / (Ns - 2).
        let best = (ss.rss + ss.trace_t()) / (n * s - 2.0);
        let at = |v: f64| log_restricted_likelihood(&ss, &VarianceParams::new(v, 0.0, 0.0, 0.0).unwrap()).unwrap();
        assert!(at(best) > at(best * 1.001) && at(best) > at(best * 0.999));
    }

    #[test]
    fn rejects_nonpositive_error_variance() {
        let ss = sample_ss(4, 3, VarianceParams::new(1.0, 1.0, 1.0, 0.0).unwrap(), 2);
        let vp = VarianceParams {
            sigma2_e: 0.0,
            sigma2_c: 1.0,
            sigma2_s: 1.0,
            rho: 0.0,
        };
        assert!(matches!(log_restricted_likelihood(&ss, &vp), Err(Error::NonFinite(_))));
    }

    #[test]
    fn relative_objective_matches_full_likelihood() {
        let ss = sample_ss(12, 7, VarianceParams::new(1.0, 0.7, 0.3, -0.2).unwrap(), 3);
        for theta in [[0.5, 0.8, -0.3], [0.0, 1.2, 0.9], [2.0, 0.0, 1.0], [1.0, 1.0, -1.0]] {
            let (v, e) = relative_objective(&ss, &theta);
            let vp = params_from_theta(e, &theta);
            let full = log_restricted_likelihood(&ss, &vp).unwrap();
            assert!((v - full).abs() < 1e-10 * full.abs(), "{theta:?}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ss = sample_ss(15, 9, VarianceParams::new(1.0, 1.0, 1.0, 0.4).unwrap(), 4);
        let vp = VarianceParams::new(1.3, 0.8, 1.4, 0.25).unwrap();
        let g = log_rl_gradient(&ss, &vp).unwrap();
        let base = [vp.sigma2_e, vp.sigma2_c, vp.sigma2_s, vp.rho];
        for k in 0..4 {
            let h = 1e-6;
            let mut up = base;
            let mut dn = base;
            up[k] += h;
            dn[k] -= h;
            let f = |p: [f64; 4]| {
                log_restricted_likelihood(&ss, &VarianceParams::new(p[0], p[1], p[2], p[3]).unwrap()).unwrap()
            };
            let fd = (f(up) - f(dn)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-5 * (1.0 + g[k].abs()), "k={k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn profiled_degenerate_data() {
        let d = DesignSpec::new(3, 3).unwrap();
        let data = crate::model_system::ClusteredDataset::new(d, vec![0.0; 9]).unwrap();
        let ss = sufficient_stats(&data);
        assert_eq!(profile_sigma2_r(&ss, 2.0, 0.1).unwrap(), 0.0);
        assert!(profile_sigma2_r(&ss, 0.0, 0.1).is_err());
        assert!(profiled_log_rl(&ss, -1.0, 0.1).is_err());
    }

    #[test]
    fn profiled_value_matches_plugged_likelihood() {
        let ss = sample_ss(20, 5, VarianceParams::new(3.0, 1.0, 1.0, -0.6).unwrap(), 5);
        for (r, rho) in [(0.5, 0.0), (3.0, -0.6), (10.0, 0.9), (1.0, -1.0)] {
            let s2r = profile_sigma2_r(&ss, r, rho).unwrap();
            let vp = VarianceParams::new(r * s2r, s2r, s2r, rho).unwrap();
            let full = log_restricted_likelihood(&ss, &vp).unwrap();
            let prof = profiled_log_rl(&ss, r, rho).unwrap() + profile_constant(&ss);
            assert!((full - prof).abs() < 1e-9 * full.abs(), "r={r} rho={rho}");
        }
    }

    #[test]
    fn profiled_at_zero_rho_term() {
        let ss = sample_ss(10, 5, VarianceParams::new(1.0, 1.0, 1.0, 0.0).unwrap(), 6);
        let (n, s, q, r) = (10.0, 5.0, ss.design.q(), 2.5);
        let d = Dims::of(&ss);
        let (bracket, _) = profile_bracket(&ss, &d, r, 0.0);
        let want = -(n * (s - 2.0) / 2.0) * f64::ln(r) - ((n - 1.0) / 2.0) * ((s + r) * (q + r)).ln()
            - ((n * s - 2.0) / 2.0) * bracket.ln();
        assert!((profiled_log_rl(&ss, r, 0.0).unwrap() - want).abs() < 1e-12 * want.abs());
    }

    #[test]
    fn degenerate_fit_errors_or_floors() {
        let d = DesignSpec::new(4, 3).unwrap();
        let data = crate::model_system::ClusteredDataset::new(d, vec![1.5; 12]).unwrap();
        let ss = sufficient_stats(&data);
        assert!(matches!(fit_balanced(&ss, &FitOptions::default()), Err(Error::DegenerateData)));
        let opts = FitOptions {
            degenerate_floor: true,
            ..FitOptions::default()
        };
        let fit = fit_balanced(&ss, &opts).unwrap();
        assert_eq!(fit.classification, Classification::ZeroVariance);
        assert_eq!(fit.params.sigma2_e, DEGENERATE_SIGMA2_E);
    }

    #[test]
    fn recovers_truth_at_large_n() {
        let truth = VarianceParams::new(1.0, 1.0, 1.0, -0.5).unwrap();
        let ss = sample_ss(2000, 21, truth, 77);
        let fit = fit_balanced(&ss, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.classification, Classification::Good);
        let p = fit.params;
        assert!((p.sigma2_e - 1.0).abs() < 0.1);
        assert!((p.sigma2_c - 1.0).abs() < 0.1);
        assert!((p.sigma2_s - 1.0).abs() < 0.1);
        assert!((p.rho + 0.5).abs() < 0.1);
    }
}
