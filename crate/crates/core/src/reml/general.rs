//! Restricted likelihood for unbalanced clusters with arbitrary fixed effects.
//!
//! Each cluster `i` has `n_i` observations with random-effect rows `z = [1, x]`,
//! fixed-effect rows `x_i` (`p` columns) and responses `y_i`. With the relative
//! factor `Λ` (`Σ = σ²_e ΛΛ'`) and `M_i = I + Λ'Z_i'Z_iΛ`, the Woodbury identity
//! gives every quantity from per-cluster cross products:
//!
//! ```text
//! X'Ṽ⁻¹X = Σ (X_i'X_i - A_i'M_i⁻¹A_i),  A_i = Λ'Z_i'X_i
//! X'Ṽ⁻¹y = Σ (X_i'y_i - A_i'M_i⁻¹a_i),  a_i = Λ'Z_i'y_i
//! ln det Ṽ = Σ ln det M_i
//! ```

use std::io::Read;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::Serialize;

use super::balanced::boundary_drop;
use super::{
    classify, maximize_relative, params_from_theta, relative_factor, zero_variances, BoundaryVariance,
    Classification, FitDiagnostics, FitOptions,
};
use crate::error::{Error, Result};
use crate::model_system::{ClusteredDataset, DesignSpec, VarianceParams};

/// One cluster of a [`GeneralDataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDesign {
    pub label: String,
    /// Random-effect rows `[1, x_ij]`.
    pub z: Vec<[f64; 2]>,
    /// Fixed-effect rows, each of length `p`.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl ClusterDesign {
    /// Builds a cluster whose random-effect rows are `[1, t_j]`.
    pub fn new(label: impl Into<String>, t: &[f64], x: Vec<Vec<f64>>, y: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            z: t.iter().map(|&v| [1.0, v]).collect(),
            x,
            y,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone)]
struct CrossProducts {
    ztz: Matrix2<f64>,
    ztx: DMatrix<f64>,
    zty: Vector2<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
}

impl CrossProducts {
    fn of(c: &ClusterDesign, p: usize) -> Self {
        let mut cp = Self {
            ztz: Matrix2::zeros(),
            ztx: DMatrix::zeros(2, p),
            zty: Vector2::zeros(),
            xtx: DMatrix::zeros(p, p),
            xty: DVector::zeros(p),
            yty: 0.0,
        };
        for ((z, x), &y) in c.z.iter().zip(&c.x).zip(&c.y) {
            for a in 0..2 {
                for b in 0..2 {
                    cp.ztz[(a, b)] += z[a] * z[b];
                }
                for k in 0..p {
                    cp.ztx[(a, k)] += z[a] * x[k];
                }
                cp.zty[a] += z[a] * y;
            }
            for k in 0..p {
                for l in 0..p {
                    cp.xtx[(k, l)] += x[k] * x[l];
                }
                cp.xty[k] += x[k] * y;
            }
            cp.yty += y * y;
        }
        cp
    }
}

/// Clustered data with per-observation design rows.
#[derive(Debug, Clone)]
pub struct GeneralDataset {
    clusters: Vec<ClusterDesign>,
    p: usize,
    cross: Vec<CrossProducts>,
}

impl GeneralDataset {
    /// Validates shapes, finiteness, `Σ n_i > p + 2` and full column rank of the
    /// stacked fixed-effect design.
    pub fn new(clusters: Vec<ClusterDesign>, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("need at least one fixed-effect column"));
        }
        if clusters.is_empty() {
            return Err(Error::invalid("no clusters"));
        }
        for c in &clusters {
            if c.is_empty() {
                return Err(Error::invalid(format!("cluster {} is empty", c.label)));
            }
            if c.z.len() != c.len() || c.x.len() != c.len() {
                return Err(Error::invalid(format!("cluster {}: row counts differ", c.label)));
            }
            if c.x.iter().any(|row| row.len() != p) {
                return Err(Error::invalid(format!("cluster {}: fixed-effect rows must have {p} columns", c.label)));
            }
            let finite = c.y.iter().chain(c.z.iter().flatten()).chain(c.x.iter().flatten()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite(format!("cluster {} has non-finite values", c.label)));
            }
        }
        let n: usize = clusters.iter().map(ClusterDesign::len).sum();
        if n <= p + 2 {
            return Err(Error::invalid(format!("need more than {} observations, got {n}", p + 2)));
        }
        let cross: Vec<CrossProducts> = clusters.iter().map(|c| CrossProducts::of(c, p)).collect();
        let ds = Self { clusters, p, cross };
        ds.check_rank()?;
        Ok(ds)
    }

    fn check_rank(&self) -> Result<()> {
        let xtx = self.cross.iter().fold(DMatrix::zeros(self.p, self.p), |acc, c| acc + &c.xtx);
        // Scale to unit diagonal so the rank test is unit-free.
        let d: Vec<f64> = (0..self.p).map(|k| xtx[(k, k)].sqrt()).collect();
        if let Some(k) = d.iter().position(|&v| v == 0.0) {
            return Err(Error::RankDeficient(format!("fixed-effect column {k} is identically zero")));
        }
        let scaled = DMatrix::from_fn(self.p, self.p, |a, b| xtx[(a, b)] / (d[a] * d[b]));
        let eig = scaled.symmetric_eigen();
        let min = eig.eigenvalues.min();
        if min < 1e-10 {
            return Err(Error::RankDeficient(format!(
                "fixed-effect design is rank deficient (smallest scaled eigenvalue {min:.3e})"
            )));
        }
        Ok(())
    }

    /// The balanced dataset with fixed effects `[1, h]` and random effects `[1, h]`.
    pub fn from_balanced(data: &ClusteredDataset) -> Result<Self> {
        let h = data.design().h();
        let clusters = data
            .clusters()
            .enumerate()
            .map(|(i, y)| {
                let x = h.iter().map(|&v| vec![1.0, v]).collect();
                ClusterDesign::new((i + 1).to_string(), &h, x, y.to_vec())
            })
            .collect();
        Self::new(clusters, 2)
    }

    /// Reads a long-format CSV (`cluster,x,y` plus `extra` columns).
    ///
    /// Random effects are `[1, x]`. Fixed effects are an intercept, `x` and the
    /// `extra` columns in order.
    pub fn read_csv<R: Read>(input: R, extra: &[&str]) -> Result<Self> {
        let rows = crate::io::read_long_rows(input, extra)?;
        let clusters = crate::io::group_rows(&rows)
            .into_iter()
            .map(|(label, members)| {
                let t: Vec<f64> = members.iter().map(|&k| rows[k].x).collect();
                let x = members
                    .iter()
                    .map(|&k| {
                        let mut row = vec![1.0, rows[k].x];
                        row.extend_from_slice(&rows[k].extras);
                        row
                    })
                    .collect();
                let y = members.iter().map(|&k| rows[k].y).collect();
                ClusterDesign::new(label, &t, x, y)
            })
            .collect();
        Self::new(clusters, 2 + extra.len())
    }

    pub fn clusters(&self) -> &[ClusterDesign] {
        &self.clusters
    }

    pub fn n_fixed(&self) -> usize {
        self.p
    }

    pub fn n_obs(&self) -> usize {
        self.clusters.iter().map(ClusterDesign::len).sum()
    }

    /// The same design with responses replaced cluster by cluster.
    pub fn with_responses(&self, y: Vec<Vec<f64>>) -> Result<Self> {
        if y.len() != self.clusters.len() {
            return Err(Error::invalid("response block count does not match cluster count"));
        }
        let clusters = self
            .clusters
            .iter()
            .zip(y)
            .map(|(c, y)| ClusterDesign { y, ..c.clone() })
            .collect();
        Self::new(clusters, self.p)
    }
}

/// GLS pieces at one value of `θ`: `y'P̃y`, `Σ ln det M_i`, `ln det X'Ṽ⁻¹X`, `β̂`.
struct Pieces {
    quad: f64,
    log_det_m: f64,
    log_det_c: f64,
    beta: DVector<f64>,
}

fn pieces(data: &GeneralDataset, theta: &[f64; 3]) -> Option<Pieces> {
    let f = relative_factor(theta);
    let lam = Matrix2::new(f[0][0], f[0][1], f[1][0], f[1][1]);
    let p = data.p;
    let mut c = DMatrix::zeros(p, p);
    let mut xvy = DVector::zeros(p);
    let mut yvy = 0.0;
    let mut log_det_m = 0.0;
    for cp in &data.cross {
        let m = Matrix2::identity() + lam.transpose() * cp.ztz * lam;
        let chol = m.cholesky()?;
        log_det_m += chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum::<f64>();
        let a = lam.transpose() * &cp.ztx;
        let av = lam.transpose() * cp.zty;
        let minv_av = chol.solve(&av);
        c += &cp.xtx - a.transpose() * chol.solve(&a);
        xvy += &cp.xty - a.transpose() * minv_av;
        yvy += cp.yty - av.dot(&minv_av);
    }
    let chol_c = c.cholesky()?;
    let beta = chol_c.solve(&xvy);
    Some(Pieces {
        quad: yvy - xvy.dot(&beta),
        log_det_m,
        log_det_c: chol_c.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum(),
        beta,
    })
}

struct Evaluation {
    value: f64,
    sigma2_e: f64,
    beta: DVector<f64>,
}

fn evaluate(data: &GeneralDataset, theta: &[f64; 3]) -> Option<Evaluation> {
    let [lc, ls, rho] = *theta;
    if !(lc >= 0.0 && ls >= 0.0 && (-1.0..=1.0).contains(&rho)) {
        return None;
    }
    let pc = pieces(data, theta)?;
    if !(pc.quad > 0.0) {
        return None;
    }
    let df = (data.n_obs() - data.p) as f64;
    let sigma2_e = pc.quad / df;
    let value = -0.5 * df * sigma2_e.ln() - 0.5 * df - 0.5 * pc.log_det_m - 0.5 * pc.log_det_c;
    value.is_finite().then_some(Evaluation {
        value,
        sigma2_e,
        beta: pc.beta,
    })
}

fn objective(data: &GeneralDataset, theta: &[f64; 3]) -> f64 {
    evaluate(data, theta).map_or(f64::NEG_INFINITY, |e| e.value)
}

/// Maximized log RL of the general engine minus that of the balanced engine on
/// the same balanced data (fixed effects `[1, h]`): `-ln N - ½ ln(sq)`.
pub fn general_constant_offset(design: &DesignSpec) -> f64 {
    let s = design.cluster_size() as f64;
    -(design.n_clusters() as f64).ln() - 0.5 * (s * design.q()).ln()
}

/// Result of [`fit_general`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralFitResult {
    pub beta_hat: Vec<f64>,
    #[serde(flatten)]
    pub params: VarianceParams,
    pub classification: Classification,
    pub log_rl: f64,
    /// Per-cluster `(û_0, û_1)`, in cluster order.
    pub eblups: Vec<[f64; 2]>,
    pub converged: bool,
    pub n_evals: usize,
    pub boundary_variance: Option<BoundaryVariance>,
    #[serde(skip)]
    pub diagnostics: FitDiagnostics,
}

impl GeneralFitResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

/// Coarse starting point: the best of a small `λ` grid at `ρ = 0`.
fn grid_start(data: &GeneralDataset) -> [f64; 3] {
    let grid = [0.03, 0.1, 0.3, 1.0, 3.0];
    let mut best = ([0.3, 0.3, 0.0], f64::NEG_INFINITY);
    for &lc in &grid {
        for &ls in &grid {
            let t = [lc, ls, 0.0];
            let v = objective(data, &t);
            if v > best.1 {
                best = (t, v);
            }
        }
    }
    best.0
}

fn theta_from_params(vp: &VarianceParams) -> [f64; 3] {
    [
        (vp.sigma2_c / vp.sigma2_e).sqrt(),
        (vp.sigma2_s / vp.sigma2_e).sqrt(),
        vp.rho,
    ]
}

/// REML fit of a [`GeneralDataset`], fixed effects by GLS at the maximizer.
pub fn fit_general(data: &GeneralDataset, opts: &FitOptions) -> Result<GeneralFitResult> {
    opts.validate()?;
    let opt = maximize_relative(|t| objective(data, &[t[0], t[1], t[2]]), grid_start(data), opts);
    let eval = evaluate(data, &opt.theta).ok_or(Error::DegenerateData)?;
    let params = params_from_theta(eval.sigma2_e, &opt.theta);
    let classification = classify(&params, &opts.tolerances);
    let drop = boundary_drop(|t| objective(data, t), &opt.theta, eval.value, classification);
    let mut fit = GeneralFitResult {
        beta_hat: eval.beta.iter().copied().collect(),
        params,
        classification,
        log_rl: eval.value,
        eblups: Vec::new(),
        converged: opt.converged,
        n_evals: opt.n_evals,
        boundary_variance: zero_variances(&params, &opts.tolerances),
        diagnostics: FitDiagnostics {
            n_inferior_starts: opt.n_inferior_starts,
            boundary_drop: drop,
            theta: opt.theta,
        },
    };
    fit.eblups = eblups(&fit, data);
    Ok(fit)
}

/// `û_i = ΣZ_i'V_i⁻¹(y_i - X_iβ̂) = ΛM_i⁻¹Λ'Z_i'(y_i - X_iβ̂)` at the fitted
/// parameters. The result lies in the column space of `Λ`, so a singular `Σ̂`
/// gives EBLUPs on its range (all zero when `Σ̂ = 0`).
pub fn eblups(fit: &GeneralFitResult, data: &GeneralDataset) -> Vec<[f64; 2]> {
    let theta = theta_from_params(&fit.params);
    let f = relative_factor(&theta);
    let lam = Matrix2::new(f[0][0], f[0][1], f[1][0], f[1][1]);
    let beta = DVector::from_column_slice(&fit.beta_hat);
    data.cross
        .iter()
        .map(|cp| {
            let m = Matrix2::identity() + lam.transpose() * cp.ztz * lam;
            let resid = cp.zty - &cp.ztx * &beta;
            let rhs = lam.transpose() * Vector2::new(resid[0], resid[1]);
            let u = lam * m.cholesky().expect("I + Λ'Z'ZΛ is positive definite").solve(&rhs);
            [u[0], u[1]]
        })
        .collect()
}

/// Log RL of the general engine at `vp`, constant as in [`fit_general`].
pub fn log_rl_general(data: &GeneralDataset, vp: &VarianceParams) -> Result<f64> {
    vp.validate()?;
    let pc = pieces(data, &theta_from_params(vp)).ok_or_else(|| Error::Singular("X'V⁻¹X".into()))?;
    let (n, p, e) = (data.n_obs() as f64, data.p as f64, vp.sigma2_e);
    let log_det_v = n * e.ln() + pc.log_det_m;
    let log_det_c = pc.log_det_c - p * e.ln();
    Ok(-0.5 * log_det_v - 0.5 * log_det_c - 0.5 * pc.quad / e)
}
