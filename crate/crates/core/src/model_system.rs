//! The balanced random-regressions design.
//!
//! Every one of `N` clusters is observed at the same `s = 2m + 1` regressor
//! values `h = (-1, -(m-1)/m, ..., 0, ..., (m-1)/m, 1)`. The within-cluster
//! design `H = [1, h]` then has orthogonal columns with `1'1 = s` and
//! `h'h = q = (2m² + 3m + 1) / 3m`, and a dataset compresses into two
//! sufficient statistics: the pooled within-cluster residual sum of squares
//! and a 2×2 matrix of between-cluster contrasts.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Checks that `s` is an odd cluster size of at least 3 and returns `m = (s - 1) / 2`.
fn half_width(s: usize) -> Result<usize> {
    if s < 3 || s % 2 == 0 {
        return Err(Error::invalid(format!(
            "cluster size s must be odd and at least 3, got {s}"
        )));
    }
    Ok((s - 1) / 2)
}

/// Within-cluster regressor values for cluster size `s`.
pub fn build_h(s: usize) -> Result<Vec<f64>> {
    let m = half_width(s)?;
    let mf = m as f64;
    Ok((0..s).map(|j| (j as f64 - mf) / mf).collect())
}

/// `q = h'h = (2m² + 3m + 1) / 3m`.
pub fn moment_q(s: usize) -> Result<f64> {
    let m = half_width(s)? as f64;
    Ok((2.0 * m * m + 3.0 * m + 1.0) / (3.0 * m))
}

/// Cluster count and common cluster size of a balanced design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    n_clusters: usize,
    cluster_size: usize,
}

impl DesignSpec {
    pub fn new(n_clusters: usize, cluster_size: usize) -> Result<Self> {
        if n_clusters < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 clusters, got {n_clusters}"
            )));
        }
        half_width(cluster_size)?;
        Ok(Self {
            n_clusters,
            cluster_size,
        })
    }

    /// `N`.
    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// `s`.
    pub fn cluster_size(&self) -> usize {
        self.cluster_size
    }

    pub fn m(&self) -> usize {
        (self.cluster_size - 1) / 2
    }

    pub fn q(&self) -> f64 {
        moment_q(self.cluster_size).expect("validated at construction")
    }

    pub fn h(&self) -> Vec<f64> {
        build_h(self.cluster_size).expect("validated at construction")
    }

    /// Total observation count `Ns`.
    pub fn n_obs(&self) -> usize {
        self.n_clusters * self.cluster_size
    }

    /// Restricted-likelihood degrees of freedom `Ns - 2`.
    pub fn reml_df(&self) -> f64 {
        (self.n_obs() - 2) as f64
    }
}

/// The variance parameters `(σ²_e, σ²_c, σ²_s, ρ)`.
///
/// `Σ = [[σ²_c, ρσ_cσ_s], [ρσ_cσ_s, σ²_s]]` is positive semidefinite whenever
/// both variances are non-negative and `|ρ| ≤ 1`, so the field bounds are the
/// whole invariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceParams {
    pub sigma2_e: f64,
    pub sigma2_c: f64,
    pub sigma2_s: f64,
    pub rho: f64,
}

impl VarianceParams {
    /// Validated constructor. `σ²_e` must be strictly positive.
    pub fn new(sigma2_e: f64, sigma2_c: f64, sigma2_s: f64, rho: f64) -> Result<Self> {
        let vp = Self {
            sigma2_e,
            sigma2_c,
            sigma2_s,
            rho,
        };
        vp.validate()?;
        Ok(vp)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_error_floor(false)
    }

    /// Like [`validate`](Self::validate) but optionally admits `σ²_e = 0`, which
    /// only the simulator accepts.
    fn validate_with_error_floor(&self, allow_zero_error: bool) -> Result<()> {
        let all = [self.sigma2_e, self.sigma2_c, self.sigma2_s, self.rho];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite variance parameters {self:?}")));
        }
        if self.sigma2_e < 0.0 || (!allow_zero_error && self.sigma2_e == 0.0) {
            return Err(Error::invalid(format!(
                "sigma2_e must be positive, got {}",
                self.sigma2_e
            )));
        }
        if self.sigma2_c < 0.0 || self.sigma2_s < 0.0 {
            return Err(Error::invalid("random-effect variances must be non-negative"));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("rho must lie in [-1, 1], got {}", self.rho)));
        }
        Ok(())
    }

    /// Σ as `[[σ²_c, c], [c, σ²_s]]`.
    pub fn sigma(&self) -> [[f64; 2]; 2] {
        let c = self.rho * (self.sigma2_c * self.sigma2_s).sqrt();
        [[self.sigma2_c, c], [c, self.sigma2_s]]
    }

    /// Lower-triangular square root `[[σ_c, 0], [ρσ_s, σ_s√(1-ρ²)]]` of Σ. The
    /// second diagonal entry is exactly zero at `|ρ| = 1`.
    pub fn sigma_sqrt(&self) -> [[f64; 2]; 2] {
        let sc = self.sigma2_c.sqrt();
        let ss = self.sigma2_s.sqrt();
        [
            [sc, 0.0],
            [self.rho * ss, ss * (1.0 - self.rho * self.rho).max(0.0).sqrt()],
        ]
    }

    /// The same parameters with every variance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            sigma2_e: self.sigma2_e * factor,
            sigma2_c: self.sigma2_c * factor,
            sigma2_s: self.sigma2_s * factor,
            rho: self.rho,
        }
    }
}

/// Population intercept and slope `(b0, b1)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FixedEffects {
    pub b0: f64,
    pub b1: f64,
}

/// Responses of a balanced design, stored cluster-major (`y[i * s + j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDataset {
    design: DesignSpec,
    y: Vec<f64>,
}

impl ClusteredDataset {
    pub fn new(design: DesignSpec, y: Vec<f64>) -> Result<Self> {
        if y.len() != design.n_obs() {
            return Err(Error::invalid(format!(
                "expected {} responses for {} clusters of size {}, got {}",
                design.n_obs(),
                design.n_clusters(),
                design.cluster_size(),
                y.len()
            )));
        }
        if let Some(bad) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("response {bad} is not finite")));
        }
        Ok(Self { design, y })
    }

    pub fn design(&self) -> DesignSpec {
        self.design
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Responses of cluster `i` (0-based).
    pub fn cluster(&self, i: usize) -> &[f64] {
        let s = self.design.cluster_size();
        &self.y[i * s..(i + 1) * s]
    }

    pub fn clusters(&self) -> std::slice::ChunksExact<'_, f64> {
        self.y.chunks_exact(self.design.cluster_size())
    }

    /// Applies `f(y)` to every response.
    pub fn map_y(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            design: self.design,
            y: self.y.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Writes `cluster,j,x,y` rows, clusters and `j` numbered from 1.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cluster", "j", "x", "y"])?;
        let h = self.design.h();
        for (i, cluster) in self.clusters().enumerate() {
            for (j, (&x, &y)) in h.iter().zip(cluster).enumerate() {
                w.write_record(&[
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    format!("{x:?}"),
                    format!("{y:?}"),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a balanced dataset written by [`write_csv`](Self::write_csv).
    ///
    /// Rows may come in any order. Fails with a line-numbered error when a row
    /// is malformed, and with [`Error::InvalidInput`] when the rows do not form
    /// a balanced design (equal odd cluster sizes, `x` equal to `h`).
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let rows = crate::io::read_long_rows(input, &[])?;
        Self::from_long_rows(&rows)
    }

    pub(crate) fn from_long_rows(rows: &[crate::io::LongRow]) -> Result<Self> {
        let groups = crate::io::group_rows(rows);
        if groups.len() < 2 {
            return Err(Error::invalid("need at least 2 clusters"));
        }
        let s = groups[0].1.len();
        let design = DesignSpec::new(groups.len(), s)?;
        let h = design.h();
        let mut y = Vec::with_capacity(design.n_obs());
        for (label, members) in &groups {
            if members.len() != s {
                return Err(Error::invalid(format!(
                    "cluster {label} has {} rows, expected {s}",
                    members.len()
                )));
            }
            let mut ordered: Vec<&crate::io::LongRow> = members.iter().map(|&k| &rows[k]).collect();
            ordered.sort_by(|a, b| a.x.total_cmp(&b.x));
            for (row, hx) in ordered.iter().zip(&h) {
                if (row.x - hx).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "line {}: x = {} does not match the balanced design value {hx}",
                        row.line, row.x
                    )));
                }
                y.push(row.y);
            }
        }
        Self::new(design, y)
    }
}

/// Draws one dataset: per cluster a bivariate normal `(β_0i, β_1i)` with mean
/// `(b0, b1)` and covariance Σ, then `y_ij = β_0i + β_1i h_j + ε_ij` with
/// `ε_ij ~ N(0, σ²_e)`.
///
/// `σ²_e = 0` is accepted here (noise-free data); the fitting routines reject it.
pub fn simulate(
    design: DesignSpec,
    fixed: FixedEffects,
    vp: VarianceParams,
    seed: u64,
) -> Result<ClusteredDataset> {
    vp.validate_with_error_floor(true)?;
    let mut rng = rng::stream(seed);
    Ok(simulate_with(design, fixed, vp, &mut rng))
}

pub(crate) fn simulate_with<R: Rng>(
    design: DesignSpec,
    fixed: FixedEffects,
    vp: VarianceParams,
    rng: &mut R,
) -> ClusteredDataset {
    let h = design.h();
    let chol = vp.sigma_sqrt();
    let sigma_e = vp.sigma2_e.sqrt();
    let mut y = Vec::with_capacity(design.n_obs());
    for _ in 0..design.n_clusters() {
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let b0 = fixed.b0 + chol[0][0] * z0;
        let b1 = fixed.b1 + chol[1][0] * z0 + chol[1][1] * z1;
        for &x in &h {
            let e: f64 = rng.sample(StandardNormal);
            y.push(b0 + b1 * x + sigma_e * e);
        }
    }
    ClusteredDataset { design, y }
}

/// `(RSS, T)` for a balanced dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuffStats {
    /// Pooled within-cluster residual sum of squares.
    pub rss: f64,
    /// `T = Σ_k t_k t_k'` over the `N - 1` between-cluster contrasts.
    pub t_outer: [[f64; 2]; 2],
    /// `Σ y²`, kept only as a scale reference for degeneracy checks.
    pub sum_sq: f64,
    pub design: DesignSpec,
}

impl SuffStats {
    pub fn trace_t(&self) -> f64 {
        self.t_outer[0][0] + self.t_outer[1][1]
    }

    /// True when `RSS + tr(T)` vanishes relative to the raw data scale, i.e. the
    /// data are (numerically) a single common line.
    pub fn is_degenerate(&self) -> bool {
        let resid = self.rss + self.trace_t();
        !(resid > 1e-20 * self.sum_sq.max(f64::MIN_POSITIVE))
    }
}

/// Compresses a dataset into its sufficient statistics.
///
/// Per cluster, `v_i = D⁻¹H'y_i = (1'y_i / √s, h'y_i / √q)`. The pooled RSS is
/// the sum of squared residuals from each cluster's own least-squares line, and
/// `T = Σ_i (v_i - v̄)(v_i - v̄)'`, which equals `Σ_k t_k t_k'` for any
/// orthonormal basis of contrasts because those bases all project onto `1⊥`.
pub fn sufficient_stats(data: &ClusteredDataset) -> SuffStats {
    let design = data.design();
    let s = design.cluster_size() as f64;
    let q = design.q();
    let h = design.h();
    let (root_s, root_q) = (s.sqrt(), q.sqrt());

    let mut rss = 0.0;
    let mut sum_sq = 0.0;
    let mut v = Vec::with_capacity(design.n_clusters());
    for cluster in data.clusters() {
        let sy: f64 = cluster.iter().sum();
        let hy: f64 = h.iter().zip(cluster).map(|(a, b)| a * b).sum();
        let (a, b) = (sy / s, hy / q);
        for (&x, &y) in h.iter().zip(cluster) {
            let e = y - a - b * x;
            rss += e * e;
            sum_sq += y * y;
        }
        v.push([sy / root_s, hy / root_q]);
    }

    let n = v.len() as f64;
    let mean = [
        v.iter().map(|p| p[0]).sum::<f64>() / n,
        v.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let mut t = [[0.0; 2]; 2];
    for p in &v {
        let d = [p[0] - mean[0], p[1] - mean[1]];
        t[0][0] += d[0] * d[0];
        t[0][1] += d[0] * d[1];
        t[1][1] += d[1] * d[1];
    }
    t[1][0] = t[0][1];

    SuffStats {
        rss,
        t_outer: t,
        sum_sq,
        design,
    }
}
