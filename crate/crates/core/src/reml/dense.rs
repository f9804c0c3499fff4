//! Dense-matrix restricted likelihood, for checking the structured engines.
//!
//! `ℓ = -½ ln det V - ½ ln det X'V⁻¹X - ½ y'Py` with `V = ZGZ' + σ²_e I` and
//! `P = V⁻¹ - V⁻¹X(X'V⁻¹X)⁻¹X'V⁻¹`. The constant `-(n - p)/2 · ln 2π` is
//! dropped, as everywhere else; the balanced form differs from this one by a
//! further design-only constant, so compare differences across parameters.

use nalgebra::{DMatrix, DVector};

use super::general::GeneralDataset;
use crate::error::{Error, Result};
use crate::model_system::{ClusteredDataset, VarianceParams};

fn log_det_chol(m: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    m.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum()
}

/// `x`: n×p fixed design; `z_rows[k]` the random-effect row of observation `k`;
/// `cluster_of[k]` its cluster index.
fn dense_log_rl(
    x: &DMatrix<f64>,
    z_rows: &[[f64; 2]],
    cluster_of: &[usize],
    y: &DVector<f64>,
    vp: &VarianceParams,
) -> Result<f64> {
    vp.validate()?;
    let n = y.len();
    let g = vp.sigma();
    let mut v = DMatrix::from_diagonal_element(n, n, vp.sigma2_e);
    for a in 0..n {
        for b in 0..n {
            if cluster_of[a] == cluster_of[b] {
                let (za, zb) = (z_rows[a], z_rows[b]);
                let mut cov = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        cov += za[i] * g[i][j] * zb[j];
                    }
                }
                v[(a, b)] += cov;
            }
        }
    }
    let chol_v = v.cholesky().ok_or_else(|| Error::Singular("V".into()))?;
    let vinv_x = chol_v.solve(x);
    let vinv_y = chol_v.solve(y);
    let c = x.transpose() * &vinv_x;
    let chol_c = c
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("X'V⁻¹X is singular".into()))?;
    let xvy = x.transpose() * &vinv_y;
    let beta = chol_c.solve(&xvy);
    let ypy = y.dot(&vinv_y) - xvy.dot(&beta);
    Ok(-0.5 * log_det_chol(&chol_v) - 0.5 * log_det_chol(&chol_c) - 0.5 * ypy)
}

/// Dense REML log likelihood of a balanced dataset (fixed effects `[1, h]`).
pub fn log_rl_dense_oracle(data: &ClusteredDataset, vp: &VarianceParams) -> Result<f64> {
    let design = data.design();
    let h = design.h();
    let s = design.cluster_size();
    let n = design.n_obs();
    let x = DMatrix::from_fn(n, 2, |k, c| if c == 0 { 1.0 } else { h[k % s] });
    let z_rows: Vec<[f64; 2]> = (0..n).map(|k| [1.0, h[k % s]]).collect();
    let cluster_of: Vec<usize> = (0..n).map(|k| k / s).collect();
    dense_log_rl(&x, &z_rows, &cluster_of, &DVector::from_column_slice(data.y()), vp)
}

/// Dense REML log likelihood of a [`GeneralDataset`].
pub fn log_rl_dense_oracle_general(data: &GeneralDataset, vp: &VarianceParams) -> Result<f64> {
    let p = data.n_fixed();
    let mut x_rows = Vec::new();
    let mut z_rows = Vec::new();
    let mut cluster_of = Vec::new();
    let mut y = Vec::new();
    for (i, c) in data.clusters().iter().enumerate() {
        for ((z, xr), &yv) in c.z.iter().zip(&c.x).zip(&c.y) {
            x_rows.extend_from_slice(xr);
            z_rows.push(*z);
            cluster_of.push(i);
            y.push(yv);
        }
    }
    let x = DMatrix::from_row_slice(y.len(), p, &x_rows);
    dense_log_rl(&x, &z_rows, &cluster_of, &DVector::from_vec(y), vp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_system::{simulate, DesignSpec, FixedEffects};
    use crate::reml::general::log_rl_general;

    #[test]
    fn general_forms_agree_exactly() {
        let d = DesignSpec::new(4, 5).unwrap();
        let data = simulate(d, FixedEffects::default(), VarianceParams::new(1.0, 1.0, 0.5, 0.2).unwrap(), 5).unwrap();
        let g = GeneralDataset::from_balanced(&data).unwrap();
        let vp = VarianceParams::new(0.8, 0.4, 1.1, -0.6).unwrap();
        let a = log_rl_dense_oracle_general(&g, &vp).unwrap();
        let b = log_rl_general(&g, &vp).unwrap();
        let c = log_rl_dense_oracle(&data, &vp).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        assert!((a - c).abs() < 1e-10 * a.abs().max(1.0));
    }
}
