use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ExperimentSetting, SettingSummary};
use crate::error::{Error, Result};

/// Marginal grids of a full factorial over `(N, s, ρ, log₁₀ r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorialGrids {
    pub n_clusters: Vec<usize>,
    pub cluster_size: Vec<usize>,
    pub rho: Vec<f64>,
    pub log10_r: Vec<f64>,
    pub reps: usize,
}

impl Default for FactorialGrids {
    /// 11 × 11 × 9 × 11 = 11,979 cells with 40 replicates each.
    fn default() -> Self {
        Self {
            n_clusters: (0..11).map(|k| 50 + 100 * k).collect(),
            cluster_size: (0..11).map(|k| 5 + 10 * k).collect(),
            rho: (1..=9).rev().map(|k| -(k as f64) / 10.0).collect(),
            log10_r: (0..=10).map(|k| (4 * k) as f64 / 10.0).collect(),
            reps: 40,
        }
    }
}

fn subsample<T: Copy>(v: &[T], scale: f64) -> Vec<T> {
    let m = ((v.len() as f64 * scale).ceil() as usize).clamp(1, v.len());
    if m == 1 {
        return vec![v[0]];
    }
    (0..m)
        .map(|k| v[((k * (v.len() - 1)) as f64 / (m - 1) as f64).round() as usize])
        .collect()
}

impl FactorialGrids {
    /// Keeps `ceil(len · scale)` evenly spaced levels of every grid, always
    /// including both ends. Scale 0.5 turns the default grids into 6 × 6 × 5 × 6.
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::invalid(format!("scale must lie in (0, 1], got {scale}")));
        }
        Ok(Self {
            n_clusters: subsample(&self.n_clusters, scale),
            cluster_size: subsample(&self.cluster_size, scale),
            rho: subsample(&self.rho, scale),
            log10_r: subsample(&self.log10_r, scale),
            reps: self.reps,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_clusters.len() * self.cluster_size.len() * self.rho.len() * self.log10_r.len()
    }
}

/// Every cell of the grids, once, with `N` varying slowest and `log₁₀ r` fastest.
pub fn factorial_grid(grids: &FactorialGrids) -> Vec<ExperimentSetting> {
    let mut out = Vec::with_capacity(grids.n_cells());
    for &n in &grids.n_clusters {
        for &s in &grids.cluster_size {
            for &rho in &grids.rho {
                for &lr in &grids.log10_r {
                    let k = out.len() + 1;
                    out.push(ExperimentSetting::new("factorial", k, n, s, rho, 10f64.powf(lr), grids.reps));
                }
            }
        }
    }
    out
}

/// Factor whose levels separate the lines of an interaction plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotFactor {
    NClusters,
    ClusterSize,
    Rho,
}

impl PlotFactor {
    fn level(&self, s: &ExperimentSetting) -> f64 {
        match self {
            PlotFactor::NClusters => s.n_clusters as f64,
            PlotFactor::ClusterSize => s.cluster_size as f64,
            PlotFactor::Rho => s.rho,
        }
    }
}

impl std::str::FromStr for PlotFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "N" | "n" => Ok(PlotFactor::NClusters),
            "s" => Ok(PlotFactor::ClusterSize),
            "rho" => Ok(PlotFactor::Rho),
            _ => Err(Error::invalid(format!("unknown plot factor `{s}` (use N, s or rho)"))),
        }
    }
}

/// One point of an interaction plot: outcome percentages at one
/// `(log₁₀ r, level)`, pooled over the other factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InteractionRow {
    pub log10_r: f64,
    pub level: f64,
    pub pct_bad: f64,
    pub pct_m1: f64,
    pub pct_p1: f64,
    pub pct_nan: f64,
}

/// Pools summaries by `(log₁₀ r, level of by)`, weighting by replicate count.
/// Rows are sorted by `log₁₀ r`, then level.
pub fn interaction_plot_data(results: &[SettingSummary], by: PlotFactor) -> Vec<InteractionRow> {
    // Keys on a 1e-9 lattice so 10^0.4 and friends group exactly.
    let key = |v: f64| (v * 1e9).round() as i64;
    let mut acc: BTreeMap<(i64, i64), [f64; 5]> = BTreeMap::new();
    for s in results {
        let lr = s.setting.r.log10();
        let w = s.setting.reps as f64;
        let e = acc.entry((key(lr), key(by.level(&s.setting)))).or_insert([0.0; 5]);
        e[0] += w;
        e[1] += w * s.pct_bad;
        e[2] += w * s.pct_m1;
        e[3] += w * s.pct_p1;
        e[4] += w * s.pct_nan;
    }
    acc.into_iter()
        .map(|((lr, lv), a)| InteractionRow {
            log10_r: lr as f64 / 1e9,
            level: lv as f64 / 1e9,
            pct_bad: a[1] / a[0],
            pct_m1: a[2] / a[0],
            pct_p1: a[3] / a[0],
            pct_nan: a[4] / a[0],
        })
        .collect()
}

/// Writes `log10_r,level,pct_bad,pct_m1,pct_p1,pct_nan`.
pub fn write_interaction_csv<W: std::io::Write>(rows: &[InteractionRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Total variation of a curve beyond its net change: `Σ|Δ| - |ΣΔ|`. Zero for
/// a monotone curve; grows with every reversal.
pub fn curve_irregularity(values: &[f64]) -> f64 {
    let steps: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    steps.iter().map(|d| d.abs()).sum::<f64>() - steps.iter().sum::<f64>().abs()
}
