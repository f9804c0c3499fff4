//! Simulation experiments on the balanced model system.
//!
//! A setting fixes `(N, s, ρ, r)` and a replicate count. Each replicate
//! simulates one dataset from its own random stream, fits it without the
//! `σ²_c = σ²_s` constraint used to generate it, and records the outcome.

mod anova;
mod factorial;
mod runner;
mod stats;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_system::{DesignSpec, VarianceParams};

pub use anova::{anova_balanced, ls_means, AnovaTable, AnovaTerm, LsMean};
pub use factorial::{
    curve_irregularity, factorial_grid, interaction_plot_data, write_interaction_csv, FactorialGrids, InteractionRow,
    PlotFactor,
};
pub use runner::{
    run_setting, run_settings, write_replicate_csv, write_summary_csv, ReplicateRecord, RunOptions, SettingRun,
    SettingSummary, FIT_ERROR,
};
pub use stats::{cochran_armitage_trend, sign_test_plus_vs_minus, two_proportion_test};

/// How the variances are pinned for a given `r = σ²_e / σ²_r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VarianceMode {
    /// `σ²_c = σ²_s = 1`, `σ²_e = r`.
    #[default]
    FixRandomEffects,
    /// `σ²_e = 1`, `σ²_c = σ²_s = 1/r`.
    FixError,
}

/// One cell of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSetting {
    /// `A` to `G`, or `factorial`.
    pub experiment: String,
    /// 1-based index within the experiment.
    pub setting: usize,
    pub n_clusters: usize,
    pub cluster_size: usize,
    pub rho: f64,
    pub r: f64,
    pub reps: usize,
    pub variance_mode: VarianceMode,
}

impl ExperimentSetting {
    pub fn new(
        experiment: impl Into<String>,
        setting: usize,
        n_clusters: usize,
        cluster_size: usize,
        rho: f64,
        r: f64,
        reps: usize,
    ) -> Self {
        Self {
            experiment: experiment.into(),
            setting,
            n_clusters,
            cluster_size,
            rho,
            r,
            reps,
            variance_mode: VarianceMode::FixRandomEffects,
        }
    }

    /// Stream label for this setting. Built from the experiment name and the
    /// setting values, so it does not depend on the order of a catalog.
    pub fn id(&self) -> String {
        format!(
            "{}:{}:N={}:s={}:rho={:?}:r={:?}",
            self.experiment, self.setting, self.n_clusters, self.cluster_size, self.rho, self.r
        )
    }

    pub fn validate(&self) -> Result<()> {
        DesignSpec::new(self.n_clusters, self.cluster_size)?;
        if self.reps == 0 {
            return Err(Error::invalid(format!("{}: reps must be at least 1", self.id())));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::invalid(format!("{}: r must be positive", self.id())));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("{}: rho out of range", self.id())));
        }
        Ok(())
    }

    pub fn design(&self) -> Result<DesignSpec> {
        DesignSpec::new(self.n_clusters, self.cluster_size)
    }

    /// True variance parameters used for simulation.
    pub fn variance_params(&self) -> Result<VarianceParams> {
        match self.variance_mode {
            VarianceMode::FixRandomEffects => VarianceParams::new(self.r, 1.0, 1.0, self.rho),
            VarianceMode::FixError => VarianceParams::new(1.0, 1.0 / self.r, 1.0 / self.r, self.rho),
        }
    }
}

fn block(name: &str, reps: usize, rows: &[(usize, usize, f64, f64)]) -> Vec<ExperimentSetting> {
    rows.iter()
        .enumerate()
        .map(|(k, &(n, s, rho, r))| ExperimentSetting::new(name, k + 1, n, s, rho, r, reps))
        .collect()
}

/// Experiments A to G, 50 settings in table order.
///
/// Experiments C and D use `r = 10^0.8` and `10^1.2` (shown as 6.3 and 15.8).
pub fn experiment_catalog() -> Vec<ExperimentSetting> {
    let lo = 10f64.powf(0.8);
    let hi = 10f64.powf(1.2);
    let powers = [1e1, 1e2, 1e3, 1e4, 1e5];
    let mut out = Vec::with_capacity(50);
    out.extend(block("A", 100, &powers.map(|r| (500, 21, 0.0, r))));
    out.extend(block("B", 100, &powers.map(|r| (500, 21, 0.95, r))));
    out.extend(block(
        "C",
        400,
        &[(100, 9, -0.8, lo), (100, 9, -0.8, hi), (500, 9, -0.8, hi), (100, 25, -0.8, hi), (100, 9, 0.0, hi)],
    ));
    out.extend(block(
        "D",
        600,
        &[(100, 9, -0.8, hi), (100, 9, -0.8, lo), (21, 9, -0.8, lo), (100, 3, -0.8, lo), (100, 9, -0.96, lo)],
    ));
    out.extend(block(
        "E",
        400,
        &[(20, 25, -0.8, 6.0), (20, 25, -0.8, 15.0), (104, 25, -0.8, 15.0), (20, 63, -0.8, 15.0), (20, 25, 0.0, 15.0)],
    ));
    out.extend(block(
        "F",
        400,
        &[(1000, 3, -0.8, 9.0), (1000, 3, -0.8, 23.0), (5350, 3, -0.8, 23.0), (1000, 9, -0.8, 23.0), (1000, 3, 0.0, 23.0)],
    ));
    let mut g = Vec::with_capacity(20);
    for r in [53.0, 271.0, 3000.0, 1e5] {
        for rho in [-0.95, -0.5, 0.0, 0.5, 0.95] {
            g.push((500, 21, rho, r));
        }
    }
    out.extend(block("G", 400, &g));
    out
}

/// Settings of one named experiment (`A` to `G`).
pub fn experiment(name: &str) -> Result<Vec<ExperimentSetting>> {
    let settings: Vec<ExperimentSetting> = experiment_catalog().into_iter().filter(|s| s.experiment == name).collect();
    if settings.is_empty() {
        return Err(Error::invalid(format!("unknown experiment `{name}`")));
    }
    Ok(settings)
}
