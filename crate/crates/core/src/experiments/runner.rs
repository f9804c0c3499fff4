use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::ExperimentSetting;
use crate::error::{Error, Result};
use crate::model_system::{simulate, sufficient_stats, FixedEffects};
use crate::predictor::{predictor_minus_one, predictor_plus_one, PredictorInputs};
use crate::reml::{fit_balanced, Classification, FitOptions};
use crate::rng::replicate_seed;

/// Classification string recorded for a replicate whose fit failed.
pub const FIT_ERROR: &str = "FIT_ERROR";

/// Knobs shared by every setting of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub master_seed: u64,
    /// Worker threads. Results do not depend on it.
    pub parallelism: usize,
    /// Replaces every setting's replicate count when set.
    pub reps_override: Option<usize>,
    pub fit: FitOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            master_seed: 1,
            parallelism: 1,
            reps_override: None,
            fit: FitOptions::default(),
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(Error::invalid("parallelism must be at least 1"));
        }
        if self.reps_override == Some(0) {
            return Err(Error::invalid("reps must be at least 1"));
        }
        self.fit.validate()
    }
}

/// One fitted replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub experiment: String,
    pub setting: usize,
    pub rep: usize,
    pub seed: u64,
    pub sigma2_e: f64,
    pub sigma2_c: f64,
    pub sigma2_s: f64,
    /// `NaN` when a random-effect variance is zero.
    pub rho_hat: f64,
    pub classification: String,
    pub log_rl: f64,
    pub converged: bool,
    #[serde(skip)]
    pub outcome: Option<Classification>,
}

/// Outcome percentages of one setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingSummary {
    pub setting: ExperimentSetting,
    pub pred_m1: f64,
    pub pred_p1: f64,
    pub pct_m1: f64,
    pub pct_p1: f64,
    pub pct_nan: f64,
    pub pct_bad: f64,
    /// Monte-Carlo standard error of `pct_bad`, in percentage points.
    pub mc_se_bad: f64,
    pub n_fit_errors: usize,
    pub n_not_converged: usize,
}

impl SettingSummary {
    fn from_records(setting: &ExperimentSetting, records: &[ReplicateRecord]) -> Self {
        let reps = records.len();
        let count = |c: Classification| records.iter().filter(|r| r.outcome == Some(c)).count();
        let (m1, p1, nan) = (
            count(Classification::RhoMinusOne),
            count(Classification::RhoPlusOne),
            count(Classification::ZeroVariance),
        );
        let pct = |k: usize| 100.0 * k as f64 / reps as f64;
        let p_bad = (m1 + p1 + nan) as f64 / reps as f64;
        let (pred_m1, pred_p1) = match PredictorInputs::new(setting.n_clusters, setting.cluster_size, setting.rho, setting.r) {
            Ok(i) => (predictor_minus_one(&i), predictor_plus_one(&i)),
            Err(_) => (f64::NAN, f64::NAN),
        };
        Self {
            setting: ExperimentSetting {
                reps,
                ..setting.clone()
            },
            pred_m1,
            pred_p1,
            pct_m1: pct(m1),
            pct_p1: pct(p1),
            pct_nan: pct(nan),
            pct_bad: pct(m1 + p1 + nan),
            mc_se_bad: 100.0 * (p_bad * (1.0 - p_bad) / reps as f64).sqrt(),
            n_fit_errors: records.iter().filter(|r| r.outcome.is_none()).count(),
            n_not_converged: records.iter().filter(|r| !r.converged).count(),
        }
    }

    pub fn count_m1(&self) -> usize {
        (self.pct_m1 * self.setting.reps as f64 / 100.0).round() as usize
    }

    pub fn count_p1(&self) -> usize {
        (self.pct_p1 * self.setting.reps as f64 / 100.0).round() as usize
    }

    pub fn count_bad(&self) -> usize {
        (self.pct_bad * self.setting.reps as f64 / 100.0).round() as usize
    }
}

/// Summary plus replicate records of one setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingRun {
    pub summary: SettingSummary,
    pub records: Vec<ReplicateRecord>,
}

fn run_replicate(setting: &ExperimentSetting, rep: usize, opts: &RunOptions) -> ReplicateRecord {
    let seed = replicate_seed(opts.master_seed, &setting.id(), rep as u64);
    let fitted = setting
        .variance_params()
        .and_then(|vp| simulate(setting.design()?, FixedEffects::default(), vp, seed))
        .and_then(|data| fit_balanced(&sufficient_stats(&data), &opts.fit));
    let base = ReplicateRecord {
        experiment: setting.experiment.clone(),
        setting: setting.setting,
        rep: rep + 1,
        seed,
        sigma2_e: f64::NAN,
        sigma2_c: f64::NAN,
        sigma2_s: f64::NAN,
        rho_hat: f64::NAN,
        classification: FIT_ERROR.to_string(),
        log_rl: f64::NAN,
        converged: false,
        outcome: None,
    };
    match fitted {
        Ok(fit) => ReplicateRecord {
            sigma2_e: fit.params.sigma2_e,
            sigma2_c: fit.params.sigma2_c,
            sigma2_s: fit.params.sigma2_s,
            rho_hat: if fit.classification == Classification::ZeroVariance {
                f64::NAN
            } else {
                fit.params.rho
            },
            classification: fit.classification.as_str().to_string(),
            log_rl: fit.log_rl,
            converged: fit.converged,
            outcome: Some(fit.classification),
            ..base
        },
        Err(_) => base,
    }
}

/// Runs every replicate of every setting on a pool of `opts.parallelism`
/// threads. Output order follows the input order, and every number in it is
/// independent of the thread count.
pub fn run_settings(settings: &[ExperimentSetting], opts: &RunOptions) -> Result<Vec<SettingRun>> {
    opts.validate()?;
    let settings: Vec<ExperimentSetting> = settings
        .iter()
        .map(|s| ExperimentSetting {
            reps: opts.reps_override.unwrap_or(s.reps),
            ..s.clone()
        })
        .collect();
    for s in &settings {
        s.validate()?;
    }
    let jobs: Vec<(usize, usize)> = settings
        .iter()
        .enumerate()
        .flat_map(|(k, s)| (0..s.reps).map(move |rep| (k, rep)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism)
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let records: Vec<ReplicateRecord> =
        pool.install(|| jobs.par_iter().map(|&(k, rep)| run_replicate(&settings[k], rep, opts)).collect());

    let mut out = Vec::with_capacity(settings.len());
    let mut rest = records.as_slice();
    for s in &settings {
        let (mine, tail) = rest.split_at(s.reps);
        rest = tail;
        out.push(SettingRun {
            summary: SettingSummary::from_records(s, mine),
            records: mine.to_vec(),
        });
    }
    Ok(out)
}

/// Runs a single setting.
pub fn run_setting(setting: &ExperimentSetting, opts: &RunOptions) -> Result<SettingRun> {
    Ok(run_settings(std::slice::from_ref(setting), opts)?.remove(0))
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    experiment: &'a str,
    setting: usize,
    #[serde(rename = "N")]
    n: usize,
    s: usize,
    rho: f64,
    r: f64,
    reps: usize,
    pred_m1: f64,
    pred_p1: f64,
    pct_m1: f64,
    pct_p1: f64,
    pct_nan: f64,
    pct_bad: f64,
    mc_se_bad: f64,
}

/// Writes `experiment,setting,N,s,rho,r,reps,pred_m1,pred_p1,pct_m1,pct_p1,pct_nan,pct_bad,mc_se_bad`.
pub fn write_summary_csv<W: Write>(summaries: &[SettingSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in summaries {
        let st = &s.setting;
        w.serialize(SummaryRow {
            experiment: &st.experiment,
            setting: st.setting,
            n: st.n_clusters,
            s: st.cluster_size,
            rho: st.rho,
            r: st.r,
            reps: st.reps,
            pred_m1: s.pred_m1,
            pred_p1: s.pred_p1,
            pct_m1: s.pct_m1,
            pct_p1: s.pct_p1,
            pct_nan: s.pct_nan,
            pct_bad: s.pct_bad,
            mc_se_bad: s.mc_se_bad,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `experiment,setting,rep,seed,sigma2_e,sigma2_c,sigma2_s,rho_hat,classification,log_rl,converged`.
pub fn write_replicate_csv<'a, W: Write>(records: impl IntoIterator<Item = &'a ReplicateRecord>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
