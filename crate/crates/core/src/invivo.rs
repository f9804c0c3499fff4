//! Residual inflation on a real clustered dataset.
//!
//! Health-plan premiums are fitted with a random intercept and slope per state.
//! Each sweep point rebuilds the data as `fit + φ·residual`, which raises the
//! error variance while leaving the fitted structure alone, and refits.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::FIT_ERROR;
use crate::model_system::VarianceParams;
use crate::reml::{fit_general, Classification, ClusterDesign, FitOptions, GeneralDataset, GeneralFitResult};
use crate::rng::{replicate_seed, stream};

/// One plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmoRecord {
    pub state: String,
    pub premium: f64,
    pub families: f64,
    pub exp_per_admission: f64,
    #[serde(deserialize_with = "flag")]
    pub new_england: bool,
}

fn flag<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Ok(true),
        "0" | "-1" | "false" | "no" | "n" => Ok(false),
        other => Err(serde::de::Error::custom(format!("new_england must be 0/1 or true/false, got `{other}`"))),
    }
}

const COLUMNS: [&str; 5] = ["state", "premium", "families", "exp_per_admission", "new_england"];

/// Plans grouped by state, with standardized regressors.
#[derive(Debug, Clone)]
pub struct HmoDataset {
    records: Vec<HmoRecord>,
    states: Vec<String>,
    /// State index of each record.
    state_of: Vec<usize>,
    /// Standardized `log₁₀ families`, per record.
    log_families: Vec<f64>,
    /// Standardized expenses per admission, per state.
    expenses: Vec<f64>,
    /// Standardized ±1 New England code, per state.
    new_england: Vec<f64>,
    surrogate: bool,
}

fn standardize(v: &[f64], what: &str) -> Result<Vec<f64>> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let z: Vec<f64> = v.iter().map(|x| (x - mean) / sd).collect();
    let m = z.iter().sum::<f64>() / n;
    let s = (z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(m.abs() <= 1e-10 && (s - 1.0).abs() <= 1e-10) {
        return Err(Error::invalid(format!("{what} cannot be standardized to mean 0 and sd 1")));
    }
    Ok(z)
}

impl HmoDataset {
    /// Validates plans and builds the standardized design. States keep the
    /// order of their first appearance.
    pub fn from_records(records: Vec<HmoRecord>) -> Result<Self> {
        let mut states: Vec<String> = Vec::new();
        let mut state_of = Vec::with_capacity(records.len());
        let mut state_rows: Vec<&HmoRecord> = Vec::new();
        for (k, r) in records.iter().enumerate() {
            let line = k + 2;
            if r.state.trim().is_empty() {
                return Err(Error::Parse { line, message: "empty state".into() });
            }
            if !(r.families > 0.0 && r.families.is_finite()) {
                return Err(Error::Parse { line, message: format!("families must be positive, got {}", r.families) });
            }
            if !r.premium.is_finite() || !r.exp_per_admission.is_finite() {
                return Err(Error::Parse { line, message: "non-finite value".into() });
            }
            match states.iter().position(|s| *s == r.state) {
                Some(i) => {
                    let first = state_rows[i];
                    if first.exp_per_admission != r.exp_per_admission || first.new_england != r.new_england {
                        return Err(Error::Parse {
                            line,
                            message: format!("state-level values differ within state {}", r.state),
                        });
                    }
                    state_of.push(i);
                }
                None => {
                    states.push(r.state.clone());
                    state_rows.push(r);
                    state_of.push(states.len() - 1);
                }
            }
        }
        if states.len() < 2 {
            return Err(Error::invalid(format!("need at least 2 states, got {}", states.len())));
        }
        let log_families = standardize(&records.iter().map(|r| r.families.log10()).collect::<Vec<_>>(), "log10 families")?;
        let expenses = standardize(&state_rows.iter().map(|r| r.exp_per_admission).collect::<Vec<_>>(), "expenses")?;
        let ne: Vec<f64> = state_rows.iter().map(|r| if r.new_england { 1.0 } else { -1.0 }).collect();
        let new_england = standardize(&ne, "New England indicator")?;
        Ok(Self {
            records,
            states,
            state_of,
            log_families,
            expenses,
            new_england,
            surrogate: false,
        })
    }

    /// Reads `state,premium,families,exp_per_admission,new_england`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut want: Vec<&str> = COLUMNS.to_vec();
        let mut got: Vec<&str> = header.iter().map(String::as_str).collect();
        want.sort_unstable();
        got.sort_unstable();
        if want != got {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected columns {}, got {}", COLUMNS.join(","), header.join(",")),
            });
        }
        let mut records = Vec::new();
        for (k, row) in rdr.deserialize().enumerate() {
            records.push(row.map_err(|e: csv::Error| Error::Parse { line: k + 2, message: e.to_string() })?);
        }
        Self::from_records(records)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(COLUMNS)?;
        for r in &self.records {
            w.write_record([
                r.state.clone(),
                format!("{:?}", r.premium),
                format!("{:?}", r.families),
                format!("{:?}", r.exp_per_admission),
                u8::from(r.new_england).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Synthetic stand-in with the real dataset's shape: 45 states, 341
    /// plans, plans per state from 1 to 31 with median 5, six New England
    /// states. Premiums come from the published point estimates.
    pub fn surrogate(seed: u64) -> Result<Self> {
        let mut rng = stream(replicate_seed(seed, "hmo-surrogate", 0));
        let mut sizes = SURROGATE_PLANS_PER_STATE.to_vec();
        sizes.shuffle(&mut rng);
        let log_fam = Normal::new(3.3, 0.55).expect("valid normal");
        let expense = Normal::new(6500.0, 1200.0).expect("valid normal");
        let mut records = Vec::with_capacity(341);
        for (state, &n) in SURROGATE_STATES.iter().zip(&sizes) {
            let exp: f64 = expense.sample(&mut rng);
            let exp = exp.max(1000.0).round();
            let ne = NEW_ENGLAND.contains(state);
            for _ in 0..n {
                records.push(HmoRecord {
                    state: state.to_string(),
                    premium: 0.0,
                    families: 10f64.powf(log_fam.sample(&mut rng)).round().max(1.0),
                    exp_per_admission: exp,
                    new_england: ne,
                });
            }
        }
        let mut ds = Self::from_records(records)?;
        let truth = VarianceParams::new(487.0, 97.7, 5.39, 0.115)?;
        let root = truth.sigma_sqrt();
        let std = Normal::new(0.0, 1.0).expect("valid normal");
        let u: Vec<[f64; 2]> = (0..ds.n_states())
            .map(|_| {
                let (a, b) = (std.sample(&mut rng), std.sample(&mut rng));
                [root[0][0] * a + root[0][1] * b, root[1][0] * a + root[1][1] * b]
            })
            .collect();
        let e = truth.sigma2_e.sqrt();
        let y: Vec<f64> = (0..ds.n_plans())
            .map(|k| {
                let i = ds.state_of[k];
                let x = ds.fixed_row(k);
                let mean: f64 = x.iter().zip(SURROGATE_BETA).map(|(a, b)| a * b).sum();
                mean + u[i][0] + u[i][1] * ds.log_families[k] + e * std.sample(&mut rng)
            })
            .collect();
        ds = ds.with_premiums(y)?;
        ds.surrogate = true;
        Ok(ds)
    }

    pub fn is_surrogate(&self) -> bool {
        self.surrogate
    }

    /// `SURROGATE` or `CANONICAL`.
    pub fn source(&self) -> &'static str {
        if self.surrogate {
            "SURROGATE"
        } else {
            "CANONICAL"
        }
    }

    pub fn records(&self) -> &[HmoRecord] {
        &self.records
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_plans(&self) -> usize {
        self.records.len()
    }

    pub fn plans_per_state(&self) -> Vec<usize> {
        let mut n = vec![0; self.n_states()];
        for &i in &self.state_of {
            n[i] += 1;
        }
        n
    }

    pub fn premiums(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.premium).collect()
    }

    /// Standardized `log₁₀ families`, one per plan.
    pub fn log_families(&self) -> &[f64] {
        &self.log_families
    }

    /// Standardized state covariates `(expenses, New England)`, one pair per state.
    pub fn state_covariates(&self) -> Vec<[f64; 2]> {
        self.expenses.iter().zip(&self.new_england).map(|(&a, &b)| [a, b]).collect()
    }

    /// `[1, log₁₀ families, expenses, New England]` for plan `k`, standardized.
    pub fn fixed_row(&self, k: usize) -> [f64; 4] {
        let i = self.state_of[k];
        [1.0, self.log_families[k], self.expenses[i], self.new_england[i]]
    }

    /// Same plans and design with new premiums, in record order.
    pub fn with_premiums(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n_plans() {
            return Err(Error::invalid(format!("expected {} premiums, got {}", self.n_plans(), y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("premium".into()));
        }
        let mut out = self.clone();
        for (r, v) in out.records.iter_mut().zip(y) {
            r.premium = v;
        }
        Ok(out)
    }

    /// Clusters by state, fixed effects from [`fixed_row`](Self::fixed_row),
    /// random intercept and slope in standardized `log₁₀ families`.
    pub fn to_general(&self) -> Result<GeneralDataset> {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); self.n_states()];
        for (k, &i) in self.state_of.iter().enumerate() {
            members[i].push(k);
        }
        let clusters = members
            .iter()
            .zip(&self.states)
            .map(|(ks, label)| {
                let t: Vec<f64> = ks.iter().map(|&k| self.log_families[k]).collect();
                let x = ks.iter().map(|&k| self.fixed_row(k).to_vec()).collect();
                let y = ks.iter().map(|&k| self.records[k].premium).collect();
                ClusterDesign::new(label.clone(), &t, x, y)
            })
            .collect();
        GeneralDataset::new(clusters, 4)
    }

    /// `x'β̂ + [1, x](û_0, û_1)'` per plan, in record order.
    pub fn fitted_values(&self, fit: &GeneralFitResult) -> Result<Vec<f64>> {
        if fit.beta_hat.len() != 4 || fit.eblups.len() != self.n_states() {
            return Err(Error::invalid("fit does not belong to this dataset"));
        }
        Ok((0..self.n_plans())
            .map(|k| {
                let u = fit.eblups[self.state_of[k]];
                let mean: f64 = self.fixed_row(k).iter().zip(&fit.beta_hat).map(|(a, b)| a * b).sum();
                mean + u[0] + u[1] * self.log_families[k]
            })
            .collect())
    }
}

/// Published point estimates `(b₀, b₁, b_E, b_N)` used to generate the surrogate.
const SURROGATE_BETA: [f64; 4] = [180.0, -2.21, 4.78, 16.1];

/// Sorted plans-per-state profile: min 1, median 5, max 31, total 341.
const SURROGATE_PLANS_PER_STATE: [usize; 45] = [
    1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 3, 4, 4, 4, 4, 4, 4, 5, 5, 5, 5, 5, 5, 6, 6, 6, 7, 7, 8, 8, 9, 9, 10, 11, 12,
    13, 14, 15, 18, 20, 22, 28, 31,
];

const SURROGATE_STATES: [&str; 45] = [
    "AL", "AZ", "AR", "CA", "CO", "CT", "DE", "DC", "FL", "GA", "HI", "ID", "IL", "IN", "IA", "KS", "KY", "LA", "ME",
    "MD", "MA", "MI", "MN", "MS", "MO", "NE", "NV", "NH", "NJ", "NM", "NY", "NC", "OH", "OK", "OR", "PA", "RI", "SC",
    "TN", "TX", "UT", "VT", "VA", "WA", "WI",
];

const NEW_ENGLAND: [&str; 6] = ["CT", "MA", "ME", "NH", "RI", "VT"];

/// Reads the canonical CSV from `path`.
pub fn ingest_hmo(path: impl AsRef<Path>) -> Result<HmoDataset> {
    HmoDataset::read_csv(std::fs::File::open(path)?)
}

/// REML fit with fixed effects `(1, log₁₀ families, expenses, New England)`.
pub fn fit_hmo(ds: &HmoDataset, opts: &FitOptions) -> Result<GeneralFitResult> {
    fit_general(&ds.to_general()?, opts)
}

/// `y(φ) = fit + φ(y - fit)` about a fixed fit.
pub fn inflate(ds: &HmoDataset, fit: &GeneralFitResult, phi: f64) -> Result<HmoDataset> {
    if !(phi.is_finite() && phi >= 0.0) {
        return Err(Error::invalid(format!("phi must be finite and non-negative, got {phi}")));
    }
    let fitted = ds.fitted_values(fit)?;
    let y = fitted.iter().zip(ds.premiums()).map(|(f, y)| f + phi * (y - f)).collect();
    ds.with_premiums(y)
}

/// One row of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvivoRow {
    pub phi: f64,
    /// `NaN` when a random-effect variance is zero.
    pub rho_hat: f64,
    pub sigma2_e: f64,
    pub sigma2_e_over_phi2: f64,
    pub sigma2_c: f64,
    pub sigma2_s: f64,
    pub classification: String,
    pub source: String,
    #[serde(skip)]
    pub outcome: Option<Classification>,
}

/// `1.0, 1.1, …, 2.5`.
pub fn default_phis() -> Vec<f64> {
    (10..=25).map(|k| k as f64 / 10.0).collect()
}

/// `start, start + step, …` up to `end` inclusive, on a lattice of `step`.
pub fn phi_range(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(start >= 0.0 && end >= start && step > 0.0 && start.is_finite() && end.is_finite()) {
        return Err(Error::invalid(format!("bad phi range {start}..{end} step {step}")));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

/// Fits the data once, then refits `inflate(ds, fit, φ)` for every `φ`, each
/// from a cold start. Rows follow `phis`. A failed refit is recorded as
/// [`FIT_ERROR`] with `NaN` estimates.
pub fn phi_sweep(ds: &HmoDataset, phis: &[f64], opts: &FitOptions, parallelism: usize) -> Result<Vec<InvivoRow>> {
    if parallelism == 0 {
        return Err(Error::invalid("parallelism must be at least 1"));
    }
    let base = fit_hmo(ds, opts)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let rows = pool.install(|| {
        phis.par_iter()
            .map(|&phi| {
                let fitted = inflate(ds, &base, phi).and_then(|d| fit_hmo(&d, opts));
                match fitted {
                    Ok(fit) => {
                        let p = fit.params;
                        InvivoRow {
                            phi,
                            rho_hat: if fit.classification == Classification::ZeroVariance { f64::NAN } else { p.rho },
                            sigma2_e: p.sigma2_e,
                            sigma2_e_over_phi2: p.sigma2_e / (phi * phi),
                            sigma2_c: p.sigma2_c,
                            sigma2_s: p.sigma2_s,
                            classification: fit.classification.as_str().to_string(),
                            source: ds.source().to_string(),
                            outcome: Some(fit.classification),
                        }
                    }
                    Err(_) => InvivoRow {
                        phi,
                        rho_hat: f64::NAN,
                        sigma2_e: f64::NAN,
                        sigma2_e_over_phi2: f64::NAN,
                        sigma2_c: f64::NAN,
                        sigma2_s: f64::NAN,
                        classification: FIT_ERROR.to_string(),
                        source: ds.source().to_string(),
                        outcome: None,
                    },
                }
            })
            .collect()
    });
    Ok(rows)
}

/// Writes `phi,rho_hat,sigma2_e,sigma2_e_over_phi2,sigma2_c,sigma2_s,classification,source`.
pub fn write_invivo_csv<W: Write>(rows: &[InvivoRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
