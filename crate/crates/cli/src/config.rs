//! `key = value` run configuration. Flags override file values.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use rreml::experiments::RunOptions;
use rreml::reml::FitOptions;

use crate::{CliError, CommonArgs};

const KEYS: [&str; 9] = [
    "seed",
    "parallelism",
    "out_dir",
    "reps",
    "rho_tol",
    "variance_tol",
    "max_evals",
    "starts",
    "polish_cycles",
];

/// Parses a config file. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected key = value", k + 1)))?;
        let key = key.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::usage(format!("config line {}: unknown key `{key}`", k + 1)));
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, CliError> {
    map.get(key)
        .map(|v| v.parse::<T>().map_err(|_| CliError::usage(format!("config key `{key}`: bad value `{v}`"))))
        .transpose()
}

/// Settings every command draws from, after merging.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub parallelism: usize,
    pub out_dir: PathBuf,
    pub reps: Option<usize>,
    pub fit: FitOptions,
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        let mut fit = FitOptions::default();
        if let Some(v) = args.rho_tol.or(parse(&file, "rho_tol")?) {
            fit.tolerances.rho = v;
        }
        if let Some(v) = args.variance_tol.or(parse(&file, "variance_tol")?) {
            fit.tolerances.variance_ratio = v;
        }
        if let Some(v) = args.max_evals.or(parse(&file, "max_evals")?) {
            fit.nelder_mead.max_evals = v;
        }
        if let Some(v) = args.starts.or(parse(&file, "starts")?) {
            fit.n_starts = v;
        }
        if let Some(v) = args.polish_cycles.or(parse(&file, "polish_cycles")?) {
            fit.polish_cycles = v;
        }
        let cfg = Self {
            seed: args.seed.or(parse(&file, "seed")?).unwrap_or(1),
            parallelism: args.parallelism.or(parse(&file, "parallelism")?).unwrap_or(1),
            out_dir: args
                .out_dir
                .clone()
                .or(parse::<PathBuf>(&file, "out_dir")?)
                .unwrap_or_else(|| PathBuf::from(".")),
            reps: args.reps.or(parse(&file, "reps")?),
            fit,
        };
        cfg.run_options().validate().map_err(CliError::from_usage)?;
        Ok(cfg)
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            master_seed: self.seed,
            parallelism: self.parallelism,
            reps_override: self.reps,
            fit: self.fit,
        }
    }

    /// Path of `name` inside the output directory. `name` must be a plain
    /// file name, so nothing is written elsewhere.
    pub fn output(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = Path::new(name);
        let mut parts = p.components();
        match (parts.next(), parts.next()) {
            (Some(Component::Normal(_)), None) => {}
            _ => return Err(CliError::usage(format!("output name `{name}` must be a plain file name"))),
        }
        std::fs::create_dir_all(&self.out_dir).map_err(CliError::infra)?;
        Ok(self.out_dir.join(p))
    }
}
