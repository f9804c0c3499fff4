use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rreml::experiments::{
    anova_balanced, curve_irregularity, experiment, factorial_grid, interaction_plot_data, ls_means, run_settings,
    write_interaction_csv, write_replicate_csv, write_summary_csv, ExperimentSetting, FactorialGrids, PlotFactor,
    SettingSummary, VarianceMode,
};
use rreml::invivo::{phi_range, phi_sweep, write_invivo_csv, HmoDataset};
use rreml::io::Table;
use rreml::model_system::{simulate, sufficient_stats, ClusteredDataset, DesignSpec, FixedEffects, VarianceParams};
use rreml::predictor::{
    log10_predictor_minus_one, log10_predictor_plus_one, predictor_minus_one_with, predictor_plus_one_with,
    predictor_sweep, sweep_table, write_sweep_csv, DrawSpec, PredictorForm, PredictorInputs,
};
use rreml::reml::{fit_balanced, fit_general, GeneralDataset};

use crate::config::RunConfig;
use crate::{Cli, CliError, Command, VarianceModeArg};

/// Compact number for tables: plain in `[0.01, 1e4)`, else scientific.
fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e4) {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

fn create(cfg: &RunConfig, name: &str) -> Result<(BufWriter<File>, std::path::PathBuf), CliError> {
    let path = cfg.output(name)?;
    let f = File::create(&path).map_err(|e| CliError::infra(format!("{}: {e}", path.display())))?;
    Ok((BufWriter::new(f), path))
}

fn write_with(
    cfg: &RunConfig,
    name: &str,
    f: impl FnOnce(&mut BufWriter<File>) -> rreml::Result<()>,
) -> Result<(), CliError> {
    let (mut w, path) = create(cfg, name)?;
    f(&mut w).map_err(CliError::infra)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError {
        kind: crate::Exit::Data,
        message: format!("cannot read {}: {e}", path.display()),
    })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&cli.common)?;
    match cli.command {
        Command::Predictor { n, s, rho, r, as_printed } => predictor(n, s, rho, r, as_printed),
        Command::Simulate { n, s, sigma2_e, sigma2_c, sigma2_s, rho, b0, b1, output } => {
            let design = DesignSpec::new(n, s).map_err(CliError::from_usage)?;
            let vp = VarianceParams::new(sigma2_e, sigma2_c, sigma2_s, rho).map_err(CliError::from_usage)?;
            let data = simulate(design, FixedEffects { b0, b1 }, vp, cfg.seed).map_err(CliError::from_usage)?;
            write_with(&cfg, &output, |w| data.write_csv(w))
        }
        Command::Fit { input, fixed, general, output } => fit(&cfg, &input, &fixed, general, &output),
        Command::Experiment { name, scale, draws, variance_mode } => {
            experiment_cmd(&cfg, &name, scale, draws, variance_mode)
        }
        Command::Invivo { data, surrogate, phi_start, phi_end, phi_step, output } => {
            let phis = phi_range(phi_start, phi_end, phi_step).map_err(CliError::from_usage)?;
            let ds = match (data, surrogate) {
                (_, true) => HmoDataset::surrogate(cfg.seed).map_err(CliError::data)?,
                (Some(p), false) => HmoDataset::read_csv(read_text(&p)?.as_bytes()).map_err(CliError::data)?,
                (None, false) => return Err(CliError::usage("give --data or --surrogate")),
            };
            let rows = phi_sweep(&ds, &phis, &cfg.fit, cfg.parallelism).map_err(CliError::data)?;
            println!("{} data: {} states, {} plans", ds.source(), ds.n_states(), ds.n_plans());
            println!("{:>5} {:>8} {:>10} {:>10} {:>10} {:>10}  classification", "phi", "rho_hat", "s2_e", "s2_e/phi2", "s2_c", "s2_s");
            for r in &rows {
                println!(
                    "{:>5.2} {:>8} {:>10.1} {:>10.1} {:>10} {:>10}  {} {}",
                    r.phi,
                    if r.rho_hat.is_nan() { "NaN".to_string() } else { format!("{:.3}", r.rho_hat) },
                    r.sigma2_e,
                    r.sigma2_e_over_phi2,
                    num(r.sigma2_c),
                    num(r.sigma2_s),
                    r.classification,
                    r.source
                );
            }
            write_with(&cfg, &output, |w| write_invivo_csv(&rows, w))
        }
        Command::Anova { input, factors, response, ls_means: lsm, output } => {
            let table = Table::read_csv(read_text(&input)?.as_bytes()).map_err(CliError::data)?;
            let names: Vec<&str> = factors.iter().map(String::as_str).collect();
            let a = anova_balanced(&table, &names, &response).map_err(CliError::data)?;
            println!("{:<24} {:>6} {:>14} {:>14}", "term", "df", "SS", "MS");
            for t in a.terms.iter().chain(std::iter::once(&a.residual)) {
                println!("{:<24} {:>6} {:>14.6} {:>14.6}", t.name, t.df, t.ss, t.ms);
            }
            for f in &lsm {
                println!("\nLS-means of {f}");
                for m in ls_means(&table, &names, &response, f).map_err(CliError::data)? {
                    println!("  {:>10} {:>12.5}", m.level, m.mean);
                }
            }
            write_with(&cfg, &output, |w| a.write_csv(w))
        }
    }
}

fn predictor(n: usize, s: usize, rho: f64, r: f64, as_printed: bool) -> Result<(), CliError> {
    let inputs = PredictorInputs::new(n, s, rho, r).map_err(CliError::from_usage)?;
    let form = if as_printed { PredictorForm::AsPrinted } else { PredictorForm::Corrected };
    println!("N={n} s={s} rho={rho} r={r} form={}", if as_printed { "as-printed" } else { "corrected" });
    println!("{:<8} {:>14} {:>10}", "", "predictor", "log10");
    println!(
        "{:<8} {:>14} {:>10.4}",
        "pred_m1",
        format!("{:.4e}", predictor_minus_one_with(&inputs, form)),
        log10_predictor_minus_one(&inputs, form)
    );
    println!(
        "{:<8} {:>14} {:>10.4}",
        "pred_p1",
        format!("{:.4e}", predictor_plus_one_with(&inputs, form)),
        log10_predictor_plus_one(&inputs, form)
    );
    Ok(())
}

fn fit(cfg: &RunConfig, input: &Path, fixed: &[String], general: bool, output: &str) -> Result<(), CliError> {
    let text = read_text(input)?;
    let use_general = general || !fixed.is_empty();
    let json = if use_general {
        let extra: Vec<&str> = fixed.iter().map(String::as_str).collect();
        let data = GeneralDataset::read_csv(text.as_bytes(), &extra).map_err(CliError::data)?;
        let f = fit_general(&data, &cfg.fit).map_err(CliError::data)?;
        println!("engine=general clusters={} n={}", data.clusters().len(), data.n_obs());
        println!("beta_hat={:?}", f.beta_hat);
        print_params(&f.params, f.classification.as_str(), f.log_rl, f.converged);
        f.to_json()
    } else {
        match ClusteredDataset::read_csv(text.as_bytes()) {
            Ok(data) => {
                let f = fit_balanced(&sufficient_stats(&data), &cfg.fit).map_err(CliError::data)?;
                let d = data.design();
                println!("engine=balanced N={} s={}", d.n_clusters(), d.cluster_size());
                print_params(&f.params, f.classification.as_str(), f.log_rl, f.converged);
                f.to_json()
            }
            // Not a balanced layout: hand it to the general engine.
            Err(rreml::Error::InvalidInput(_)) => return fit(cfg, input, fixed, true, output),
            Err(e) => return Err(CliError::data(e)),
        }
    };
    write_with(cfg, output, |w| {
        use std::io::Write;
        writeln!(w, "{json}").map_err(rreml::Error::from)
    })
}

fn print_params(p: &VarianceParams, class: &str, log_rl: f64, converged: bool) {
    println!(
        "sigma2_e={} sigma2_c={} sigma2_s={} rho={} classification={class} log_rl={log_rl:.6} converged={converged}",
        num(p.sigma2_e),
        num(p.sigma2_c),
        num(p.sigma2_s),
        num(p.rho)
    );
}

fn print_summaries(rows: &[SettingSummary]) {
    println!(
        "{:>4} {:>5} {:>4} {:>6} {:>10} {:>10} {:>10} {:>6} {:>6} {:>6} {:>6}",
        "set", "N", "s", "rho", "r", "pred_m1", "pred_p1", "%-1", "%+1", "%NaN", "%bad"
    );
    for s in rows {
        let st = &s.setting;
        println!(
            "{:>4} {:>5} {:>4} {:>6.2} {:>10} {:>10} {:>10} {:>6.1} {:>6.1} {:>6.1} {:>6.1}",
            st.setting,
            st.n_clusters,
            st.cluster_size,
            st.rho,
            num(st.r),
            num(s.pred_m1),
            num(s.pred_p1),
            s.pct_m1,
            s.pct_p1,
            s.pct_nan,
            s.pct_bad
        );
    }
}

fn experiment_cmd(cfg: &RunConfig, name: &str, scale: f64, draws: usize, mode: VarianceModeArg) -> Result<(), CliError> {
    if name == "predictor-sweep" {
        let rows = predictor_sweep(&DrawSpec::default(), draws, cfg.seed).map_err(CliError::from_usage)?;
        write_with(cfg, "predictor_sweep.csv", |w| write_sweep_csv(&rows, w))?;
        let table = sweep_table(&rows).map_err(CliError::infra)?;
        let factors = ["N", "s", "rho", "log10_r"];
        let a = match anova_balanced(&table, &factors, "log10_pred_m1") {
            Ok(a) => a,
            Err(e @ rreml::Error::RankDeficient(_)) => {
                eprintln!("warning: ANOVA skipped, {e}; use more draws");
                return Ok(());
            }
            Err(e) => return Err(CliError::data(e)),
        };
        println!("{:<16} {:>5} {:>14}", "term", "df", "MS");
        for t in a.terms.iter().chain(std::iter::once(&a.residual)) {
            println!("{:<16} {:>5} {:>14.6}", t.name, t.df, t.ms);
        }
        for f in ["N", "s"] {
            let m = ls_means(&table, &factors, "log10_pred_m1", f).map_err(CliError::data)?;
            let line: Vec<String> = m.iter().map(|l| format!("{}:{:.3}", l.level, l.mean)).collect();
            println!("LS-means {f}: {}", line.join(" "));
        }
        return write_with(cfg, "predictor_sweep_anova.csv", |w| a.write_csv(w));
    }
    let mut settings: Vec<ExperimentSetting> = if name == "factorial" {
        let grids = FactorialGrids::default().scaled(scale).map_err(CliError::from_usage)?;
        factorial_grid(&grids)
    } else {
        experiment(name).map_err(CliError::from_usage)?
    };
    if mode == VarianceModeArg::FixError {
        for s in &mut settings {
            s.variance_mode = VarianceMode::FixError;
        }
    }
    let runs = run_settings(&settings, &cfg.run_options()).map_err(CliError::from_usage)?;
    let summaries: Vec<SettingSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    if name == "factorial" {
        for (factor, tag) in [(PlotFactor::NClusters, "N"), (PlotFactor::ClusterSize, "s"), (PlotFactor::Rho, "rho")] {
            let rows = interaction_plot_data(&summaries, factor);
            write_with(cfg, &format!("factorial_by_{tag}.csv"), |w| write_interaction_csv(&rows, w))?;
        }
        let by_r = interaction_plot_data(&summaries, PlotFactor::Rho);
        let mut lr: Vec<f64> = by_r.iter().map(|r| r.log10_r).collect();
        lr.dedup();
        println!("{} settings, {} replicates each", summaries.len(), summaries.first().map_or(0, |s| s.setting.reps));
        println!("{:>8} {:>8} {:>8} {:>8} {:>8}", "log10_r", "%bad", "%-1", "%+1", "%NaN");
        let pooled: Vec<[f64; 4]> = lr
            .iter()
            .map(|&l| {
                let at: Vec<_> = by_r.iter().filter(|r| r.log10_r == l).collect();
                let k = at.len() as f64;
                [
                    at.iter().map(|r| r.pct_bad).sum::<f64>() / k,
                    at.iter().map(|r| r.pct_m1).sum::<f64>() / k,
                    at.iter().map(|r| r.pct_p1).sum::<f64>() / k,
                    at.iter().map(|r| r.pct_nan).sum::<f64>() / k,
                ]
            })
            .collect();
        for (l, p) in lr.iter().zip(&pooled) {
            println!("{l:>8.2} {:>8.1} {:>8.1} {:>8.1} {:>8.1}", p[0], p[1], p[2], p[3]);
        }
        let col = |k: usize| pooled.iter().map(|p| p[k]).collect::<Vec<_>>();
        println!(
            "irregularity: -1 {:.2}  +1 {:.2}  NaN {:.2}",
            curve_irregularity(&col(1)),
            curve_irregularity(&col(2)),
            curve_irregularity(&col(3))
        );
    } else {
        print_summaries(&summaries);
    }
    let tag = name.to_string();
    write_with(cfg, &format!("{tag}_summary.csv"), |w| write_summary_csv(&summaries, w))?;
    write_with(cfg, &format!("{tag}_replicates.csv"), |w| write_replicate_csv(runs.iter().flat_map(|r| &r.records), w))
}
