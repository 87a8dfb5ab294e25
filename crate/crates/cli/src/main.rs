use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use glance_core::data::io::{load_dataset, save_dataset};
use glance_core::data::Dataset;
use glance_core::gradient_suite;
use glance_core::metrics::{paired_t_test_one_tailed, ReportTable};
use glance_core::persist::{config_hash, load_checkpoint, load_checkpoint_for, load_config, render_config, save_checkpoint, write_atomic};
use glance_core::train::{evaluate_weights, run_experiment, Ablations, Experiment, Regime};

/// Hourglass glance classification experiments.
#[derive(Parser, Debug)]
#[command(name = "glance", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seeds with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for `eval`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic dataset described by the config.
    GenData,
    /// Train one regime for every configured seed.
    Train {
        /// Dataset directory from `gen-data`; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Load even if the checkpoint was written under a different config.
        #[arg(long)]
        force: bool,
    },
    /// Finite-difference check of every operator and loss.
    Gradcheck,
    /// Label-fraction sweep of mixed and multi-domain training.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.1,0.01")]
        fractions: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "mixed,multidomain")]
        regimes: Vec<Regime>,
    },
    /// One-tailed paired t-test of two reports' per-seed macro AUCs (is A better than B?).
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        eval_set: Option<String>,
    },
    /// Standard regime with each ablation variant.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "full,no_rec,no_cls_pretrain,no_skip,mse_rec")]
        variants: Vec<String>,
    },
}

fn experiment(common: &Common) -> Result<Experiment> {
    let mut exp = match &common.config {
        Some(path) => load_config(path).with_context(|| format!("reading {}", path.display()))?,
        None => Experiment::new("experiment", glance_core::train::RegimeConfig::new(Regime::Standard)),
    };
    if let Some(seed) = common.seed {
        exp.regime.seeds = vec![seed];
    }
    exp.validate()?;
    Ok(exp)
}

fn out_dir(common: &Common) -> Result<&Path> {
    match &common.out {
        Some(p) => Ok(p),
        None => bail!("--out is required for this command"),
    }
}

fn dataset(exp: &Experiment, dir: Option<&Path>) -> Result<Dataset> {
    match dir {
        Some(d) => Ok(load_dataset(d).with_context(|| format!("loading dataset {}", d.display()))?),
        None => Ok(exp.generate()?),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn train_and_report(exp: &Experiment, base: &Dataset, out: &Path) -> Result<ReportTable> {
    let hash = config_hash(exp);
    let (table, runs) = run_experiment::<f32>(exp, base, &hash)?;
    for run in &runs {
        let dir = out.join(format!("seed{}", run.seed));
        save_checkpoint(&dir.join("model.glhg"), &run.outcome.weights, None, &hash)?;
        write_text(&dir.join("history.tsv"), &run.outcome.history.to_tsv())?;
        for (set, m) in &run.reports {
            println!("{} seed {} {set}: macro AUC {:.4}", exp.regime_label(), run.seed, m.auc.macro_avg);
        }
    }
    Ok(table)
}

fn header(exp: &Experiment) -> String {
    render_config(exp).lines().map(|l| format!("# {l}\n")).collect()
}

fn run(cli: Cli) -> Result<bool> {
    let common = &cli.common;
    match cli.command {
        Command::GenData => {
            let mut exp = experiment(common)?;
            if let Some(seed) = common.seed {
                exp.data.seed = seed;
            }
            let out = out_dir(common)?;
            let ds = exp.generate()?;
            save_dataset(out, &ds)?;
            write_text(&out.join("config.cfg"), &render_config(&exp))?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Train { data } => {
            let exp = experiment(common)?;
            let out = out_dir(common)?;
            let base = dataset(&exp, data.as_deref())?;
            let table = train_and_report(&exp, &base, out)?;
            write_text(&out.join("config.cfg"), &render_config(&exp))?;
            write_text(&out.join("report.tsv"), &(header(&exp) + &table.to_tsv()))?;
        }
        Command::Eval { checkpoint, data, force } => {
            let exp = experiment(common)?;
            let ck = if common.config.is_some() {
                load_checkpoint_for::<f32>(&checkpoint, &config_hash(&exp), force)?
            } else {
                load_checkpoint::<f32>(&checkpoint)?
            };
            let ds = dataset(&exp, data.as_deref())?;
            let reports = evaluate_weights(&ck.weights, &ds, &exp.eval_sets())?;
            let mut table = ReportTable::new(ck.config_hash.clone());
            let seed = exp.regime.seeds[0];
            for (set, m) in &reports {
                println!("{set}: macro AUC {:.4}", m.auc.macro_avg);
                for (c, row) in m.confusion.rows.iter().enumerate() {
                    println!("  {c}: {}", row.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "));
                }
                table.add_run(&exp.name, &exp.regime_label(), exp.regime.label_fraction, seed, set, m);
            }
            if let Some(out) = &common.out {
                write_text(out, &table.to_tsv())?;
            }
        }
        Command::Gradcheck => {
            let reports = gradient_suite::run(common.seed.unwrap_or(0))?;
            let mut ok = true;
            for r in &reports {
                let pass = r.max_rel_error < 1e-4;
                ok &= pass;
                println!(
                    "{} {:<48} max rel error {:.3e} over {} coordinates",
                    if pass { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_rel_error,
                    r.coordinates
                );
            }
            return Ok(ok);
        }
        Command::Sweep { fractions, regimes } => {
            let base_exp = experiment(common)?;
            let out = out_dir(common)?;
            let mut all = ReportTable::new(config_hash(&base_exp));
            for &fraction in &fractions {
                for &regime in &regimes {
                    let mut exp = base_exp.clone();
                    exp.regime.regime = regime;
                    exp.regime.label_fraction = fraction;
                    exp.n_domains = 2;
                    exp.name = format!("{}_{}_{fraction}", base_exp.name, regime);
                    let base = exp.generate()?;
                    let table = train_and_report(&exp, &base, &out.join(&exp.name))?;
                    all.rows.extend(table.rows);
                }
            }
            write_text(&out.join("config.cfg"), &render_config(&base_exp))?;
            write_text(&out.join("report.tsv"), &(header(&base_exp) + &all.to_tsv()))?;
        }
        Command::Compare { a, b, eval_set } => {
            let (ta, tb) = (read_report(&a)?, read_report(&b)?);
            let set = match eval_set {
                Some(s) => s,
                None => ta.rows.first().map(|r| r.eval_set.clone()).context("report A has no rows")?,
            };
            let (xa, xb) = paired(&ta, &tb, &set)?;
            let t = paired_t_test_one_tailed(&xa, &xb)?;
            println!("eval set {set}, {} paired seeds", xa.len());
            println!("t = {:.4}, df = {}, one-tailed p = {:.6}{}", t.t, t.df, t.p, t.degenerate.map_or(String::new(), |d| format!(" ({d:?})")));
            if let Some(out) = &common.out {
                write_text(out, &format!("eval_set\tn\tt\tdf\tp\n{set}\t{}\t{}\t{}\t{}\n", xa.len(), t.t, t.df, t.p))?;
            }
        }
        Command::Ablate { variants } => {
            let base_exp = experiment(common)?;
            let out = out_dir(common)?;
            let parsed = variants.iter().map(|v| parse_variant(v)).collect::<Result<Vec<_>>>()?;
            let base = base_exp.generate()?;
            let mut all = ReportTable::new(config_hash(&base_exp));
            for (v, ablations) in variants.iter().zip(parsed) {
                let mut exp = base_exp.clone();
                exp.regime.regime = Regime::Standard;
                exp.regime.ablations = ablations;
                exp.name = format!("{}_{v}", base_exp.name);
                let table = train_and_report(&exp, &base, &out.join(v))?;
                all.rows.extend(table.rows);
            }
            write_text(&out.join("config.cfg"), &render_config(&base_exp))?;
            write_text(&out.join("report.tsv"), &(header(&base_exp) + &all.to_tsv()))?;
        }
    }
    Ok(true)
}

fn parse_variant(v: &str) -> Result<Ablations> {
    let mut a = Ablations::default();
    for flag in v.split('+') {
        match flag {
            "full" => {}
            "no_rec" => a.no_rec = true,
            "no_cls_pretrain" => a.no_cls_pretrain = true,
            "no_skip" => a.no_skip = true,
            "mse_rec" => a.mse_rec = true,
            other => bail!("unknown ablation `{other}`"),
        }
    }
    Ok(a)
}

fn read_report(path: &Path) -> Result<ReportTable> {
    let file = if path.is_dir() { path.join("report.tsv") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    Ok(ReportTable::from_tsv(&text)?)
}

/// Per-seed macro AUCs present in both reports, ordered by seed.
fn paired(a: &ReportTable, b: &ReportTable, set: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let only = |t: &ReportTable| -> Result<Vec<(u64, f64)>> {
        let names: std::collections::BTreeSet<&str> = t.rows.iter().filter(|r| r.eval_set == set).map(|r| r.experiment.as_str()).collect();
        match names.len() {
            1 => Ok(t.macro_by_seed(names.first().expect("one name"), set)),
            0 => bail!("no rows for eval set {set}"),
            _ => bail!("report holds several experiments ({names:?}); compare one at a time"),
        }
    };
    let (ra, rb) = (only(a)?, only(b)?);
    let mut xa = Vec::new();
    let mut xb = Vec::new();
    for (seed, va) in &ra {
        if let Some((_, vb)) = rb.iter().find(|(s, _)| s == seed) {
            xa.push(*va);
            xb.push(*vb);
        }
    }
    if xa.len() < 2 {
        bail!("need at least two shared seeds, found {}", xa.len());
    }
    Ok((xa, xb))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
