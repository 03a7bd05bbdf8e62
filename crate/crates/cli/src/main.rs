//! `kcqe`: solve, generate data, train and evaluate surrogates, and sweep.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure.

// `!(x > 0.0)` is how parameters reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use kcqe::cqe::AnsatzLayout;
use kcqe::surrogate::{MlpConfig, Samples};
use kcqe::{cqe, dataset, eval, oracle, surrogate, Error};
use serde_json::json;

use config::{ConfigArgs, RunConfig};

#[derive(Parser)]
#[command(
    name = "kcqe",
    version,
    about = "Contracted quantum eigensolver and neural surrogate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one Hamiltonian and compare with exact diagonalization.
    Solve(ConfigArgs),
    /// Generate a dataset of solved samples.
    Gen(ConfigArgs),
    /// Train a surrogate on a dataset.
    Train(ConfigArgs),
    /// Evaluate a trained surrogate on dataset records.
    Eval(ConfigArgs),
    /// Solve a one-parameter family on a grid.
    Sweep(ConfigArgs),
}

/// Failures sorted by exit code.
enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
}

fn classify(err: anyhow::Error) -> Failure {
    let numerical = err.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<Error>(),
            Some(
                Error::NotHermitian { .. }
                    | Error::NonFiniteObjective { .. }
                    | Error::DegenerateAnnihilation { .. }
                    | Error::Divergence { .. }
            )
        )
    });
    if numerical {
        Failure::Numerical(err)
    } else {
        Failure::Config(err)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => run(a, solve),
        Command::Gen(a) => run(a, gen),
        Command::Train(a) => run(a, train),
        Command::Eval(a) => run(a, evaluate),
        Command::Sweep(a) => run(a, sweep),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn run(args: &ConfigArgs, command: fn(RunConfig) -> anyhow::Result<()>) -> Result<(), Failure> {
    let cfg = args.merge().map_err(Failure::Config)?;
    command(cfg).map_err(classify)
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn solve(mut cfg: RunConfig) -> anyhow::Result<()> {
    let family = cfg.family()?;
    let k = cfg.k()?;
    let mode = cfg.mode()?;
    let solver = cfg.solver()?;
    let params = match (&cfg.params, cfg.sample_index) {
        (Some(p), _) => p.clone(),
        (None, Some(i)) => cfg.regime(&family)?.sample_at(i),
        (None, None) => bail!("solve needs `params` (or --U) or a `sample_index` with a regime seed"),
    };
    if params.len() != family.physical_param_dim() {
        bail!(
            "{} takes {} physical parameters, got {}",
            family.name(),
            family.physical_param_dim(),
            params.len()
        );
    }
    cfg.params = Some(params.clone());
    cfg.solver = Some(solver.clone());
    let out = cfg.out_dir();
    cfg.echo(&out)?;

    let solution = cqe::solve_kcqe_with(&family, &params, k, mode, &solver)?;
    let exact = oracle::exact_ground(&family, &params)?;
    let e0 = exact.ground_energy();
    let e = solution.energy();
    let rel = (e - e0).abs() / e0.abs();
    println!("family      {}", family.name());
    println!("params      {params:?}");
    for (i, r) in solution.per_iteration.iter().enumerate() {
        println!(
            "iteration {} E = {:.12} variance = {:.3e} status = {:?}",
            i + 1,
            r.energy,
            r.variance,
            r.status
        );
    }
    println!("E_cqe       {e:.15}");
    println!("E_exact     {e0:.15}");
    println!("rel_error   {rel:.6e}");
    let layout = AnsatzLayout::new(k, mode, family.term_count());
    write_json(
        &out.join("solve.json"),
        &json!({
            "config": cfg.as_json(),
            "family": family.name(),
            "params": params,
            "e_cqe": e,
            "e_exact": e0,
            "rel_error": rel,
            "ground_fidelity": exact.ground_fidelity(&solution.final_state)?,
            "per_iteration": solution.per_iteration,
            "flat_ansatz": layout.flatten(&solution.layers)?,
        }),
    )
}

fn gen(mut cfg: RunConfig) -> anyhow::Result<()> {
    let family = cfg.family()?;
    let regime = cfg.regime(&family)?;
    let k = cfg.k()?;
    let mode = cfg.mode()?;
    let count = cfg.count.ok_or_else(|| anyhow!("missing `count`"))?;
    cfg.solver = Some(cfg.solver()?);
    cfg.regime = Some(regime.name.clone());
    let out = cfg.out_dir();
    let path = cfg.dataset_path();
    cfg.dataset = Some(path.clone());
    cfg.echo(&out)?;
    let opts = dataset::GenerateOptions {
        solver: cfg.solver()?,
        workers: cfg.workers,
        run_config: Some(cfg.portable_json()),
    };
    let data = dataset::generate(&family, &regime, k, mode, count, &opts)?;
    dataset::save(&data, &path)?;
    let flagged = data.records.iter().filter(|r| r.is_flagged()).count();
    println!(
        "wrote {} records ({flagged} flagged) to {}",
        data.records.len(),
        path.display()
    );
    Ok(())
}

/// Training or evaluation split of a dataset, per the config or manifest.
fn split_records(
    cfg: &mut RunConfig,
    data: &dataset::Dataset,
) -> anyhow::Result<(Vec<dataset::SampleRecord>, Vec<dataset::SampleRecord>)> {
    let fraction = *cfg.train_fraction.get_or_insert(data.manifest.train_fraction);
    let seed = *cfg.split_seed.get_or_insert(data.manifest.split_seed);
    Ok(dataset::split(&data.records, fraction, seed)?)
}

fn load_matching(cfg: &RunConfig) -> anyhow::Result<(kcqe::HamiltonianFamily, dataset::Dataset)> {
    let path = cfg.dataset_path();
    let data = dataset::load(&path, false).with_context(|| format!("loading {}", path.display()))?;
    let family = if cfg.family.is_some() {
        let family = cfg.family()?;
        if family.metadata() != data.manifest.family {
            bail!(
                "dataset {} holds {}, but the config asks for {}",
                path.display(),
                data.manifest.family.name,
                family.name()
            );
        }
        family
    } else {
        kcqe::HamiltonianFamily::from_metadata(&data.manifest.family)?
    };
    Ok((family, data))
}

fn train(mut cfg: RunConfig) -> anyhow::Result<()> {
    let (family, data) = load_matching(&cfg)?;
    let train_cfg = cfg.train_config()?;
    let mlp_seed = cfg
        .mlp_seed
        .ok_or_else(|| anyhow!("missing `mlp_seed`; every seed must be given explicitly"))?;
    let layout = data.manifest.layout;
    let base = MlpConfig::new(family.physical_param_dim(), layout.flat_len(), mlp_seed);
    let mlp = MlpConfig {
        hidden_width: *cfg.hidden_width.get_or_insert(base.hidden_width),
        hidden_layers: *cfg.hidden_layers.get_or_insert(base.hidden_layers),
        residual: *cfg.residual.get_or_insert(base.residual),
        activation: *cfg.activation.get_or_insert(base.activation),
        ..base
    };
    cfg.epochs = Some(train_cfg.epochs);
    cfg.learning_rate = Some(train_cfg.learning_rate);
    cfg.batch_size = Some(train_cfg.batch_size);
    let (tr, va) = split_records(&mut cfg, &data)?;
    let out = cfg.out_dir();
    let model_path = cfg.model_path();
    cfg.model = Some(model_path.clone());
    cfg.echo(&out)?;

    let held_out: Vec<_> = va.iter().filter(|r| !r.is_flagged()).cloned().collect();
    let every = cfg.energy_every.unwrap_or(0);
    let mut monitor_fn = eval::energy_error_monitor(&family, &data.manifest, &held_out);
    let mut monitor = |epoch: usize, model: &surrogate::SurrogateModel| {
        if every > 0 && (epoch % every == 0 || epoch == 1) {
            monitor_fn(epoch, model)
        } else {
            None
        }
    };
    let train_samples = Samples::from_records(&tr);
    let val_samples = Samples::from_records(&va);
    let mut log = |epoch: usize, model: &surrogate::SurrogateModel| {
        let value = monitor(epoch, model);
        if let Some(v) = value {
            eprintln!("epoch {epoch} held-out energy error {v:.6e}");
        }
        value
    };
    let (mut model, report) = surrogate::train_with_monitor(
        &train_samples,
        &val_samples,
        data.manifest.family.clone(),
        layout,
        &mlp,
        &train_cfg,
        &mut log,
    )?;
    model.run_config = Some(cfg.as_json());
    surrogate::save_model(&model, &model_path)?;
    eval::write_loss_curve(&report, &out.join("loss_curve.csv"))?;
    if every > 0 {
        eval::write_energy_error_curve(&report, &out.join("energy_error_curve.csv"))?;
    }
    write_json(
        &out.join("train_report.json"),
        &json!({ "config": cfg.as_json(), "report": report }),
    )?;
    let best = report.best_epoch;
    println!(
        "trained {} epochs on {} samples; best epoch {best}; val loss {:.6e} -> {:.6e}",
        report.epochs_run(),
        train_samples.len(),
        report.val_loss.first().copied().unwrap_or(f64::NAN),
        report.val_loss.get(best.saturating_sub(1)).copied().unwrap_or(f64::NAN),
    );
    println!("model written to {}", model_path.display());
    if let Some(epoch) = report.diverged_at {
        return Err(Error::Divergence { epoch }.into());
    }
    Ok(())
}

fn evaluate(mut cfg: RunConfig) -> anyhow::Result<()> {
    let (family, data) = load_matching(&cfg)?;
    let model_path = cfg.model_path();
    let model = surrogate::load_model(&model_path).with_context(|| format!("loading {}", model_path.display()))?;
    if model.family != data.manifest.family || model.layout != data.manifest.layout {
        bail!(
            "model {} was trained for a different family or layout than the dataset",
            model_path.display()
        );
    }
    let which = cfg.records.get_or_insert_with(|| "validation".into()).clone();
    let records: Vec<_> = match which.as_str() {
        "validation" => split_records(&mut cfg, &data)?.1,
        "all" => data.records.clone(),
        other => bail!("unknown record selection `{other}` (expected validation or all)"),
    };
    let records: Vec<_> = records.into_iter().filter(|r| !r.is_flagged()).collect();
    let out = cfg.out_dir();
    cfg.model = Some(model_path);
    cfg.echo(&out)?;
    let metrics = eval::evaluate(&model, &family, &data.manifest, &records)?;
    eval::write_eval_rows(&metrics, &out.join("eval_rows.csv"))?;
    write_json(
        &out.join("metrics.json"),
        &json!({
            "config": cfg.as_json(),
            "count": metrics.count,
            "param_mse": metrics.param_mse,
            "energy_mae": metrics.energy_mae,
            "energy_relative_mean": metrics.energy_relative_mean,
            "observable_mae": metrics.observable_mae,
        }),
    )?;
    println!("records               {}", metrics.count);
    println!("param_mse             {:.6e}", metrics.param_mse);
    println!("energy_mae            {:.6e}", metrics.energy_mae);
    println!("energy_relative_mean  {:.6e}", metrics.energy_relative_mean);
    if let Some(o) = metrics.observable_mae {
        println!("observable_mae        {o:.6e}");
    }
    Ok(())
}

fn sweep(mut cfg: RunConfig) -> anyhow::Result<()> {
    let family = cfg.family()?;
    let k = cfg.k()?;
    let mode = cfg.mode()?;
    let solver = cfg.solver()?;
    let lo = *cfg.grid_lower.get_or_insert(0.0);
    let hi = *cfg.grid_upper.get_or_insert(20.0);
    let count = *cfg.grid_count.get_or_insert(41);
    if count == 0 || !(lo <= hi) {
        bail!("sweep grid needs count >= 1 and lower <= upper");
    }
    cfg.solver = Some(solver.clone());
    let out = cfg.out_dir();
    cfg.echo(&out)?;
    let grid = eval::linear_grid(lo, hi, count);
    let run = || eval::sweep(&family, &grid, k, mode, &solver);
    let points = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()?
            .install(run)?,
        None => run()?,
    };
    eval::write_energy_sweep(&points, &out.join("sweep_energies.csv"))?;
    eval::write_percent_errors(&points, &out.join("sweep_percent_errors.csv"))?;
    let mean_pct: Vec<f64> = (0..k)
        .map(|i| points.iter().map(|p| p.percent_errors()[i]).sum::<f64>() / points.len() as f64)
        .collect();
    write_json(
        &out.join("sweep.json"),
        &json!({ "config": cfg.as_json(), "family": family.name(), "mean_percent_error": mean_pct }),
    )?;
    for (i, m) in mean_pct.iter().enumerate() {
        println!("iteration {} mean percent error {m:.6e}", i + 1);
    }
    Ok(())
}
