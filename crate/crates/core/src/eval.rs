//! Feeds ansatz parameters back through the physics: reconstructed states,
//! energy and observable errors against exact diagonalization, and CSV
//! curve exports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cqe::{self, AnsatzLayer, AnsatzLayout, Mode, SolverOptions};
use crate::dataset::{DatasetManifest, SampleRecord};
use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianFamily;
use crate::numerics::StateVector;
use crate::oracle;
use crate::surrogate::{SurrogateModel, TrainReport};

/// Trial state followed by every layer, normalized and phase-canonicalized.
pub fn reconstruct(family: &HamiltonianFamily, physical_params: &[f64], layers: &[AnsatzLayer]) -> Result<StateVector> {
    if let Some(layer) = layers.iter().find(|l| l.term_count() != family.term_count()) {
        return Err(Error::DimensionMismatch {
            expected: family.term_count(),
            found: layer.term_count(),
        });
    }
    cqe::prepare_state(family, physical_params, layers)
}

/// Anything that turns a record's physical parameters into a flat ansatz.
pub trait AnsatzPredictor {
    fn predict_flat(&self, record: &SampleRecord) -> Result<Vec<f64>>;
}

impl AnsatzPredictor for SurrogateModel {
    fn predict_flat(&self, record: &SampleRecord) -> Result<Vec<f64>> {
        SurrogateModel::predict_flat(self, &record.physical_params)
    }
}

/// Returns the stored solver output, which makes the evaluation measure the
/// dataset itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct StoredTargets;

impl AnsatzPredictor for StoredTargets {
    fn predict_flat(&self, record: &SampleRecord) -> Result<Vec<f64>> {
        Ok(record.flat_ansatz.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub index: u64,
    pub physical_params: Vec<f64>,
    pub param_mse: f64,
    pub energy: f64,
    pub e_exact: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    /// Bond average of `|<c†_{m+1} c_m>|`, lattice families only.
    pub observable: Option<f64>,
    /// The same quantity in the exact ground state closest to the
    /// reconstructed one.
    pub observable_exact: Option<f64>,
    pub ground_fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub count: usize,
    pub param_mse: f64,
    pub energy_mae: f64,
    pub energy_relative_mean: f64,
    pub observable_mae: Option<f64>,
    pub rows: Vec<EvalRow>,
}

fn evaluate_record(
    family: &HamiltonianFamily,
    layout: &AnsatzLayout,
    predictor: &(dyn AnsatzPredictor + Sync),
    record: &SampleRecord,
) -> Result<EvalRow> {
    let flat = predictor.predict_flat(record)?;
    if flat.len() != layout.flat_len() || record.flat_ansatz.len() != layout.flat_len() {
        return Err(Error::LayoutMismatch(format!(
            "prediction has {} entries, layout needs {}",
            flat.len(),
            layout.flat_len()
        )));
    }
    let param_mse = flat
        .iter()
        .zip(&record.flat_ansatz)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / flat.len().max(1) as f64;
    let params = &record.physical_params;
    let state = reconstruct(family, params, &layout.unflatten(&flat)?)?;
    let energy = cqe::energy(family, params, &state)?;
    let spectrum = oracle::exact_ground(family, params)?;
    let e_exact = spectrum.ground_energy();
    let abs_error = (energy - e_exact).abs();
    let (observable, observable_exact) = match family.sector() {
        Some(sector) => {
            let reference = spectrum.closest_ground_state(&state)?;
            (
                Some(sector.mean_bond_coherence(&state)?),
                Some(sector.mean_bond_coherence(&reference)?),
            )
        }
        None => (None, None),
    };
    Ok(EvalRow {
        index: record.index,
        physical_params: params.clone(),
        param_mse,
        energy,
        e_exact,
        abs_error,
        rel_error: abs_error / e_exact.abs().max(f64::MIN_POSITIVE),
        observable,
        observable_exact,
        ground_fidelity: spectrum.ground_fidelity(&state)?,
    })
}

/// Per-record errors of `predictor` and their means over `records`.
pub fn evaluate(
    predictor: &(dyn AnsatzPredictor + Sync),
    family: &HamiltonianFamily,
    manifest: &DatasetManifest,
    records: &[SampleRecord],
) -> Result<EvalMetrics> {
    if manifest.family != family.metadata() {
        return Err(Error::LayoutMismatch(format!(
            "records belong to {}, not {}",
            manifest.family.name,
            family.name()
        )));
    }
    let layout = manifest.layout;
    let rows = records
        .par_iter()
        .map(|r| evaluate_record(family, &layout, predictor, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(rows))
}

/// Means over `rows`; the sums run in index order so the result does not
/// depend on the order records were supplied in.
pub fn summarize(mut rows: Vec<EvalRow>) -> EvalMetrics {
    rows.sort_by_key(|r| r.index);
    let n = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let observable_mae = if rows.iter().all(|r| r.observable.is_some()) && !rows.is_empty() {
        Some(mean(&|r| {
            (r.observable.unwrap_or(0.0) - r.observable_exact.unwrap_or(0.0)).abs()
        }))
    } else {
        None
    };
    EvalMetrics {
        count: rows.len(),
        param_mse: mean(&|r| r.param_mse),
        energy_mae: mean(&|r| r.abs_error),
        energy_relative_mean: mean(&|r| r.rel_error),
        observable_mae,
        rows,
    }
}

/// Mean absolute energy error of `model` on `records`, for per-epoch
/// monitoring during training.
pub fn energy_error_monitor<'a>(
    family: &'a HamiltonianFamily,
    manifest: &'a DatasetManifest,
    records: &'a [SampleRecord],
) -> impl FnMut(usize, &SurrogateModel) -> Option<f64> + 'a {
    move |_, model| evaluate(model, family, manifest, records).ok().map(|m| m.energy_mae)
}

/// One point of an energy-versus-parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub physical_params: Vec<f64>,
    pub exact: f64,
    /// Energy after each solver iteration.
    pub iteration_energies: Vec<f64>,
}

impl SweepPoint {
    /// `100 |E_n - E_exact| / |E_exact|` for every iteration.
    pub fn percent_errors(&self) -> Vec<f64> {
        self.iteration_energies
            .iter()
            .map(|e| percent_error(*e, self.exact))
            .collect()
    }
}

pub fn percent_error(energy: f64, exact: f64) -> f64 {
    100.0 * (energy - exact).abs() / exact.abs()
}

/// `count` evenly spaced points from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Solves every point of `grid` (one-parameter families) with `k`
/// iterations.
pub fn sweep(
    family: &HamiltonianFamily,
    grid: &[f64],
    k: usize,
    mode: Mode,
    solver: &SolverOptions,
) -> Result<Vec<SweepPoint>> {
    if family.physical_param_dim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "sweeps need a one-parameter family, {} has {}",
            family.name(),
            family.physical_param_dim()
        )));
    }
    grid.par_iter()
        .map(|&u| {
            let params = vec![u];
            let exact = oracle::exact_ground(family, &params)?.ground_energy();
            let solution = cqe::solve_kcqe_with(family, &params, k, mode, solver)?;
            Ok(SweepPoint {
                physical_params: params,
                exact,
                iteration_energies: solution.per_iteration.iter().map(|r| r.energy).collect(),
            })
        })
        .collect()
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn optional(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// `epoch,train_loss,val_loss,val_param_mse`, one row per epoch.
pub fn write_loss_curve(report: &TrainReport, path: &Path) -> Result<()> {
    let rows = (0..report.epochs_run()).map(|i| {
        vec![
            (i + 1).to_string(),
            float(report.train_loss[i]),
            float(report.val_loss[i]),
            float(report.val_param_mse[i]),
        ]
    });
    write_csv(
        path,
        &strings(&["epoch", "train_loss", "val_loss", "val_param_mse"]),
        rows,
    )
}

/// `epoch,energy_error`; the field is empty for epochs without a value.
pub fn write_energy_error_curve(report: &TrainReport, path: &Path) -> Result<()> {
    let rows = report
        .monitor
        .iter()
        .enumerate()
        .map(|(i, v)| vec![(i + 1).to_string(), optional(*v)]);
    write_csv(path, &strings(&["epoch", "energy_error"]), rows)
}

fn iteration_columns(points: &[SweepPoint], prefix: &str) -> Vec<String> {
    let k = points.iter().map(|p| p.iteration_energies.len()).max().unwrap_or(0);
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}

/// `param,exact,iter1,...,iterK` energies.
pub fn write_energy_sweep(points: &[SweepPoint], path: &Path) -> Result<()> {
    let mut header = strings(&["param", "exact"]);
    header.extend(iteration_columns(points, "iter"));
    let rows = points.iter().map(|p| {
        let mut row = vec![float(p.physical_params[0]), float(p.exact)];
        row.extend(p.iteration_energies.iter().map(|e| float(*e)));
        row
    });
    write_csv(path, &header, rows)
}

/// `param,pct_error1,...,pct_errorK`.
pub fn write_percent_errors(points: &[SweepPoint], path: &Path) -> Result<()> {
    let mut header = strings(&["param"]);
    header.extend(iteration_columns(points, "pct_error"));
    let rows = points.iter().map(|p| {
        let mut row = vec![float(p.physical_params[0])];
        row.extend(p.percent_errors().into_iter().map(float));
        row
    });
    write_csv(path, &header, rows)
}

/// One row per evaluated record.
pub fn write_eval_rows(metrics: &EvalMetrics, path: &Path) -> Result<()> {
    let dim = metrics.rows.first().map_or(0, |r| r.physical_params.len());
    let mut header: Vec<String> = vec!["index".into()];
    header.extend((1..=dim).map(|i| format!("param{i}")));
    header.extend(strings(&[
        "param_mse",
        "energy",
        "e_exact",
        "abs_error",
        "rel_error",
        "observable",
        "observable_exact",
        "ground_fidelity",
    ]));
    let rows = metrics.rows.iter().map(|r| {
        let mut row = vec![r.index.to_string()];
        row.extend(r.physical_params.iter().map(|v| float(*v)));
        row.extend([
            float(r.param_mse),
            float(r.energy),
            float(r.e_exact),
            float(r.abs_error),
            float(r.rel_error),
            optional(r.observable),
            optional(r.observable_exact),
            float(r.ground_fidelity),
        ]);
        row
    });
    write_csv(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, GenerateOptions};
    use crate::hamiltonian::ParameterRegime;

    #[test]
    fn stored_targets_reproduce_the_dataset() {
        let f = HamiltonianFamily::hubbard(5, 2).unwrap();
        let d = generate(
            &f,
            &ParameterRegime::hubbard_repulsive(8),
            2,
            Mode::Hermitian,
            8,
            &GenerateOptions::default(),
        )
        .unwrap();
        let m = evaluate(&StoredTargets, &f, &d.manifest, &d.records).unwrap();
        assert_eq!(m.count, 8);
        assert_eq!(m.param_mse, 0.0);
        assert!(m.energy_relative_mean <= 1e-5);
        for (row, rec) in m.rows.iter().zip(&d.records) {
            assert!((row.energy - rec.e_cqe.unwrap()).abs() < 1e-9);
            assert!(row.energy >= row.e_exact - 1e-9);
        }
        assert!(m.observable_mae.unwrap() < 1e-2);

        let mut reversed = d.records.clone();
        reversed.reverse();
        let again = evaluate(&StoredTargets, &f, &d.manifest, &reversed).unwrap();
        assert_eq!(m, again);

        let other = HamiltonianFamily::hubbard(6, 2).unwrap();
        assert!(evaluate(&StoredTargets, &other, &d.manifest, &d.records).is_err());
    }

    #[test]
    fn no_layers_gives_the_trial_state() {
        let f = HamiltonianFamily::hubbard(6, 2).unwrap();
        let s = reconstruct(&f, &[3.0], &[]).unwrap();
        assert_eq!(s, cqe::trial_state(&f, &[3.0]).unwrap());
        let wrong = vec![AnsatzLayer::zeros(4)];
        assert!(reconstruct(&f, &[3.0], &wrong).is_err());
    }

    #[test]
    fn observable_is_exact_at_zero_interaction() {
        let f = HamiltonianFamily::hubbard(7, 2).unwrap();
        let state = reconstruct(&f, &[0.0], &[]).unwrap();
        let spectrum = oracle::exact_ground(&f, &[0.0]).unwrap();
        let sector = f.sector().unwrap();
        let reference = spectrum.closest_ground_state(&state).unwrap();
        let a = sector.mean_bond_coherence(&state).unwrap();
        let b = sector.mean_bond_coherence(&reference).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn grid_and_percent() {
        let g = linear_grid(0.0, 20.0, 41);
        assert_eq!(g.len(), 41);
        assert_eq!(g[40], 20.0);
        assert!((g[1] - 0.5).abs() < 1e-15);
        assert!(linear_grid(1.0, 2.0, 0).is_empty());
        assert!((percent_error(-0.99, -1.0) - 1.0).abs() < 1e-12);
    }
}
