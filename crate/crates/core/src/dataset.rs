//! Training data: sampled Hamiltonian parameters paired with solved ansatz
//! parameters and reference energies.
//!
//! A dataset file is JSON lines. The first line is the [`DatasetManifest`],
//! every following line one [`SampleRecord`] in index order. Floats are
//! written in scientific notation with 17 significant digits, so a
//! write/read cycle reproduces every double exactly.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cqe::{self, AnsatzLayout, Mode, SolverOptions};
use crate::error::{Error, Result};
use crate::hamiltonian::{FamilyMetadata, HamiltonianFamily, ParameterRegime};
use crate::numerics::LbfgsStatus;
use crate::oracle;

pub const FORMAT_NAME: &str = "kcqe-dataset";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.9;
pub const DEFAULT_SPLIT_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub format_version: u32,
    pub family: FamilyMetadata,
    pub regime: ParameterRegime,
    pub k: usize,
    pub mode: Mode,
    pub count: usize,
    pub seed: u64,
    /// How `flat_ansatz` splits into layers: layer-major, and within a
    /// layer the unitary block before the Hermitian block, each restricted
    /// to the mode's active parts.
    pub layout: AnsatzLayout,
    pub solver: SolverOptions,
    pub train_fraction: f64,
    pub split_seed: u64,
    /// The effective run configuration, when produced by the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: u64,
    pub physical_params: Vec<f64>,
    pub flat_ansatz: Vec<f64>,
    /// Energy after the last iteration; absent when the solve failed.
    pub e_cqe: Option<f64>,
    pub e_exact: f64,
    pub variance_final: Option<f64>,
    /// Energy after each iteration.
    pub iteration_energies: Vec<f64>,
    pub optimizer_flags: Vec<LbfgsStatus>,
    pub error: Option<String>,
}

impl SampleRecord {
    /// Failed solves and optimizer runs that neither converged nor stalled.
    pub fn is_flagged(&self) -> bool {
        self.error.is_some()
            || self.e_cqe.is_none()
            || self
                .optimizer_flags
                .iter()
                .any(|s| matches!(s, LbfgsStatus::MaxIterations | LbfgsStatus::LineSearchFailed))
    }

    pub fn absolute_error(&self) -> Option<f64> {
        self.e_cqe.map(|e| (e - self.e_exact).abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<SampleRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerateOptions {
    pub solver: SolverOptions,
    /// Worker threads; `None` uses the global rayon pool. Output never
    /// depends on this.
    pub workers: Option<usize>,
    pub run_config: Option<serde_json::Value>,
}

fn solve_sample(
    family: &HamiltonianFamily,
    regime: &ParameterRegime,
    layout: &AnsatzLayout,
    index: u64,
    solver: &SolverOptions,
) -> Result<SampleRecord> {
    let params = regime.sample_at(index);
    let e_exact = oracle::exact_ground(family, &params)?.ground_energy();
    let record = match cqe::solve_kcqe_with(family, &params, layout.layers, layout.mode, solver) {
        Ok(solution) => SampleRecord {
            index,
            flat_ansatz: layout.flatten(&solution.layers)?,
            e_cqe: Some(solution.energy()),
            e_exact,
            variance_final: Some(solution.variance()),
            iteration_energies: solution.per_iteration.iter().map(|r| r.energy).collect(),
            optimizer_flags: solution.per_iteration.iter().map(|r| r.status).collect(),
            error: None,
            physical_params: params,
        },
        // degenerate or non-finite solves become flagged rows
        Err(e @ (Error::DegenerateAnnihilation { .. } | Error::NonFiniteObjective { .. })) => SampleRecord {
            index,
            flat_ansatz: vec![0.0; layout.flat_len()],
            e_cqe: None,
            e_exact,
            variance_final: None,
            iteration_energies: Vec::new(),
            optimizer_flags: Vec::new(),
            error: Some(e.to_string()),
            physical_params: params,
        },
        Err(e) => return Err(e),
    };
    Ok(record)
}

/// Solves `count` samples drawn from `regime`. Sample `i` depends only on
/// the regime seed and `i`.
pub fn generate(
    family: &HamiltonianFamily,
    regime: &ParameterRegime,
    k: usize,
    mode: Mode,
    count: usize,
    opts: &GenerateOptions,
) -> Result<Dataset> {
    regime.validate()?;
    if regime.dim() != family.physical_param_dim() {
        return Err(Error::DimensionMismatch {
            expected: family.physical_param_dim(),
            found: regime.dim(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    opts.solver.lbfgs.validate()?;
    let layout = AnsatzLayout::new(k, mode, family.term_count());
    let run = || -> Result<Vec<SampleRecord>> {
        (0..count as u64)
            .into_par_iter()
            .map(|i| solve_sample(family, regime, &layout, i, &opts.solver))
            .collect()
    };
    let records = match opts.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    let manifest = DatasetManifest {
        format: FORMAT_NAME.into(),
        format_version: FORMAT_VERSION,
        family: family.metadata(),
        regime: regime.clone(),
        k,
        mode,
        count,
        seed: regime.seed,
        layout,
        solver: opts.solver.clone(),
        train_fraction: DEFAULT_TRAIN_FRACTION,
        split_seed: DEFAULT_SPLIT_SEED,
        run_config: opts.run_config.clone(),
    };
    Ok(Dataset { manifest, records })
}

/// Writes every float as `d.dddddddddddddddde±x`.
struct ExactFloats;

impl serde_json::ser::Formatter for ExactFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

/// One JSON line without the trailing newline.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_to<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    writeln!(out, "{}", to_json_line(&dataset.manifest)?)?;
    for record in &dataset.records {
        writeln!(out, "{}", to_json_line(record)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    write_to(dataset, BufWriter::new(File::create(path)?))
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a dataset file, optionally dropping flagged rows.
pub fn load(path: &Path, filter_flagged: bool) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let first = lines.next().ok_or_else(|| malformed(path, 1, "empty file"))??;
    let header: serde_json::Value = serde_json::from_str(&first).map_err(|e| malformed(path, 1, e.to_string()))?;
    if header.get("format").and_then(|v| v.as_str()) != Some(FORMAT_NAME) {
        return Err(malformed(path, 1, "not a dataset manifest"));
    }
    let version = header.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let manifest: DatasetManifest = serde_json::from_value(header).map_err(|e| malformed(path, 1, e.to_string()))?;
    let flat_len = manifest.layout.flat_len();
    let param_dim = manifest.family.physical_param_dim;

    let mut records = Vec::with_capacity(manifest.count);
    let mut seen = 0;
    for (i, line) in lines.enumerate() {
        let number = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| malformed(path, number, e.to_string()))?;
        if record.flat_ansatz.len() != flat_len {
            return Err(malformed(
                path,
                number,
                format!(
                    "flat_ansatz has {} entries, layout needs {flat_len}",
                    record.flat_ansatz.len()
                ),
            ));
        }
        if record.physical_params.len() != param_dim {
            return Err(malformed(
                path,
                number,
                format!(
                    "expected {param_dim} physical parameters, found {}",
                    record.physical_params.len()
                ),
            ));
        }
        seen += 1;
        if !(filter_flagged && record.is_flagged()) {
            records.push(record);
        }
    }
    if seen != manifest.count {
        return Err(malformed(
            path,
            seen + 2,
            format!("manifest announces {} records, file holds {seen}", manifest.count),
        ));
    }
    Ok(Dataset { manifest, records })
}

/// Deterministic shuffled split; the first part holds `round(fraction * n)`
/// records.
pub fn split<T: Clone>(records: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (fraction * records.len() as f64).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect();
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}

/// Rebuilds the state from `flat_ansatz` and returns its energy, which must
/// match `e_cqe`.
pub fn reconstructed_energy(family: &HamiltonianFamily, layout: &AnsatzLayout, record: &SampleRecord) -> Result<f64> {
    let layers = layout.unflatten(&record.flat_ansatz)?;
    let state = cqe::prepare_state(family, &record.physical_params, &layers)?;
    cqe::energy(family, &record.physical_params, &state)
}
