use std::io::Write;

use kcqe::cqe::AnsatzLayout;
use kcqe::dataset::{self, Dataset, GenerateOptions, FORMAT_VERSION};
use kcqe::{Error, HamiltonianFamily, Mode, ParameterRegime};

fn small_hubbard(count: usize, seed: u64) -> (HamiltonianFamily, Dataset) {
    let family = HamiltonianFamily::hubbard(4, 2).unwrap();
    let regime = ParameterRegime::hubbard_repulsive(seed);
    let data = dataset::generate(&family, &regime, 2, Mode::Hermitian, count, &GenerateOptions::default()).unwrap();
    (family, data)
}

fn file_bytes(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    dataset::write_to(data, &mut out).unwrap();
    out
}

#[test]
fn save_then_load_round_trips() {
    let (_, data) = small_hubbard(6, 17);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    dataset::save(&data, &path).unwrap();
    let back = dataset::load(&path, false).unwrap();
    assert_eq!(back.manifest, data.manifest);
    assert_eq!(back.records, data.records);
    // and re-saving gives the same bytes
    assert_eq!(file_bytes(&back), std::fs::read(&path).unwrap());
}

#[test]
fn same_seed_gives_identical_bytes() {
    let (_, a) = small_hubbard(5, 3);
    let (_, b) = small_hubbard(5, 3);
    let (_, c) = small_hubbard(5, 4);
    assert_eq!(file_bytes(&a), file_bytes(&b));
    assert_ne!(file_bytes(&a), file_bytes(&c));
}

#[test]
fn pauli_records_hold_sixteen_parameters() {
    let family = HamiltonianFamily::pauli(2).unwrap();
    let regime = ParameterRegime::pauli_weak(2, 9);
    let data = dataset::generate(&family, &regime, 1, Mode::Unitary, 3, &GenerateOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    dataset::save(&data, &path).unwrap();
    let back = dataset::load(&path, true).unwrap();
    assert_eq!(back.manifest.layout.flat_len(), 16);
    assert!(back
        .records
        .iter()
        .all(|r| r.flat_ansatz.len() == 16 && r.physical_params.len() == 16));
}

#[test]
fn records_reconstruct_their_energy() {
    let (family, data) = small_hubbard(8, 21);
    for record in &data.records {
        let e = dataset::reconstructed_energy(&family, &data.manifest.layout, record).unwrap();
        assert!((e - record.e_cqe.unwrap()).abs() <= 1e-9, "record {}", record.index);
        assert!(e >= record.e_exact - 1e-9);
    }
}

#[test]
fn parameters_stay_inside_regime_bounds() {
    let (_, data) = small_hubbard(20, 8);
    for r in &data.records {
        assert!(r.physical_params[0] >= 0.0 && r.physical_params[0] <= 20.0);
    }
}

#[test]
fn filter_drops_exactly_the_flagged_rows() {
    let (_, mut data) = small_hubbard(4, 2);
    data.records[1].e_cqe = None;
    data.records[1].error = Some("synthetic".into());
    data.records[3].optimizer_flags[0] = kcqe::numerics::LbfgsStatus::MaxIterations;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.jsonl");
    dataset::save(&data, &path).unwrap();
    let all = dataset::load(&path, false).unwrap();
    assert_eq!(all.records.len(), 4);
    let kept = dataset::load(&path, true).unwrap();
    let indices: Vec<u64> = kept.records.iter().map(|r| r.index).collect();
    assert_eq!(indices, vec![data.records[0].index, data.records[2].index]);
}

fn rewrite(path: &std::path::Path, edit: impl Fn(usize, String) -> Option<String>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut out = std::fs::File::create(path).unwrap();
    for (i, line) in text.lines().enumerate() {
        if let Some(l) = edit(i + 1, line.to_string()) {
            writeln!(out, "{l}").unwrap();
        }
    }
}

#[test]
fn version_mismatch_is_rejected() {
    let (_, data) = small_hubbard(2, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.jsonl");
    dataset::save(&data, &path).unwrap();
    let wrong = format!("\"format_version\":{}", FORMAT_VERSION + 1);
    rewrite(&path, |n, l| {
        Some(if n == 1 {
            l.replace(&format!("\"format_version\":{FORMAT_VERSION}"), &wrong)
        } else {
            l
        })
    });
    match dataset::load(&path, false) {
        Err(Error::VersionMismatch { found, .. }) => assert_eq!(found, FORMAT_VERSION + 1),
        other => panic!("expected a version error, got {other:?}"),
    }
}

#[test]
fn malformed_lines_report_their_number() {
    let (_, data) = small_hubbard(3, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    dataset::save(&data, &path).unwrap();
    rewrite(&path, |n, l| {
        Some(if n == 3 { l[..l.len() / 2].to_string() } else { l })
    });
    match dataset::load(&path, false) {
        Err(Error::Malformed { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a malformed-line error, got {other:?}"),
    }

    dataset::save(&data, &path).unwrap();
    rewrite(&path, |n, l| if n == 4 { None } else { Some(l) });
    assert!(matches!(dataset::load(&path, false), Err(Error::Malformed { .. })));
}

#[test]
fn wrong_ansatz_length_is_rejected() {
    let (_, mut data) = small_hubbard(2, 1);
    data.records[0].flat_ansatz.pop();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.jsonl");
    dataset::save(&data, &path).unwrap();
    match dataset::load(&path, false) {
        Err(Error::Malformed { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a malformed-line error, got {other:?}"),
    }
}

#[test]
fn manifest_only_file_for_zero_count() {
    let (_, data) = small_hubbard(0, 1);
    let bytes = file_bytes(&data);
    assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("z.jsonl");
    std::fs::write(&path, &bytes).unwrap();
    assert!(dataset::load(&path, false).unwrap().records.is_empty());
}

#[test]
fn hcqe_dataset_is_accurate_at_nine_sites() {
    let family = HamiltonianFamily::hubbard(9, 2).unwrap();
    let regime = ParameterRegime::hubbard_repulsive(2026);
    let data = dataset::generate(&family, &regime, 2, Mode::Hermitian, 100, &GenerateOptions::default()).unwrap();
    let mean_rel = data
        .records
        .iter()
        .map(|r| (r.e_cqe.unwrap() - r.e_exact).abs() / r.e_exact.abs())
        .sum::<f64>()
        / data.records.len() as f64;
    assert!(mean_rel <= 1e-5, "mean relative error {mean_rel:e}");
    assert_eq!(
        data.manifest.layout,
        AnsatzLayout::new(2, Mode::Hermitian, family.term_count())
    );
}
