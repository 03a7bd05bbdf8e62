use kcqe::cqe::{self, AnsatzLayer, AnsatzLayout};
use kcqe::hilbert::{pauli_string, FermionSector};
use kcqe::numerics::{exp_hermitian_action, fd_gradient, hermitian_eig, ComplexMatrix, StateVector};
use kcqe::surrogate::Standardizer;
use kcqe::{dataset, oracle, HamiltonianFamily, Mode};
use num_complex::Complex64;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn hermitian(dim: usize) -> impl Strategy<Value = ComplexMatrix> {
    prop::collection::vec(-2.0..2.0f64, 2 * dim * dim).prop_map(move |raw| {
        let m = ComplexMatrix::from_fn(dim, dim, |i, j| c(raw[2 * (i * dim + j)], raw[2 * (i * dim + j) + 1]));
        (&m + m.adjoint()) * c(0.5, 0.0)
    })
}

fn state(dim: usize) -> impl Strategy<Value = StateVector> {
    prop::collection::vec(-1.0..1.0f64, 2 * dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
        .prop_map(move |raw| StateVector::from_fn(dim, |i, _| c(raw[2 * i], raw[2 * i + 1])))
}

fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unitary_exponential_preserves_norm((m, v) in (1usize..7).prop_flat_map(|d| (hermitian(d), state(d)))) {
        let w = exp_hermitian_action(&m, c(0.0, 1.0), &v).unwrap();
        prop_assert!((w.norm() - v.norm()).abs() <= 1e-10);
    }

    #[test]
    fn exponential_group_property((m, v, s) in (1usize..6).prop_flat_map(|d| (hermitian(d), state(d), -1.0..1.0f64))) {
        let once = exp_hermitian_action(&m, c(s, 0.0), &v).unwrap();
        let twice = exp_hermitian_action(&m, c(s, 0.0), &once).unwrap();
        let direct = exp_hermitian_action(&m, c(2.0 * s, 0.0), &v).unwrap();
        prop_assert!((twice - &direct).norm() <= 1e-10 * direct.norm().max(1.0));
    }

    #[test]
    fn eigendecomposition_contracts(m in (1usize..8).prop_flat_map(hermitian)) {
        let eig = hermitian_eig(&m).unwrap();
        let dim = m.nrows();
        let scale = max_abs(&m).max(f64::MIN_POSITIVE);
        prop_assert!(max_abs(&(eig.reconstruct() - &m)) <= 1e-10 * scale.max(1.0));
        let v = &eig.eigenvectors;
        prop_assert!(max_abs(&(v.adjoint() * v - ComplexMatrix::identity(dim, dim))) <= 1e-10);
        let trace: f64 = (0..dim).map(|i| m[(i, i)].re).sum();
        prop_assert!((eig.eigenvalues.sum() - trace).abs() <= 1e-10 * dim as f64 * scale.max(1.0));
        prop_assert!(eig.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn fd_gradient_of_quadratic_form(raw in prop::collection::vec(-1.0..1.0f64, 25), x in prop::collection::vec(-2.0..2.0f64, 5)) {
        let q = nalgebra::DMatrix::from_fn(5, 5, |i, j| raw[i * 5 + j] + raw[j * 5 + i]);
        let f = |y: &[f64]| {
            let y = nalgebra::DVector::from_column_slice(y);
            y.dot(&(&q * &y))
        };
        let step = 1e-6;
        let g = fd_gradient(f, &x, step).unwrap();
        let exact = &q * nalgebra::DVector::from_column_slice(&x) * 2.0;
        for i in 0..5 {
            prop_assert!((g[i] - exact[i]).abs() <= 10.0 * step);
        }
    }

    #[test]
    fn number_operator_counts_hops((l, n, j, k) in (2usize..6).prop_flat_map(|l| (Just(l), 1..l, 1..=l, 1..=l))) {
        prop_assume!(j != k);
        let sector = FermionSector::new(l, n).unwrap();
        let hop = sector.hop_operator(j, k).unwrap();
        let nj = sector.number_operator(j).unwrap();
        // [n_j, c†_j c_k] = c†_j c_k
        prop_assert_eq!(&nj * &hop - &hop * &nj, hop.clone());
        for m in 1..=l {
            let t = sector.hopping_term(m).unwrap();
            prop_assert_eq!(t.adjoint(), t);
        }
        let total: ComplexMatrix = (1..=l).map(|m| sector.number_operator(m).unwrap()).fold(
            ComplexMatrix::zeros(sector.dimension(), sector.dimension()),
            |acc, m| acc + m,
        );
        prop_assert_eq!(total, ComplexMatrix::identity(sector.dimension(), sector.dimension()) * c(n as f64, 0.0));
    }

    #[test]
    fn assemble_is_linear(a in prop::collection::vec(-3.0..3.0f64, 16), b in prop::collection::vec(-3.0..3.0f64, 16)) {
        let family = HamiltonianFamily::pauli(2).unwrap();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs = family.assemble(&sum).unwrap();
        let rhs = family.assemble(&a).unwrap() + family.assemble(&b).unwrap();
        prop_assert!(max_abs(&(lhs - rhs)) <= 1e-12);
    }

    #[test]
    fn interaction_enters_through_density_terms((l, u) in (3usize..7, 0.0..20.0f64)) {
        let family = HamiltonianFamily::hubbard(l, 2).unwrap();
        let sector = FermionSector::new(l, 2).unwrap();
        let diff = family.assemble(&[u]).unwrap() - family.assemble(&[0.0]).unwrap();
        let dd = (1..=l).map(|m| sector.density_density_term(m).unwrap()).fold(
            ComplexMatrix::zeros(sector.dimension(), sector.dimension()),
            |acc, m| acc + m,
        ) * c(u, 0.0);
        prop_assert_eq!(diff, dd);
    }

    #[test]
    fn oracle_ground_state_is_consistent(f in prop::collection::vec(-3.8..3.8f64, 16)) {
        let family = HamiltonianFamily::pauli(2).unwrap();
        let h = family.assemble(&f).unwrap();
        let spectrum = oracle::exact_ground(&family, &f).unwrap();
        let top = spectrum.eigenvalues.iter().map(|e| e.abs()).fold(0.0, f64::max);
        let e = kcqe::numerics::expectation(&h, &spectrum.ground_state);
        prop_assert!((e - spectrum.ground_energy()).abs() <= 1e-10 * top.max(1.0));
        prop_assert_eq!(spectrum.eigenvalues.len(), family.dimension());
        let trace: f64 = (0..h.nrows()).map(|i| h[(i, i)].re).sum();
        prop_assert!((spectrum.eigenvalues.sum() - trace).abs() <= 1e-10 * top.max(1.0) * h.nrows() as f64);
    }

    #[test]
    fn random_layers_stay_normalized_and_variational(
        (f, a, b) in (prop::collection::vec(-0.5..0.5f64, 16), prop::collection::vec(-2.0..2.0f64, 16), prop::collection::vec(-2.0..2.0f64, 16))
    ) {
        let family = HamiltonianFamily::pauli(2).unwrap();
        let layer = AnsatzLayer { a_coeffs: a, b_coeffs: b };
        let trial = cqe::trial_state(&family, &f).unwrap();
        let out = cqe::apply_layer(&family, &layer, &trial).unwrap();
        prop_assert!((out.norm() - 1.0).abs() <= 1e-10);
        let e0 = oracle::exact_ground(&family, &f).unwrap().ground_energy();
        prop_assert!(cqe::energy(&family, &f, &out).unwrap() >= e0 - 1e-9);
    }

    #[test]
    fn cse_residual_contracts_to_variance((f, v) in (prop::collection::vec(-2.0..2.0f64, 16), state(4))) {
        let family = HamiltonianFamily::pauli(2).unwrap();
        let v = &v / c(v.norm(), 0.0);
        let r = cqe::cse_residual(&family, &f, &v).unwrap();
        let contracted: f64 = f.iter().zip(&r).map(|(x, y)| x * y).sum();
        let var = cqe::variance(&family, &f, &v).unwrap();
        prop_assert!((contracted - var).abs() <= 1e-10 * var.abs().max(1.0));
    }

    #[test]
    fn layout_round_trips(layers in 1usize..4, terms in 1usize..10, seed in any::<u64>(), mode_ix in 0usize..3) {
        let mode = [Mode::Full, Mode::Unitary, Mode::Hermitian][mode_ix];
        let layout = AnsatzLayout::new(layers, mode, terms);
        let flat: Vec<f64> = (0..layout.flat_len()).map(|i| ((seed as f64) * 1e-19 + i as f64).sin()).collect();
        let back = layout.unflatten(&flat).unwrap();
        prop_assert_eq!(back.len(), layers);
        for layer in &back {
            prop_assert_eq!(layer.a_coeffs.len(), terms);
            prop_assert_eq!(layer.b_coeffs.len(), terms);
            if !mode.uses_unitary() { prop_assert!(layer.a_coeffs.iter().all(|&x| x == 0.0)); }
            if !mode.uses_hermitian() { prop_assert!(layer.b_coeffs.iter().all(|&x| x == 0.0)); }
        }
        prop_assert_eq!(layout.flatten(&back).unwrap(), flat);
    }

    #[test]
    fn split_partitions_the_records(n in 0usize..300, fraction in 0.05..0.95f64, seed in any::<u64>()) {
        let records: Vec<usize> = (0..n).collect();
        let (a, b) = dataset::split(&records, fraction, seed).unwrap();
        prop_assert_eq!(a.len(), (fraction * n as f64).round() as usize);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, records.clone());
        prop_assert_eq!(dataset::split(&records, fraction, seed).unwrap(), (a, b));
    }

    #[test]
    fn standardizer_round_trips(rows in prop::collection::vec(prop::collection::vec(-1e3..1e3f64, 3), 2..20)) {
        let s = Standardizer::fit(&rows, 3);
        for r in &rows {
            let back = s.invert(&s.apply(r));
            for (x, y) in back.iter().zip(r) {
                prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solver_respects_mode_and_bound(f in prop::collection::vec(-0.2..0.2f64, 16), mode_ix in 0usize..3) {
        let mode = [Mode::Full, Mode::Unitary, Mode::Hermitian][mode_ix];
        let family = HamiltonianFamily::pauli(2).unwrap();
        let a = cqe::solve_kcqe(&family, &f, 2, mode).unwrap();
        let b = cqe::solve_kcqe(&family, &f, 2, mode).unwrap();
        prop_assert_eq!(&a.layers, &b.layers);
        let e0 = oracle::exact_ground(&family, &f).unwrap().ground_energy();
        prop_assert!(a.energy() >= e0 - 1e-9);
        for layer in &a.layers {
            prop_assert_eq!(layer.a_coeffs.len(), 16);
            if mode == Mode::Hermitian { prop_assert!(layer.a_coeffs.iter().all(|&x| x == 0.0)); }
            if mode == Mode::Unitary { prop_assert!(layer.b_coeffs.iter().all(|&x| x == 0.0)); }
        }
    }
}

#[test]
fn pauli_strings_are_involutions() {
    for r in 1..=3u8 {
        for len in 1..=3 {
            let p = pauli_string(&vec![r; len]).unwrap();
            let dim = p.nrows();
            assert!(max_abs(&(&p * &p - ComplexMatrix::identity(dim, dim))) <= 1e-12);
        }
    }
}

#[test]
fn free_ring_single_particle_dispersion() {
    for l in 3..=9usize {
        let sector = FermionSector::new(l, 1).unwrap();
        let mut h = ComplexMatrix::zeros(l, l);
        for m in 1..=l {
            h -= sector.hopping_term(m).unwrap();
        }
        let got = hermitian_eig(&h).unwrap().eigenvalues;
        let mut want: Vec<f64> = (0..l)
            .map(|k| -2.0 * (2.0 * std::f64::consts::PI * k as f64 / l as f64).cos())
            .collect();
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-10, "L={l}: {g} vs {w}");
        }
    }
}
