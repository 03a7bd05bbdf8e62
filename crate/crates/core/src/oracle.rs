//! Brute-force exact diagonalization, the reference for every energy, state
//! and gap reported elsewhere.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianFamily;
use num_complex::Complex64;

use crate::numerics::{canonicalize_phase, hermitian_eig, StateVector};

pub const DEFAULT_DIMENSION_CAP: usize = 4096;

/// Levels closer than this, relative to `max(1, max|E|)`, count as degenerate.
pub const DEGENERACY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SpectrumResult {
    /// Full spectrum, ascending.
    pub eigenvalues: DVector<f64>,
    /// Ground state with its largest amplitude made real and positive.
    pub ground_state: StateVector,
    /// `E1 - E0`, zero for a one-dimensional space.
    pub gap: f64,
    /// Number of eigenvalues within `DEGENERACY_TOLERANCE` of `E0`.
    pub degeneracy: usize,
    /// Distance from `E0` to the first level outside the ground multiplet,
    /// zero when the whole spectrum is degenerate.
    pub multiplet_gap: f64,
    /// Orthonormal basis of the ground multiplet; its first vector is
    /// `ground_state`.
    pub ground_space: Vec<StateVector>,
}

impl SpectrumResult {
    pub fn ground_energy(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Orthogonal projection of `state` onto the ground multiplet.
    pub fn project_to_ground(&self, state: &StateVector) -> Result<StateVector> {
        let dim = self.ground_state.len();
        if state.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: state.len(),
            });
        }
        let mut out = StateVector::zeros(dim);
        for v in &self.ground_space {
            out += v * v.dotc(state);
        }
        Ok(out)
    }

    /// Weight of `state` inside the ground multiplet, `|P0 ψ|^2 / |ψ|^2`.
    /// Equals [`fidelity`] with `ground_state` when the ground state is
    /// unique.
    pub fn ground_fidelity(&self, state: &StateVector) -> Result<f64> {
        Ok(self.project_to_ground(state)?.norm_squared() / state.norm_squared())
    }

    /// The normalized ground state closest to `state`, or `ground_state`
    /// when `state` has no weight in the multiplet.
    pub fn closest_ground_state(&self, state: &StateVector) -> Result<StateVector> {
        let p = self.project_to_ground(state)?;
        let n = p.norm();
        if n <= 1e-12 * state.norm() || n == 0.0 {
            return Ok(self.ground_state.clone());
        }
        let mut v = p / Complex64::new(n, 0.0);
        canonicalize_phase(&mut v);
        Ok(v)
    }
}

pub fn exact_ground(family: &HamiltonianFamily, physical_params: &[f64]) -> Result<SpectrumResult> {
    exact_ground_capped(family, physical_params, DEFAULT_DIMENSION_CAP)
}

pub fn exact_ground_capped(family: &HamiltonianFamily, physical_params: &[f64], cap: usize) -> Result<SpectrumResult> {
    let dim = family.dimension();
    if dim > cap {
        return Err(Error::DimensionCap { dim, cap });
    }
    let h = family.assemble(physical_params)?;
    let eig = hermitian_eig(&h)?;
    let gap = if dim > 1 {
        (eig.eigenvalues[1] - eig.eigenvalues[0]).max(0.0)
    } else {
        0.0
    };
    let values = &eig.eigenvalues;
    let scale = values.iter().fold(1.0_f64, |m, e| m.max(e.abs()));
    let degeneracy = values
        .iter()
        .take_while(|&&e| e - values[0] <= DEGENERACY_TOLERANCE * scale)
        .count();
    let multiplet_gap = if degeneracy < dim {
        values[degeneracy] - values[0]
    } else {
        0.0
    };
    Ok(SpectrumResult {
        ground_space: (0..degeneracy.max(1)).map(|i| eig.eigenvector(i)).collect(),
        ground_state: eig.eigenvector(0),
        eigenvalues: eig.eigenvalues,
        gap,
        degeneracy,
        multiplet_gap,
    })
}

/// `|<a|b>|^2`.
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.dotc(b).norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::expectation;

    #[test]
    fn zz_degenerate_ground() {
        let f = HamiltonianFamily::pauli(2).unwrap();
        let mut p = vec![0.0; 16];
        p[15] = 1.0;
        let s = exact_ground(&f, &p).unwrap();
        assert!((s.ground_energy() + 1.0).abs() < 1e-14);
        assert!(s.gap.abs() < 1e-14);
        assert_eq!(s.degeneracy, 2);
        assert!((s.multiplet_gap - 2.0).abs() < 1e-14);
        assert_eq!(s.eigenvalues.len(), 4);
    }

    #[test]
    fn ground_state_is_self_consistent() {
        let f = HamiltonianFamily::hubbard(6, 2).unwrap();
        for u in [0.0, 1.5, 12.0] {
            let s = exact_ground(&f, &[u]).unwrap();
            let h = f.assemble(&[u]).unwrap();
            let scale = s.eigenvalues.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
            assert!((expectation(&h, &s.ground_state) - s.ground_energy()).abs() <= 1e-10 * scale);
            let trace: f64 = (0..h.nrows()).map(|i| h[(i, i)].re).sum();
            assert!((s.eigenvalues.sum() - trace).abs() < 1e-10 * h.nrows() as f64 * scale.max(1.0));
        }
    }

    #[test]
    fn ring_ground_pair_is_degenerate() {
        // two fermions on a ring: total momentum +q and -q give the same energy
        for l in [5, 8, 9] {
            let f = HamiltonianFamily::hubbard(l, 2).unwrap();
            for u in [0.0, 1.0, 7.5] {
                let s = exact_ground(&f, &[u]).unwrap();
                assert_eq!(s.degeneracy, 2, "L={l} U={u}");
                assert!(s.gap < 1e-10);
                assert!(s.multiplet_gap > 1e-3);
            }
        }
        // free reference: occupy k = 0 and one of k = ±1
        let f = HamiltonianFamily::hubbard(5, 2).unwrap();
        let s = exact_ground(&f, &[0.0]).unwrap();
        let e = -2.0 - 2.0 * (2.0 * std::f64::consts::PI / 5.0).cos();
        assert!((s.ground_energy() - e).abs() < 1e-12);
    }

    #[test]
    fn projection_onto_degenerate_ground_space() {
        let f = HamiltonianFamily::hubbard(5, 2).unwrap();
        let s = exact_ground(&f, &[6.0]).unwrap();
        let h = f.assemble(&[6.0]).unwrap();
        let (a, b) = (&s.ground_space[0], &s.ground_space[1]);
        assert!(a.dotc(b).norm() < 1e-12);
        let mixed = a * Complex64::new(0.6, 0.0) + b * Complex64::new(0.0, 0.8);
        assert!((s.ground_fidelity(&mixed).unwrap() - 1.0).abs() < 1e-12);
        assert!(fidelity(&mixed, &s.ground_state).unwrap() < 0.5);
        let closest = s.closest_ground_state(&mixed).unwrap();
        assert!((fidelity(&closest, &mixed).unwrap() - 1.0).abs() < 1e-12);
        assert!((expectation(&h, &closest) - s.ground_energy()).abs() < 1e-10);
        // an excited eigenvector has no ground weight
        let eig = hermitian_eig(&h).unwrap();
        let excited = eig.eigenvector(4);
        assert!(s.ground_fidelity(&excited).unwrap() < 1e-20);
        assert_eq!(s.closest_ground_state(&excited).unwrap(), s.ground_state);
    }

    #[test]
    fn dimension_cap() {
        let f = HamiltonianFamily::hubbard(9, 2).unwrap();
        assert!(matches!(
            exact_ground_capped(&f, &[1.0], 10),
            Err(Error::DimensionCap { dim: 36, cap: 10 })
        ));
    }

    #[test]
    fn fidelity_basics() {
        let v = StateVector::from_vec(vec![Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)]);
        assert!((fidelity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        let e0 = StateVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        let e1 = StateVector::from_vec(vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]);
        assert_eq!(fidelity(&e0, &e1).unwrap(), 0.0);
        let phased = &v * Complex64::from_polar(1.0, 0.9);
        assert!((fidelity(&v, &phased).unwrap() - 1.0).abs() < 1e-15);
        assert!(fidelity(&v, &StateVector::zeros(3)).is_err());
    }
}
