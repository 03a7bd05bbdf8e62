//! Basis sets and second-quantized operator matrices.
//!
//! Qubit operators live in the full `2^M` tensor-product space, with the
//! first label acting on the most significant bit of the basis index.
//! Spinless fermions live in a fixed-particle-number sector: basis states are
//! `L`-bit occupation masks with site 1 at the least significant bit, sorted
//! ascending. Fermionic signs follow a single normal-ordering rule,
//! `c†_j c_k |mask> = (-1)^s |mask'>` with `s` the number of occupied sites
//! strictly between `j` and `k`; the periodic bond needs no special casing.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, StateVector};

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QubitSpace {
    pub num_qubits: usize,
}

impl QubitSpace {
    pub fn new(num_qubits: usize) -> Self {
        Self { num_qubits }
    }

    pub fn dimension(&self) -> usize {
        1 << self.num_qubits
    }
}

/// Single-qubit Pauli matrix: 0 = I, 1 = X, 2 = Y, 3 = Z.
pub fn pauli(label: u8) -> Result<ComplexMatrix> {
    let i = Complex64::new(0.0, 1.0);
    let entries = match label {
        0 => [ONE, ZERO, ZERO, ONE],
        1 => [ZERO, ONE, ONE, ZERO],
        2 => [ZERO, -i, i, ZERO],
        3 => [ONE, ZERO, ZERO, -ONE],
        other => return Err(Error::InvalidPauliLabel(other)),
    };
    Ok(ComplexMatrix::from_row_slice(2, 2, &entries))
}

/// `σ_{r1} ⊗ σ_{r2} ⊗ ... ⊗ σ_{rM}`.
pub fn pauli_string(labels: &[u8]) -> Result<ComplexMatrix> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("a Pauli string needs at least one qubit".into()));
    }
    let mut out = DMatrix::from_element(1, 1, ONE);
    for &label in labels {
        out = out.kronecker(&pauli(label)?);
    }
    Ok(out)
}

/// Fixed-`N` sector of `L` spinless fermionic modes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FermionSector {
    num_sites: usize,
    num_particles: usize,
    basis: Vec<u64>,
}

impl FermionSector {
    pub fn new(num_sites: usize, num_particles: usize) -> Result<Self> {
        if num_sites == 0 || num_sites > 63 {
            return Err(Error::InvalidLattice(format!(
                "site count must lie in 1..=63, got {num_sites}"
            )));
        }
        if num_particles > num_sites {
            return Err(Error::InvalidLattice(format!(
                "{num_particles} particles do not fit on {num_sites} sites"
            )));
        }
        let basis = (0u64..1 << num_sites)
            .filter(|m| m.count_ones() as usize == num_particles)
            .collect();
        Ok(Self {
            num_sites,
            num_particles,
            basis,
        })
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn num_particles(&self) -> usize {
        self.num_particles
    }

    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[u64] {
        &self.basis
    }

    pub fn index_of(&self, mask: u64) -> Option<usize> {
        self.basis.binary_search(&mask).ok()
    }

    fn check_site(&self, site: usize) -> Result<usize> {
        if (1..=self.num_sites).contains(&site) {
            Ok(site - 1)
        } else {
            Err(Error::SiteOutOfRange {
                site,
                sites: self.num_sites,
            })
        }
    }

    /// Periodic right neighbour of a 1-based site.
    pub fn next_site(&self, site: usize) -> usize {
        site % self.num_sites + 1
    }

    /// Applies `c†_to c_from` to a basis mask, returning the sign and the new mask.
    pub fn hop_mask(&self, to: usize, from: usize, mask: u64) -> Result<Option<(f64, u64)>> {
        let (j, k) = (self.check_site(to)?, self.check_site(from)?);
        Ok(hop_bits(j, k, mask))
    }

    /// Matrix of `c†_to c_from` in this sector.
    pub fn hop_operator(&self, to: usize, from: usize) -> Result<ComplexMatrix> {
        let (j, k) = (self.check_site(to)?, self.check_site(from)?);
        let n = self.dimension();
        let mut out = ComplexMatrix::zeros(n, n);
        for (col, &mask) in self.basis.iter().enumerate() {
            if let Some((sign, target)) = hop_bits(j, k, mask) {
                let row = self.index_of(target).expect("hopping conserves particle number");
                out[(row, col)] += Complex64::new(sign, 0.0);
            }
        }
        Ok(out)
    }

    /// `c†_m c_{m+1} + c†_{m+1} c_m` on the periodic bond starting at site `m`.
    pub fn hopping_term(&self, m: usize) -> Result<ComplexMatrix> {
        self.check_site(m)?;
        let next = self.next_site(m);
        Ok(self.hop_operator(m, next)? + self.hop_operator(next, m)?)
    }

    /// `n_m n_{m+1}` on the periodic bond starting at site `m`.
    pub fn density_density_term(&self, m: usize) -> Result<ComplexMatrix> {
        let a = self.check_site(m)?;
        let b = self.check_site(self.next_site(m))?;
        let n = self.dimension();
        let mut out = ComplexMatrix::zeros(n, n);
        for (i, &mask) in self.basis.iter().enumerate() {
            if mask >> a & 1 == 1 && mask >> b & 1 == 1 {
                out[(i, i)] = ONE;
            }
        }
        Ok(out)
    }

    pub fn number_operator(&self, m: usize) -> Result<ComplexMatrix> {
        self.hop_operator(m, m)
    }

    /// `<ψ| c†_{m+1} c_m |ψ>`.
    pub fn one_body_offdiagonal(&self, state: &StateVector, m: usize) -> Result<Complex64> {
        if state.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                found: state.len(),
            });
        }
        let (from, to) = (self.check_site(m)?, self.check_site(self.next_site(m))?);
        let mut acc = ZERO;
        for (col, &mask) in self.basis.iter().enumerate() {
            if let Some((sign, target)) = hop_bits(to, from, mask) {
                let row = self.index_of(target).expect("hopping conserves particle number");
                acc += state[row].conj() * state[col] * sign;
            }
        }
        Ok(acc)
    }

    /// Bond average of `|<c†_{m+1} c_m>|`, independent of the sign convention.
    pub fn mean_bond_coherence(&self, state: &StateVector) -> Result<f64> {
        let mut total = 0.0;
        for m in 1..=self.num_sites {
            total += self.one_body_offdiagonal(state, m)?.norm();
        }
        Ok(total / self.num_sites as f64)
    }
}

/// `c†_j c_k` on zero-based bit positions.
fn hop_bits(j: usize, k: usize, mask: u64) -> Option<(f64, u64)> {
    if mask >> k & 1 == 0 {
        return None;
    }
    if j == k {
        return Some((1.0, mask));
    }
    let removed = mask & !(1 << k);
    if removed >> j & 1 == 1 {
        return None;
    }
    let (lo, hi) = if j < k { (j, k) } else { (k, j) };
    let between = ((1u64 << hi) - 1) & !((1u64 << (lo + 1)) - 1);
    let sign = if (removed & between).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    };
    Some((sign, removed | 1 << j))
}
