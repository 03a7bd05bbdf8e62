//! Parameterized Hamiltonian families `H(f) = Σ_ℓ f_ℓ h_ℓ` and samplers over
//! their parameter regimes.

use num_complex::Complex64;
use rand::distr::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{pauli_string, FermionSector};
use crate::numerics::{hermitian_deviation, ComplexMatrix, HERMITIAN_TOLERANCE};
use crate::oracle;

/// Which system a family describes. Serialized into every manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FamilyKind {
    /// All `4^M` Pauli strings on `M` qubits.
    Pauli { qubits: usize },
    /// Spinless fermions on a periodic ring, hopping `t = 1` and
    /// nearest-neighbour repulsion `U`.
    Hubbard { sites: usize, particles: usize },
}

/// Serializable description of a family; enough to rebuild it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyMetadata {
    pub name: String,
    #[serde(flatten)]
    pub kind: FamilyKind,
    pub physical_param_dim: usize,
    pub term_labels: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct HamiltonianFamily {
    kind: FamilyKind,
    terms: Vec<ComplexMatrix>,
    /// Nonzero entries `(row, col, value)` of every term.
    sparse_terms: Vec<Vec<(usize, usize, Complex64)>>,
    term_labels: Vec<String>,
    sector: Option<FermionSector>,
}

impl HamiltonianFamily {
    /// The generic `M`-qubit Hamiltonian. Terms are ordered lexicographically
    /// by label tuple, `(0,…,0)` first and `(3,…,3)` last.
    pub fn pauli(qubits: usize) -> Result<Self> {
        if qubits == 0 || qubits > 8 {
            return Err(Error::InvalidArgument(format!(
                "qubit count must lie in 1..=8, got {qubits}"
            )));
        }
        let count = 1usize << (2 * qubits);
        let mut terms = Vec::with_capacity(count);
        let mut term_labels = Vec::with_capacity(count);
        for index in 0..count {
            let labels: Vec<u8> = (0..qubits)
                .map(|q| ((index >> (2 * (qubits - 1 - q))) & 3) as u8)
                .collect();
            term_labels.push(labels.iter().map(|&r| ['I', 'X', 'Y', 'Z'][r as usize]).collect());
            terms.push(pauli_string(&labels)?);
        }
        Self::from_parts(FamilyKind::Pauli { qubits }, terms, term_labels, None)
    }

    /// Spinless-fermion ring: hopping terms for bonds `1..=L` followed by
    /// density-density terms for bonds `1..=L`.
    pub fn hubbard(sites: usize, particles: usize) -> Result<Self> {
        if sites < 3 || particles == 0 || particles >= sites {
            return Err(Error::InvalidLattice(format!(
                "need L >= 3 and 1 <= N < L, got L = {sites}, N = {particles}"
            )));
        }
        let sector = FermionSector::new(sites, particles)?;
        let mut terms = Vec::with_capacity(2 * sites);
        let mut term_labels = Vec::with_capacity(2 * sites);
        for m in 1..=sites {
            terms.push(sector.hopping_term(m)?);
            term_labels.push(format!("hop({},{})", m, sector.next_site(m)));
        }
        for m in 1..=sites {
            terms.push(sector.density_density_term(m)?);
            term_labels.push(format!("nn({},{})", m, sector.next_site(m)));
        }
        Self::from_parts(
            FamilyKind::Hubbard { sites, particles },
            terms,
            term_labels,
            Some(sector),
        )
    }

    pub fn from_metadata(meta: &FamilyMetadata) -> Result<Self> {
        let family = match meta.kind {
            FamilyKind::Pauli { qubits } => Self::pauli(qubits)?,
            FamilyKind::Hubbard { sites, particles } => Self::hubbard(sites, particles)?,
        };
        if family.metadata() != *meta {
            return Err(Error::LayoutMismatch(format!(
                "family metadata for `{}` does not match the rebuilt family",
                meta.name
            )));
        }
        Ok(family)
    }

    fn from_parts(
        kind: FamilyKind,
        terms: Vec<ComplexMatrix>,
        term_labels: Vec<String>,
        sector: Option<FermionSector>,
    ) -> Result<Self> {
        let dim = terms[0].nrows();
        for term in &terms {
            if term.nrows() != dim || term.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: term.nrows(),
                });
            }
            let deviation = hermitian_deviation(term);
            if deviation > HERMITIAN_TOLERANCE {
                return Err(Error::NotHermitian {
                    max_deviation: deviation,
                });
            }
        }
        let sparse_terms = terms
            .iter()
            .map(|t| {
                let mut entries = Vec::new();
                for j in 0..dim {
                    for i in 0..dim {
                        if t[(i, j)] != Complex64::new(0.0, 0.0) {
                            entries.push((i, j, t[(i, j)]));
                        }
                    }
                }
                entries
            })
            .collect();
        Ok(Self {
            kind,
            terms,
            sparse_terms,
            term_labels,
            sector,
        })
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn name(&self) -> String {
        match self.kind {
            FamilyKind::Pauli { qubits } => format!("pauli-{qubits}q"),
            FamilyKind::Hubbard { sites, particles } => format!("hubbard-L{sites}-N{particles}"),
        }
    }

    pub fn metadata(&self) -> FamilyMetadata {
        FamilyMetadata {
            name: self.name(),
            kind: self.kind,
            physical_param_dim: self.physical_param_dim(),
            term_labels: self.term_labels.clone(),
        }
    }

    pub fn terms(&self) -> &[ComplexMatrix] {
        &self.terms
    }

    /// Nonzero entries of term `index` in column-major order.
    pub fn term_entries(&self, index: usize) -> &[(usize, usize, Complex64)] {
        &self.sparse_terms[index]
    }

    pub fn term_labels(&self) -> &[String] {
        &self.term_labels
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn dimension(&self) -> usize {
        self.terms[0].nrows()
    }

    /// Fermion sector backing a lattice family.
    pub fn sector(&self) -> Option<&FermionSector> {
        self.sector.as_ref()
    }

    /// Length of the physical parameter vector: `4^M` for qubits, 1 (`U`)
    /// for the lattice.
    pub fn physical_param_dim(&self) -> usize {
        match self.kind {
            FamilyKind::Pauli { .. } => self.terms.len(),
            FamilyKind::Hubbard { .. } => 1,
        }
    }

    /// Per-term coefficients `f_ℓ` for the given physical parameters.
    pub fn coefficients(&self, physical_params: &[f64]) -> Result<Vec<f64>> {
        if physical_params.len() != self.physical_param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.physical_param_dim(),
                found: physical_params.len(),
            });
        }
        Ok(match self.kind {
            FamilyKind::Pauli { .. } => physical_params.to_vec(),
            FamilyKind::Hubbard { sites, .. } => {
                let u = physical_params[0];
                let mut f = vec![-1.0; sites];
                f.extend(std::iter::repeat(u).take(sites));
                f
            }
        })
    }

    /// `Σ_ℓ c_ℓ h_ℓ` for arbitrary real per-term coefficients.
    pub fn combine(&self, coeffs: &[f64]) -> Result<ComplexMatrix> {
        if coeffs.len() != self.term_count() {
            return Err(Error::DimensionMismatch {
                expected: self.term_count(),
                found: coeffs.len(),
            });
        }
        let n = self.dimension();
        let mut out = ComplexMatrix::zeros(n, n);
        for (entries, &c) in self.sparse_terms.iter().zip(coeffs) {
            if c != 0.0 {
                for &(i, j, value) in entries {
                    out[(i, j)] += value * c;
                }
            }
        }
        Ok(out)
    }

    /// `H(f) = Σ_ℓ f_ℓ h_ℓ` with `f` taken from the coefficient map.
    pub fn assemble(&self, physical_params: &[f64]) -> Result<ComplexMatrix> {
        self.combine(&self.coefficients(physical_params)?)
    }
}

/// A box of physical parameters with its own sampling seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRegime {
    pub name: String,
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
}

impl ParameterRegime {
    pub fn new(name: impl Into<String>, bounds: Vec<(f64, f64)>, seed: u64) -> Result<Self> {
        let regime = Self {
            name: name.into(),
            bounds,
            seed,
        };
        regime.validate()?;
        Ok(regime)
    }

    pub fn uniform(name: impl Into<String>, dim: usize, lo: f64, hi: f64, seed: u64) -> Result<Self> {
        Self::new(name, vec![(lo, hi); dim], seed)
    }

    /// `f ∈ (-0.2, 0.2)^{4^M}`.
    pub fn pauli_weak(qubits: usize, seed: u64) -> Self {
        Self::uniform("weak", 1 << (2 * qubits), -0.2, 0.2, seed).expect("valid bounds")
    }

    /// `f ∈ (-3.8, -1.2)^{4^M}`.
    pub fn pauli_strong(qubits: usize, seed: u64) -> Self {
        Self::uniform("strong", 1 << (2 * qubits), -3.8, -1.2, seed).expect("valid bounds")
    }

    /// `U ∈ (0, 20)`.
    pub fn hubbard_repulsive(seed: u64) -> Self {
        Self::uniform("repulsive", 1, 0.0, 20.0, seed).expect("valid bounds")
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(Error::InvalidArgument("regime has no bounds".into()));
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "regime `{}` bound {i} is not an interval: ({lo}, {hi})",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, params: &[f64]) -> bool {
        params.len() == self.dim() && params.iter().zip(&self.bounds).all(|(&x, &(lo, hi))| lo < x && x < hi)
    }

    /// The `index`-th sample. Each index owns a separate ChaCha stream keyed
    /// by the regime seed, so samples can be drawn in any order or in parallel.
    pub fn sample_at(&self, index: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        self.bounds
            .iter()
            .map(|&(lo, hi)| loop {
                let u: f64 = Open01.sample(&mut rng);
                let x = lo + (hi - lo) * u;
                if lo < x && x < hi {
                    break x;
                }
            })
            .collect()
    }
}

/// `count` i.i.d. uniform draws from the open regime box.
pub fn sample_parameters(regime: &ParameterRegime, count: usize) -> Vec<Vec<f64>> {
    (0..count as u64).map(|i| regime.sample_at(i)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapEntry {
    pub params: Vec<f64>,
    /// `E1 - E0`.
    pub gap: f64,
    pub degeneracy: usize,
    /// Gap above the whole ground multiplet.
    pub multiplet_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapScan {
    /// Sorted ascending by `gap`.
    pub entries: Vec<GapEntry>,
}

impl GapScan {
    pub fn min_gap(&self) -> Option<f64> {
        self.entries.first().map(|e| e.gap)
    }

    /// Smallest gap above the ground multiplet. A positive value with
    /// `degeneracy > 1` means the multiplet never crosses other levels.
    pub fn min_multiplet_gap(&self) -> Option<f64> {
        self.entries.iter().map(|e| e.multiplet_gap).min_by(f64::total_cmp)
    }
}

/// Spectral gap above the ground state for `count` sampled parameter vectors.
pub fn gap_scan(family: &HamiltonianFamily, regime: &ParameterRegime, count: usize) -> Result<GapScan> {
    if regime.dim() != family.physical_param_dim() {
        return Err(Error::DimensionMismatch {
            expected: family.physical_param_dim(),
            found: regime.dim(),
        });
    }
    let mut entries = sample_parameters(regime, count)
        .into_iter()
        .map(|params| {
            oracle::exact_ground(family, &params).map(|s| GapEntry {
                params,
                gap: s.gap,
                degeneracy: s.degeneracy,
                multiplet_gap: s.multiplet_gap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.gap.total_cmp(&b.gap));
    Ok(GapScan { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_qubit_family() {
        let f = HamiltonianFamily::pauli(1).unwrap();
        assert_eq!(f.term_count(), 4);
        assert_eq!(f.dimension(), 2);
        assert_eq!(f.term_labels(), &["I", "X", "Y", "Z"]);
    }

    #[test]
    fn two_qubit_family() {
        let f = HamiltonianFamily::pauli(2).unwrap();
        assert_eq!(f.term_count(), 16);
        assert_eq!(f.physical_param_dim(), 16);
        assert_eq!(f.dimension(), 4);
        assert_eq!(f.term_labels()[0], "II");
        assert_eq!(f.term_labels()[15], "ZZ");
        assert_eq!(f.terms()[0], ComplexMatrix::identity(4, 4));
        assert_eq!(f.terms()[15], pauli_string(&[3, 3]).unwrap());
        assert_eq!(f.terms()[6], pauli_string(&[1, 2]).unwrap());
    }

    #[test]
    fn assemble_pauli_basis_vectors() {
        let f = HamiltonianFamily::pauli(2).unwrap();
        let mut p = vec![0.0; 16];
        assert_eq!(f.assemble(&p).unwrap(), ComplexMatrix::zeros(4, 4));
        p[0] = 1.0;
        assert_eq!(f.assemble(&p).unwrap(), ComplexMatrix::identity(4, 4));
        let mut p = vec![0.0; 16];
        p[12] = 1.0; // ZI
        let h = f.assemble(&p).unwrap();
        let diag: Vec<f64> = (0..4).map(|i| h[(i, i)].re).collect();
        assert_eq!(diag, vec![1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn assemble_rejects_wrong_length() {
        let f = HamiltonianFamily::pauli(2).unwrap();
        assert!(matches!(f.assemble(&[0.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn hubbard_layout() {
        let f = HamiltonianFamily::hubbard(5, 2).unwrap();
        assert_eq!(f.term_count(), 10);
        assert_eq!(f.dimension(), 10);
        assert_eq!(f.physical_param_dim(), 1);
        assert_eq!(f.term_labels()[4], "hop(5,1)");
        assert_eq!(f.term_labels()[5], "nn(1,2)");
        let coeffs = f.coefficients(&[3.0]).unwrap();
        assert_eq!(&coeffs[..5], &[-1.0; 5]);
        assert_eq!(&coeffs[5..], &[3.0; 5]);
        assert!(HamiltonianFamily::hubbard(2, 1).is_err());
        assert!(HamiltonianFamily::hubbard(4, 4).is_err());
    }

    #[test]
    fn hubbard_free_limit_is_negative_hopping() {
        let f = HamiltonianFamily::hubbard(5, 2).unwrap();
        let s = f.sector().unwrap();
        let hop = (1..=5).fold(ComplexMatrix::zeros(10, 10), |acc, m| acc + s.hopping_term(m).unwrap());
        assert_eq!(f.assemble(&[0.0]).unwrap(), -hop);
    }

    #[test]
    fn hubbard_interaction_is_exact_difference() {
        let f = HamiltonianFamily::hubbard(6, 3).unwrap();
        let s = f.sector().unwrap();
        let nn = (1..=6).fold(ComplexMatrix::zeros(20, 20), |acc, m| {
            acc + s.density_density_term(m).unwrap()
        });
        let u = 7.25;
        let diff = f.assemble(&[u]).unwrap() - f.assemble(&[0.0]).unwrap();
        assert_eq!(diff, nn * Complex64::new(u, 0.0));
    }

    #[test]
    fn metadata_round_trip() {
        for f in [
            HamiltonianFamily::pauli(2).unwrap(),
            HamiltonianFamily::hubbard(5, 2).unwrap(),
        ] {
            let json = serde_json::to_string(&f.metadata()).unwrap();
            let back: FamilyMetadata = serde_json::from_str(&json).unwrap();
            assert_eq!(back, f.metadata());
            assert_eq!(serde_json::to_string(&back).unwrap(), json);
            let rebuilt = HamiltonianFamily::from_metadata(&back).unwrap();
            assert_eq!(rebuilt.terms(), f.terms());
        }
    }

    #[test]
    fn sampling_is_reproducible_and_in_bounds() {
        let regime = ParameterRegime::pauli_weak(2, 11);
        let a = sample_parameters(&regime, 3);
        assert_eq!(a, sample_parameters(&regime, 3));
        assert!(a.iter().all(|p| regime.contains(p)));
        assert_ne!(a[0], a[1]);
        // prefix property: the stream is indexed, not sequential
        assert_eq!(sample_parameters(&regime, 5)[..3], a[..]);
        let other = ParameterRegime::pauli_weak(2, 12);
        assert_ne!(sample_parameters(&other, 1), a[..1]);
    }

    #[test]
    fn sample_mean_within_three_sigma() {
        let regime = ParameterRegime::uniform("t", 2, -3.8, -1.2, 5).unwrap();
        let n = 100_000;
        let draws = sample_parameters(&regime, n);
        let width: f64 = 2.6;
        let sigma = width / 12f64.sqrt() / (n as f64).sqrt();
        for c in 0..2 {
            let mean = draws.iter().map(|p| p[c]).sum::<f64>() / n as f64;
            assert!((mean - (-2.5)).abs() < 3.0 * sigma, "component {c}: mean {mean}");
        }
    }

    #[test]
    fn regime_validation() {
        assert!(ParameterRegime::new("bad", vec![(1.0, 1.0)], 0).is_err());
        assert!(ParameterRegime::new("bad", vec![], 0).is_err());
    }

    #[test]
    fn identity_only_has_zero_gap() {
        let f = HamiltonianFamily::pauli(2).unwrap();
        let regime = ParameterRegime::new(
            "identity",
            std::iter::once((0.5, 1.0))
                .chain(std::iter::repeat((0.0, 1e-300)).take(15))
                .collect(),
            1,
        )
        .unwrap();
        let scan = gap_scan(&f, &regime, 4).unwrap();
        assert!(scan.min_gap().unwrap() < 1e-12);
    }

    #[test]
    fn hubbard_gap_scan_sorted_with_protected_multiplet() {
        let f = HamiltonianFamily::hubbard(5, 2).unwrap();
        let scan = gap_scan(&f, &ParameterRegime::hubbard_repulsive(3), 12).unwrap();
        assert!(scan.entries.windows(2).all(|w| w[0].gap <= w[1].gap));
        // the ring ground state is a momentum doublet, so E1 - E0 vanishes
        assert!(scan.min_gap().unwrap() < 1e-10);
        assert!(scan.entries.iter().all(|e| e.degeneracy == 2));
        assert!(scan.min_multiplet_gap().unwrap() > 0.0);
        let at_one = oracle::exact_ground(&f, &[1.0]).unwrap();
        assert!(at_one.multiplet_gap > 0.0);
    }
}
