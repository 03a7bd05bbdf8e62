use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type StateVector = DVector<Complex64>;

/// Largest tolerated `|M - M^H|` entry, scaled by `max(1, max|M|)`.
pub const HERMITIAN_TOLERANCE: f64 = 1e-12;

/// Largest entrywise deviation `max |M_ij - conj(M_ji)|`.
pub fn hermitian_deviation(m: &ComplexMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Spectral decomposition `M = V diag(λ) V^H` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, each phase-canonicalized.
    pub eigenvectors: ComplexMatrix,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, index: usize) -> StateVector {
        self.eigenvectors.column(index).into_owned()
    }

    /// `V diag(g(λ)) V^H v` for an arbitrary scalar function `g`.
    pub fn apply_function(&self, g: impl Fn(f64) -> Complex64, v: &StateVector) -> Result<StateVector> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        let mut coords = self.eigenvectors.ad_mul(v);
        for (c, &lambda) in coords.iter_mut().zip(self.eigenvalues.iter()) {
            *c *= g(lambda);
        }
        Ok(&self.eigenvectors * coords)
    }

    /// `e^{scale·M} v`.
    pub fn exp_action(&self, scale: Complex64, v: &StateVector) -> Result<StateVector> {
        self.apply_function(|lambda| (scale * lambda).exp(), v)
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        let scaled = ComplexMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.eigenvectors[(i, j)] * self.eigenvalues[j]
        });
        scaled * self.eigenvectors.adjoint()
    }
}

/// First divided differences of `g(λ) = e^{scale·(λ - shift)}` over all
/// eigenvalue pairs, for `scale` equal to 1 or `i`.
///
/// `Γ_ij = (g(λ_i) - g(λ_j)) / (λ_i - λ_j)`, with `g'(λ_i)` on the diagonal.
/// Together with the eigenvectors this gives the Fréchet derivative of the
/// matrix exponential: `d e^{sC}[X] = V (Γ ∘ V^H X V) V^H`.
pub(crate) fn exp_divided_differences(eigenvalues: &DVector<f64>, scale: Complex64, shift: f64) -> ComplexMatrix {
    let n = eigenvalues.len();
    let unitary = scale.re == 0.0;
    ComplexMatrix::from_fn(n, n, |i, j| {
        let (li, lj) = (eigenvalues[i], eigenvalues[j]);
        let delta = (li - lj).abs();
        if unitary {
            let w = scale.im;
            // (e^{iwλi} - e^{iwλj}) / (λi - λj) = i w e^{iw(λi+λj)/2} sinc(w δ / 2)
            let half = 0.5 * w * delta;
            let sinc = if half == 0.0 { 1.0 } else { half.sin() / half };
            Complex64::new(0.0, w) * Complex64::from_polar(1.0, 0.5 * w * (li + lj) - w * shift) * sinc
        } else {
            let w = scale.re;
            // g(max) (1 - e^{-wδ}) / δ, stable for both large and small δ
            let top = if w >= 0.0 { li.max(lj) } else { li.min(lj) };
            let d = w.abs() * delta;
            let ratio = if d == 0.0 { 1.0 } else { -(-d).exp_m1() / d };
            Complex64::new((w * (top - shift)).exp() * w * ratio, 0.0)
        }
    })
}

/// Rotates the global phase of `v` so that its largest-magnitude amplitude
/// (the first one, among near-ties) is real and positive.
pub fn canonicalize_phase(v: &mut StateVector) {
    let largest = v.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()));
    if largest == 0.0 {
        return;
    }
    let pivot = v
        .iter()
        .position(|z| z.norm() >= largest * (1.0 - 1e-9))
        .expect("maximum is attained");
    let phase = v[pivot].conj() / v[pivot].norm();
    v.iter_mut().for_each(|z| *z *= phase);
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Real symmetric input takes a real solver path. Eigenpairs are sorted by
/// ascending eigenvalue (stable with respect to the solver's order) and each
/// eigenvector is passed through [`canonicalize_phase`], so the output is a
/// deterministic function of the input.
pub fn hermitian_eig(m: &ComplexMatrix) -> Result<EigenDecomposition> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let deviation = hermitian_deviation(m);
    if deviation > HERMITIAN_TOLERANCE * max_abs(m).max(1.0) {
        return Err(Error::NotHermitian {
            max_deviation: deviation,
        });
    }
    let n = m.nrows();
    let (values, vectors) = if m.iter().all(|z| z.im == 0.0) {
        let real = DMatrix::from_fn(n, n, |i, j| m[(i, j)].re);
        let eig = SymmetricEigen::new(real);
        (eig.eigenvalues, eig.eigenvectors.map(|x| Complex64::new(x, 0.0)))
    } else {
        let eig = SymmetricEigen::new(m.clone());
        (eig.eigenvalues, eig.eigenvectors)
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| values[i]));
    let mut eigenvectors = ComplexMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut v = vectors.column(src).into_owned();
        canonicalize_phase(&mut v);
        eigenvectors.set_column(col, &v);
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// `e^{scale·C} v` for Hermitian `C`. The result is not normalized.
pub fn exp_hermitian_action(c: &ComplexMatrix, scale: Complex64, v: &StateVector) -> Result<StateVector> {
    if c.nrows() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: c.nrows(),
            found: v.len(),
        });
    }
    hermitian_eig(c)?.exp_action(scale, v)
}

pub fn inner(a: &StateVector, b: &StateVector) -> Complex64 {
    a.dotc(b)
}

pub fn norm(v: &StateVector) -> f64 {
    v.norm()
}

pub fn normalized(v: &StateVector) -> StateVector {
    v / Complex64::new(v.norm(), 0.0)
}

/// Real part of `<v|H|v>`; `H` is assumed Hermitian.
pub fn expectation(h: &ComplexMatrix, v: &StateVector) -> f64 {
    v.dotc(&(h * v)).re
}
