//! The k-iteration contracted quantum eigensolver.
//!
//! Each iteration appends one layer `e^{B} e^{iA}` to the current state, with
//! `A = Σ_ℓ a_ℓ h_ℓ` and `B = Σ_ℓ b_ℓ h_ℓ` built from the family's own terms
//! and real coefficients, so `e^{iA}` is unitary and `e^{B}` is a Hermitian,
//! non-unitary factor. The coefficients of the new layer minimize the energy
//! of the normalized result; earlier layers stay frozen. Every minimization
//! starts from the zero layer, which makes the map from Hamiltonian
//! parameters to ansatz parameters single-valued.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{FamilyKind, HamiltonianFamily};
use crate::numerics::{
    canonicalize_phase, exp_divided_differences, expectation, fd_gradient, hermitian_eig, lbfgs_minimize,
    ComplexMatrix, EigenDecomposition, LbfgsOptions, LbfgsStatus, StateVector, FD_STEP,
};
use crate::oracle;

/// Norm below which the non-unitary factor is considered to have
/// annihilated the state.
pub const ANNIHILATION_THRESHOLD: f64 = 1e-14;

/// Which generators a layer carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Unitary and Hermitian factors.
    Full,
    /// Unitary factor only.
    Unitary,
    /// Hermitian factor only (HCQE).
    Hermitian,
}

impl Mode {
    pub fn uses_unitary(self) -> bool {
        matches!(self, Mode::Full | Mode::Unitary)
    }

    pub fn uses_hermitian(self) -> bool {
        matches!(self, Mode::Full | Mode::Hermitian)
    }

    pub fn generators_per_layer(self) -> usize {
        usize::from(self.uses_unitary()) + usize::from(self.uses_hermitian())
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::Unitary => "unitary",
            Mode::Hermitian => "hermitian",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "unitary" => Ok(Mode::Unitary),
            "hermitian" => Ok(Mode::Hermitian),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode `{other}` (expected full, unitary or hermitian)"
            ))),
        }
    }
}

/// One iteration's generator coefficients, indexed like the family's terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzLayer {
    pub a_coeffs: Vec<f64>,
    pub b_coeffs: Vec<f64>,
}

impl AnsatzLayer {
    pub fn zeros(term_count: usize) -> Self {
        Self {
            a_coeffs: vec![0.0; term_count],
            b_coeffs: vec![0.0; term_count],
        }
    }

    pub fn term_count(&self) -> usize {
        self.a_coeffs.len()
    }

    /// Builds a layer from the mode's active coefficients (`a` then `b`);
    /// inactive generators are exactly zero.
    pub fn from_active(mode: Mode, term_count: usize, active: &[f64]) -> Result<Self> {
        let expected = mode.generators_per_layer() * term_count;
        if active.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: active.len(),
            });
        }
        let mut layer = Self::zeros(term_count);
        let mut rest = active;
        if mode.uses_unitary() {
            layer.a_coeffs.copy_from_slice(&rest[..term_count]);
            rest = &rest[term_count..];
        }
        if mode.uses_hermitian() {
            layer.b_coeffs.copy_from_slice(&rest[..term_count]);
        }
        Ok(layer)
    }

    /// The mode's active coefficients, `a` before `b`.
    pub fn active(&self, mode: Mode) -> Vec<f64> {
        let mut out = Vec::with_capacity(mode.generators_per_layer() * self.term_count());
        if mode.uses_unitary() {
            out.extend_from_slice(&self.a_coeffs);
        }
        if mode.uses_hermitian() {
            out.extend_from_slice(&self.b_coeffs);
        }
        out
    }

    fn is_zero(&self) -> bool {
        self.a_coeffs.iter().chain(&self.b_coeffs).all(|&c| c == 0.0)
    }
}

/// How `k` layers are flattened into one parameter vector: layer-major,
/// and within a layer the active `a` block precedes the active `b` block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnsatzLayout {
    pub layers: usize,
    pub mode: Mode,
    pub term_count: usize,
}

impl AnsatzLayout {
    pub fn new(layers: usize, mode: Mode, term_count: usize) -> Self {
        Self {
            layers,
            mode,
            term_count,
        }
    }

    pub fn per_layer(&self) -> usize {
        self.mode.generators_per_layer() * self.term_count
    }

    pub fn flat_len(&self) -> usize {
        self.layers * self.per_layer()
    }

    pub fn flatten(&self, layers: &[AnsatzLayer]) -> Result<Vec<f64>> {
        if layers.len() != self.layers {
            return Err(Error::LayoutMismatch(format!(
                "expected {} layers, found {}",
                self.layers,
                layers.len()
            )));
        }
        let mut flat = Vec::with_capacity(self.flat_len());
        for layer in layers {
            if layer.term_count() != self.term_count || layer.b_coeffs.len() != self.term_count {
                return Err(Error::LayoutMismatch(format!(
                    "layer has {} terms, layout expects {}",
                    layer.term_count(),
                    self.term_count
                )));
            }
            flat.extend(layer.active(self.mode));
        }
        Ok(flat)
    }

    pub fn unflatten(&self, flat: &[f64]) -> Result<Vec<AnsatzLayer>> {
        if flat.len() != self.flat_len() {
            return Err(Error::LayoutMismatch(format!(
                "flat ansatz has {} entries, layout expects {}",
                flat.len(),
                self.flat_len()
            )));
        }
        if self.per_layer() == 0 {
            return Ok(vec![AnsatzLayer::zeros(self.term_count); self.layers]);
        }
        flat.chunks(self.per_layer())
            .map(|chunk| AnsatzLayer::from_active(self.mode, self.term_count, chunk))
            .collect()
    }
}

/// Relative decrease below which a layer minimization stops.
pub const LAYER_FUNCTION_TOLERANCE: f64 = 2.2e-9;

/// Where layer-minimization gradients come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    /// Exact derivative of the matrix exponentials in their eigenbasis.
    Analytic,
    /// Central differences with `SolverOptions::fd_step`.
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub lbfgs: LbfgsOptions,
    pub gradient: GradientMethod,
    pub fd_step: f64,
    /// Weight of a `ridge * |theta|^2` penalty added to each layer objective.
    /// Imaginary-time-like layers lower the energy without bound as their
    /// coefficients grow; a small ridge pins a unique, smooth minimizer,
    /// which is what a surrogate can learn. Zero disables it.
    #[serde(default)]
    pub ridge: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            // Layer energies often approach their infimum only as the
            // coefficients grow without bound; the decrease test keeps the
            // returned parameters finite and reproducible.
            lbfgs: LbfgsOptions {
                function_tolerance: LAYER_FUNCTION_TOLERANCE,
                ..LbfgsOptions::default()
            },
            gradient: GradientMethod::Analytic,
            fd_step: FD_STEP,
            ridge: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub energy: f64,
    pub variance: f64,
    pub status: LbfgsStatus,
    pub optimizer_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct CqeSolution {
    pub trial: StateVector,
    pub layers: Vec<AnsatzLayer>,
    /// Normalized, with its largest amplitude real and positive.
    pub final_state: StateVector,
    pub per_iteration: Vec<IterationRecord>,
    pub mode: Mode,
}

impl CqeSolution {
    /// Energy after the last iteration.
    pub fn energy(&self) -> f64 {
        self.per_iteration.last().map_or(f64::NAN, |r| r.energy)
    }

    pub fn variance(&self) -> f64 {
        self.per_iteration.last().map_or(f64::NAN, |r| r.variance)
    }
}

/// Result of one layer minimization.
#[derive(Debug, Clone)]
pub struct LayerFit {
    pub layer: AnsatzLayer,
    pub energy: f64,
    pub status: LbfgsStatus,
    pub iterations: usize,
}

/// Starting vector of the ansatz: the `U = 0` ground state for the lattice,
/// `|0…0>` for qubits.
pub fn trial_state(family: &HamiltonianFamily, physical_params: &[f64]) -> Result<StateVector> {
    if physical_params.len() != family.physical_param_dim() {
        return Err(Error::DimensionMismatch {
            expected: family.physical_param_dim(),
            found: physical_params.len(),
        });
    }
    match family.kind() {
        FamilyKind::Pauli { .. } => {
            let mut v = StateVector::zeros(family.dimension());
            v[0] = Complex64::new(1.0, 0.0);
            Ok(v)
        }
        FamilyKind::Hubbard { .. } => {
            let free = vec![0.0; family.physical_param_dim()];
            Ok(oracle::exact_ground(family, &free)?.ground_state)
        }
    }
}

fn unitary_factor(generator: &ComplexMatrix, state: &StateVector) -> Result<StateVector> {
    hermitian_eig(generator)?.exp_action(Complex64::new(0.0, 1.0), state)
}

/// `e^{B} v` up to the positive factor `e^{λ_max(B)}`, which keeps large
/// generators from overflowing. The factor is irrelevant after normalization.
fn hermitian_factor(generator: &ComplexMatrix, state: &StateVector) -> Result<StateVector> {
    let eig = hermitian_eig(generator)?;
    let top = eig.eigenvalues[eig.dim() - 1];
    eig.apply_function(|lambda| Complex64::new((lambda - top).exp(), 0.0), state)
}

fn layer_action(family: &HamiltonianFamily, layer: &AnsatzLayer, state: &StateVector) -> Result<StateVector> {
    if state.len() != family.dimension() {
        return Err(Error::DimensionMismatch {
            expected: family.dimension(),
            found: state.len(),
        });
    }
    if layer.term_count() != family.term_count() || layer.b_coeffs.len() != family.term_count() {
        return Err(Error::LayoutMismatch(format!(
            "layer has {} terms, family has {}",
            layer.term_count(),
            family.term_count()
        )));
    }
    let mut out = state.clone();
    if layer.a_coeffs.iter().any(|&c| c != 0.0) {
        out = unitary_factor(&family.combine(&layer.a_coeffs)?, &out)?;
    }
    if layer.b_coeffs.iter().any(|&c| c != 0.0) {
        out = hermitian_factor(&family.combine(&layer.b_coeffs)?, &out)?;
    }
    Ok(out)
}

/// `2 Re <left| dE^{sC}[h_ℓ] |right>` for every term, given the
/// eigendecomposition of `C` and the divided differences of the exponential.
fn directional_derivatives(
    family: &HamiltonianFamily,
    eig: &EigenDecomposition,
    gamma: &ComplexMatrix,
    left: &StateVector,
    right: &StateVector,
) -> Vec<f64> {
    let v = &eig.eigenvectors;
    let lc = v.ad_mul(left);
    let rc = v.ad_mul(right);
    let n = eig.dim();
    let kernel = ComplexMatrix::from_fn(n, n, |i, j| lc[i].conj() * gamma[(i, j)] * rc[j]);
    // Σ_ij K_ij (V^H h V)_ij = Σ_ab h_ab (conj(V) K V^T)_ab
    let w = v.conjugate() * kernel * v.transpose();
    (0..family.term_count())
        .map(|l| {
            let acc: Complex64 = family
                .term_entries(l)
                .iter()
                .map(|&(a, b, value)| value * w[(a, b)])
                .sum();
            2.0 * acc.re
        })
        .collect()
}

/// Energy of the normalized layer output and its exact gradient with
/// respect to the active coefficients.
fn layer_energy_gradient(
    family: &HamiltonianFamily,
    h: &ComplexMatrix,
    state: &StateVector,
    mode: Mode,
    theta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let layer = AnsatzLayer::from_active(mode, family.term_count(), theta)?;
    let i = Complex64::new(0.0, 1.0);

    let a_eig = if mode.uses_unitary() {
        Some(hermitian_eig(&family.combine(&layer.a_coeffs)?)?)
    } else {
        None
    };
    let u = match &a_eig {
        Some(eig) => eig.exp_action(i, state)?,
        None => state.clone(),
    };
    let b_eig = if mode.uses_hermitian() {
        Some(hermitian_eig(&family.combine(&layer.b_coeffs)?)?)
    } else {
        None
    };
    let top = b_eig.as_ref().map_or(0.0, |eig| eig.eigenvalues[eig.dim() - 1]);
    let shifted_exp = |lambda: f64| Complex64::new((lambda - top).exp(), 0.0);
    let phi = match &b_eig {
        Some(eig) => eig.apply_function(shifted_exp, &u)?,
        None => u.clone(),
    };

    let norm_sq = phi.norm_squared();
    if !(norm_sq.sqrt() >= ANNIHILATION_THRESHOLD) {
        return Err(Error::DegenerateAnnihilation { norm: norm_sq.sqrt() });
    }
    let h_phi = h * &phi;
    let energy = phi.dotc(&h_phi).re / norm_sq;
    // dE = 2 Re <(H - E)φ / |φ|^2 | dφ>
    let residual = (h_phi - &phi * Complex64::new(energy, 0.0)) / Complex64::new(norm_sq, 0.0);

    let mut grad = Vec::with_capacity(theta.len());
    if let Some(eig) = &a_eig {
        let left = match &b_eig {
            Some(b) => b.apply_function(shifted_exp, &residual)?,
            None => residual.clone(),
        };
        let gamma = exp_divided_differences(&eig.eigenvalues, i, 0.0);
        grad.extend(directional_derivatives(family, eig, &gamma, &left, state));
    }
    if let Some(eig) = &b_eig {
        let gamma = exp_divided_differences(&eig.eigenvalues, Complex64::new(1.0, 0.0), top);
        grad.extend(directional_derivatives(family, eig, &gamma, &residual, &u));
    }
    Ok((energy, grad))
}

/// `e^{B} e^{iA} |state>`, normalized.
pub fn apply_layer(family: &HamiltonianFamily, layer: &AnsatzLayer, state: &StateVector) -> Result<StateVector> {
    let w = layer_action(family, layer, state)?;
    let norm = w.norm();
    if !(norm >= ANNIHILATION_THRESHOLD) {
        return Err(Error::DegenerateAnnihilation { norm });
    }
    Ok(w / Complex64::new(norm, 0.0))
}

/// `<H>` of a normalized state.
pub fn energy(family: &HamiltonianFamily, physical_params: &[f64], state: &StateVector) -> Result<f64> {
    let h = family.assemble(physical_params)?;
    check_dim(&h, state)?;
    Ok(expectation(&h, state))
}

fn check_dim(h: &ComplexMatrix, state: &StateVector) -> Result<()> {
    if h.nrows() != state.len() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            found: state.len(),
        });
    }
    Ok(())
}

fn variance_of(h: &ComplexMatrix, state: &StateVector) -> f64 {
    let e = expectation(h, state);
    let residual = h * state - state * Complex64::new(e, 0.0);
    residual.norm_squared()
}

/// `<H^2> - <H>^2` of a normalized state, evaluated as `||(H - <H>)ψ||^2`
/// so it is never negative.
pub fn variance(family: &HamiltonianFamily, physical_params: &[f64], state: &StateVector) -> Result<f64> {
    let h = family.assemble(physical_params)?;
    check_dim(&h, state)?;
    Ok(variance_of(&h, state))
}

/// Ground-state residual of the contracted Schrödinger equation,
/// `Re <ψ|h_ℓ H|ψ> - <H> <ψ|h_ℓ|ψ>` for every term `ℓ`.
///
/// Contracting the vector with the coefficients `f_ℓ` gives the energy
/// variance. The imaginary parts, `<[h_ℓ, H]>/2i`, are omitted; they vanish
/// at eigenstates as well and cancel in the contraction.
pub fn cse_residual(family: &HamiltonianFamily, physical_params: &[f64], state: &StateVector) -> Result<Vec<f64>> {
    let h = family.assemble(physical_params)?;
    check_dim(&h, state)?;
    let h_state = &h * state;
    let e = state.dotc(&h_state).re;
    Ok(family
        .terms()
        .iter()
        .map(|term| {
            let t_state = term * state;
            t_state.dotc(&h_state).re - e * state.dotc(&t_state).re
        })
        .collect())
}

pub fn residual_norm(residual: &[f64]) -> f64 {
    residual.iter().map(|r| r * r).sum::<f64>().sqrt()
}

pub fn minimize_layer(
    family: &HamiltonianFamily,
    physical_params: &[f64],
    state: &StateVector,
    mode: Mode,
) -> Result<LayerFit> {
    minimize_layer_with(family, physical_params, state, mode, &SolverOptions::default())
}

/// Minimizes `<Φ(θ)|H|Φ(θ)>` over the active coefficients of one layer,
/// starting at `θ = 0`.
pub fn minimize_layer_with(
    family: &HamiltonianFamily,
    physical_params: &[f64],
    state: &StateVector,
    mode: Mode,
    opts: &SolverOptions,
) -> Result<LayerFit> {
    opts.lbfgs.validate()?;
    if !(opts.ridge >= 0.0 && opts.ridge.is_finite()) {
        return Err(Error::InvalidArgument("ridge must be finite and non-negative".into()));
    }
    let h = family.assemble(physical_params)?;
    check_dim(&h, state)?;
    let terms = family.term_count();
    let ridge = opts.ridge;
    let penalty = |theta: &[f64]| ridge * theta.iter().map(|t| t * t).sum::<f64>();

    let energy = |theta: &[f64]| -> f64 {
        let Ok(layer) = AnsatzLayer::from_active(mode, terms, theta) else {
            return f64::NAN;
        };
        match layer_action(family, &layer, state) {
            Ok(w) => {
                let norm_sq = w.norm_squared();
                if norm_sq.sqrt() < ANNIHILATION_THRESHOLD {
                    f64::INFINITY
                } else {
                    expectation(&h, &w) / norm_sq
                }
            }
            Err(_) => f64::NAN,
        }
    };
    let objective = |theta: &[f64]| energy(theta) + penalty(theta);
    let with_ridge = |theta: &[f64], mut g: Vec<f64>| {
        for (gi, t) in g.iter_mut().zip(theta) {
            *gi += 2.0 * ridge * t;
        }
        g
    };
    let x0 = vec![0.0; mode.generators_per_layer() * terms];
    let result = match opts.gradient {
        GradientMethod::Analytic => lbfgs_minimize(
            objective,
            |theta: &[f64]| layer_energy_gradient(family, &h, state, mode, theta).map(|(_, g)| with_ridge(theta, g)),
            &x0,
            &opts.lbfgs,
        ),
        GradientMethod::FiniteDifference => lbfgs_minimize(
            objective,
            |theta: &[f64]| fd_gradient(energy, theta, opts.fd_step).map(|g| with_ridge(theta, g)),
            &x0,
            &opts.lbfgs,
        ),
    };
    Ok(LayerFit {
        layer: AnsatzLayer::from_active(mode, terms, &result.x)?,
        energy: result.f - penalty(&result.x),
        status: result.status,
        iterations: result.iterations,
    })
}

pub fn solve_kcqe(family: &HamiltonianFamily, physical_params: &[f64], k: usize, mode: Mode) -> Result<CqeSolution> {
    solve_kcqe_with(family, physical_params, k, mode, &SolverOptions::default())
}

/// Runs `k` iterations of minimize-then-apply from the trial state.
pub fn solve_kcqe_with(
    family: &HamiltonianFamily,
    physical_params: &[f64],
    k: usize,
    mode: Mode,
    opts: &SolverOptions,
) -> Result<CqeSolution> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let h = family.assemble(physical_params)?;
    let trial = trial_state(family, physical_params)?;
    let mut state = trial.clone();
    let mut layers = Vec::with_capacity(k);
    let mut per_iteration = Vec::with_capacity(k);
    for _ in 0..k {
        let fit = minimize_layer_with(family, physical_params, &state, mode, opts)?;
        if !fit.layer.is_zero() {
            state = apply_layer(family, &fit.layer, &state)?;
        }
        per_iteration.push(IterationRecord {
            energy: expectation(&h, &state),
            variance: variance_of(&h, &state),
            status: fit.status,
            optimizer_iterations: fit.iterations,
        });
        layers.push(fit.layer);
    }
    let mut final_state = state;
    canonicalize_phase(&mut final_state);
    Ok(CqeSolution {
        trial,
        layers,
        final_state,
        per_iteration,
        mode,
    })
}

/// Applies `layers` in order to the trial state.
pub fn prepare_state(
    family: &HamiltonianFamily,
    physical_params: &[f64],
    layers: &[AnsatzLayer],
) -> Result<StateVector> {
    let mut state = trial_state(family, physical_params)?;
    for layer in layers {
        state = apply_layer(family, layer, &state)?;
    }
    canonicalize_phase(&mut state);
    Ok(state)
}
