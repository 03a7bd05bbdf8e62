//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! The inverse-Hessian product uses the standard two-loop recursion over the
//! most recent `memory` curvature pairs, scaled by `s·y / y·y` of the newest
//! pair.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::fd::fd_gradient;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the infinity norm of the gradient.
    pub gradient_tolerance: f64,
    /// Stop once an accepted step lowers the objective by less than this
    /// fraction of `max(|f_k|, |f_k+1|, 1)`. Zero disables the test.
    #[serde(default)]
    pub function_tolerance: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c1: f64,
    pub shrink: f64,
    pub min_step: f64,
    /// Longest trial step, in Euclidean norm. Quasi-Newton steps along
    /// nearly flat directions can otherwise jump across a periodic
    /// landscape into a distant, equivalent minimum.
    #[serde(default)]
    pub max_step: Option<f64>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 500,
            gradient_tolerance: 1e-9,
            function_tolerance: 0.0,
            armijo_c1: 1e-4,
            shrink: 0.5,
            min_step: 1e-16,
            max_step: None,
        }
    }
}

impl LbfgsOptions {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error::InvalidArgument;
        if self.memory == 0 {
            return Err(InvalidArgument("L-BFGS memory must be at least 1".into()));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(InvalidArgument("gradient tolerance must be positive".into()));
        }
        if !(self.function_tolerance >= 0.0) {
            return Err(InvalidArgument("function tolerance must be non-negative".into()));
        }
        if let Some(m) = self.max_step {
            if !(m > 0.0 && m.is_finite()) {
                return Err(InvalidArgument("maximum step must be positive and finite".into()));
            }
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(InvalidArgument("line-search shrink must lie in (0, 1)".into()));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(InvalidArgument("Armijo constant must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsStatus {
    Converged,
    /// The relative decrease fell below `function_tolerance`.
    Stalled,
    MaxIterations,
    /// No step above `min_step` satisfied the Armijo condition, or the
    /// gradient could not be evaluated. The best iterate is still returned.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub status: LbfgsStatus,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective value at every accepted iterate, starting with `f(x0)`.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn two_loop(history: &VecDeque<Pair>, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for p in history.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        q.iter_mut().zip(&p.y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some(last) = history.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for (p, a) in history.iter().zip(alphas.iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        q.iter_mut().zip(&p.s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

/// Minimizes `objective` from `x0`.
///
/// Never fails: line-search or gradient breakdowns end the run with
/// [`LbfgsStatus::LineSearchFailed`] and the best iterate found so far.
/// Accepted iterates strictly satisfy the Armijo condition, so `trace` is
/// non-increasing and `f <= f(x0)`.
pub fn lbfgs_minimize<F, G>(objective: F, gradient: G, x0: &[f64], opts: &LbfgsOptions) -> LbfgsResult
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut x = x0.to_vec();
    let mut fx = objective(&x);
    let mut evaluations = 1;
    let mut trace = vec![fx];

    let finish = |x: Vec<f64>, f: f64, status, iterations, evaluations, trace| LbfgsResult {
        x,
        f,
        status,
        iterations,
        evaluations,
        trace,
    };

    let mut g = match gradient(&x) {
        Ok(g) if g.iter().all(|v| v.is_finite()) => g,
        _ => return finish(x, fx, LbfgsStatus::LineSearchFailed, 0, evaluations, trace),
    };
    if cfg!(debug_assertions) && !x.is_empty() {
        if let Ok(reference) = fd_gradient(&objective, &x, 1e-6) {
            let scale = 1.0 + inf_norm(&reference);
            let gap = g.iter().zip(&reference).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            debug_assert!(
                gap <= 1e-4 * scale,
                "gradient disagrees with finite differences by {gap:e}"
            );
        }
    }

    let mut history: VecDeque<Pair> = VecDeque::with_capacity(opts.memory);
    for iteration in 0..opts.max_iterations {
        if inf_norm(&g) <= opts.gradient_tolerance {
            return finish(x, fx, LbfgsStatus::Converged, iteration, evaluations, trace);
        }

        let mut direction = two_loop(&history, &g);
        let mut slope = dot(&g, &direction);
        if !(slope < 0.0) {
            history.clear();
            direction = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = if history.is_empty() {
            (1.0 / dot(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };
        if let Some(cap) = opts.max_step {
            step = step.min(cap / dot(&direction, &direction).sqrt());
        }
        let mut candidate = vec![0.0; x.len()];
        let accepted = loop {
            for ((c, xi), di) in candidate.iter_mut().zip(&x).zip(&direction) {
                *c = xi + step * di;
            }
            let fc = objective(&candidate);
            evaluations += 1;
            if fc.is_finite() && fc <= fx + opts.armijo_c1 * step * slope {
                break Some(fc);
            }
            step *= opts.shrink;
            if step < opts.min_step {
                break None;
            }
        };
        let Some(f_new) = accepted else {
            return finish(x, fx, LbfgsStatus::LineSearchFailed, iteration, evaluations, trace);
        };
        let g_new = match gradient(&candidate) {
            Ok(gn) if gn.iter().all(|v| v.is_finite()) => gn,
            _ => {
                return finish(
                    candidate,
                    f_new,
                    LbfgsStatus::LineSearchFailed,
                    iteration + 1,
                    evaluations,
                    {
                        trace.push(f_new);
                        trace
                    },
                )
            }
        };

        let s: Vec<f64> = candidate.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back(Pair { s, y, rho: 1.0 / sy });
        }

        let decrease = fx - f_new;
        let scale = fx.abs().max(f_new.abs()).max(1.0);
        x = candidate;
        fx = f_new;
        g = g_new;
        trace.push(fx);
        if decrease <= opts.function_tolerance * scale {
            let status = if inf_norm(&g) <= opts.gradient_tolerance {
                LbfgsStatus::Converged
            } else {
                LbfgsStatus::Stalled
            };
            return finish(x, fx, status, iteration + 1, evaluations, trace);
        }
    }

    let status = if inf_norm(&g) <= opts.gradient_tolerance {
        LbfgsStatus::Converged
    } else {
        LbfgsStatus::MaxIterations
    };
    finish(x, fx, status, opts.max_iterations, evaluations, trace)
}
