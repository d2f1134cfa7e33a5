//! Step 3 of the detailed security analysis: an asymptotic numerical
//! key-rate lower bound by two-step convex optimization. Step A descends the
//! quantum relative entropy between the post-keymap state and its pinched
//! version over the observation-constrained state set; step B converts the
//! final gradient into a certified lower bound through a dual of the
//! linearized problem.

mod objective;
mod solver;

pub use objective::KeyMap;
pub use solver::{key_rate_lower_bound, KeyRateOptions, KeyRateReport};

use thiserror::Error;

use crate::detection::{PovmSet, ProbTable};
use crate::qmath::{hermiticity_defect, identity, CMatrix};

#[derive(Debug, Error)]
pub enum KeyRateError {
    #[error("inconsistent probabilities: {0}")]
    InconsistentProbabilities(String),
    #[error("feasibility residual {residual:.3e} not reducible below 1e-6")]
    Infeasible { residual: f64 },
    #[error("invalid input: {0}")]
    Input(String),
}

/// One observation constraint Tr(Γ ρ) = γ on the joint state.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub op: CMatrix,
    pub value: f64,
}

impl Constraint {
    pub fn new(op: CMatrix, value: f64) -> Result<Self, KeyRateError> {
        let defect = hermiticity_defect(&op);
        if defect > 1e-10 {
            return Err(KeyRateError::Input(format!(
                "constraint operator not Hermitian (defect {defect:.3e})"
            )));
        }
        if !value.is_finite() {
            return Err(KeyRateError::Input(format!("constraint value {value} not finite")));
        }
        Ok(Self { op, value })
    }
}

/// Real vectorization of a Hermitian operator under which the Euclidean dot
/// product equals the Hilbert-Schmidt inner product Tr(AB).
pub(crate) fn hvec(m: &CMatrix) -> Vec<f64> {
    let d = m.nrows();
    let sqrt2 = 2.0_f64.sqrt();
    let mut v = Vec::with_capacity(d * d);
    for i in 0..d {
        v.push(m[(i, i)].re);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            v.push(sqrt2 * m[(i, j)].re);
            v.push(sqrt2 * m[(i, j)].im);
        }
    }
    v
}

pub(crate) fn hunvec(v: &[f64], dim: usize) -> CMatrix {
    let sqrt2 = 2.0_f64.sqrt();
    let mut m = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        m[(i, i)] = crate::qmath::c(v[i], 0.0);
    }
    let mut k = dim;
    for i in 0..dim {
        for j in (i + 1)..dim {
            let re = v[k] / sqrt2;
            let im = v[k + 1] / sqrt2;
            k += 2;
            m[(i, j)] = crate::qmath::c(re, im);
            m[(j, i)] = crate::qmath::c(re, -im);
        }
    }
    m
}

/// Observation constraints from a measured/derived probability table: one
/// constraint per joint outcome (no-click rows and columns included) plus
/// the unit-trace constraint, with linearly dependent operators pruned by
/// rank-revealing reduction at tolerance 1e-10.
///
/// Dependent constraints whose values disagree with the kept set beyond
/// 1e-8, negative entries, or a total differing from 1 beyond 1e-8 are
/// inconsistency errors.
pub fn build_constraints(
    povm_a: &PovmSet,
    povm_b: &PovmSet,
    probs: &ProbTable,
) -> Result<Vec<Constraint>, KeyRateError> {
    if probs.n_a != povm_a.n_click() || probs.n_b != povm_b.n_click() {
        return Err(KeyRateError::Input(format!(
            "probability table is {}x{}, POVMs have {}x{} click outcomes",
            probs.n_a,
            probs.n_b,
            povm_a.n_click(),
            povm_b.n_click()
        )));
    }
    if let Some(&bad) = probs.p.iter().find(|&&p| p < -1e-8) {
        return Err(KeyRateError::InconsistentProbabilities(format!(
            "negative probability {bad}"
        )));
    }
    let total = probs.total();
    if (total - 1.0).abs() > 1e-8 {
        return Err(KeyRateError::InconsistentProbabilities(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    let dim = povm_a.space_dim * povm_b.space_dim;
    let ea = povm_a.all_effects();
    let fb = povm_b.all_effects();
    let mut raw: Vec<Constraint> = Vec::with_capacity(ea.len() * fb.len() + 1);
    for (i, e) in ea.iter().enumerate() {
        for (j, f) in fb.iter().enumerate() {
            raw.push(Constraint::new(crate::qmath::tensor(e, f), probs.get(i, j))?);
        }
    }
    raw.push(Constraint::new(identity(dim), 1.0)?);
    prune_dependent(raw)
}

/// Keep a maximal linearly independent subset (Gram-Schmidt at tolerance
/// 1e-10), checking that every pruned constraint's value is implied by the
/// kept ones.
pub(crate) fn prune_dependent(raw: Vec<Constraint>) -> Result<Vec<Constraint>, KeyRateError> {
    let mut kept: Vec<Constraint> = Vec::new();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut basis_vals: Vec<f64> = Vec::new();
    for con in raw {
        let mut r = hvec(&con.op);
        let mut implied = 0.0;
        for (q, &qv) in basis.iter().zip(&basis_vals) {
            let coef: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            for (ri, qi) in r.iter_mut().zip(q) {
                *ri -= coef * qi;
            }
            implied += coef * qv;
        }
        let norm: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 {
            for ri in r.iter_mut() {
                *ri /= norm;
            }
            basis_vals.push((con.value - implied) / norm);
            basis.push(r);
            kept.push(con);
        } else if (con.value - implied).abs() > 1e-8 {
            return Err(KeyRateError::InconsistentProbabilities(format!(
                "dependent constraint value {} contradicts implied {}",
                con.value, implied
            )));
        }
    }
    Ok(kept)
}
