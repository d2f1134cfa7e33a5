//! The key-rate objective f(ρ) = D(G(ρ) ‖ Z(G(ρ))): quantum relative
//! entropy between the post-keymap (sifted) state and its key-basis pinched
//! version, in bits.
//!
//! To keep logarithms finite while preserving convexity and an exact
//! gradient, the objective is evaluated on the smoothed linear map
//! G_δ(ρ) = (1−δ)·AρA† + (δ/s)·Tr(AρA†)·I_S, where I_S = Σ pinchers and
//! s = Tr(I_S). The smoothing shifts the objective by at most
//! [`Objective::smoothing_correction_bits`], which the solver subtracts
//! from its certified bound.

use crate::detection::{Basis, PovmSet, ProbTable, Sign};
use crate::keyrate::KeyRateError;
use crate::protocol::Correlation;
use crate::qmath::{
    basis_ket, binary_entropy, c, hermitian_eigen, hermitian_function, hermitize, identity,
    CMatrix,
};

use std::f64::consts::LN_2;

/// Key-generation specification: the sifting operator applied before the
/// pinching, the key-basis pinching projectors, the error-correction
/// leakage, and the per-slot normalization.
#[derive(Debug, Clone)]
pub struct KeyMap {
    /// Sifting Kraus operator A (τ = AρA†); `None` means no post-selection.
    pub sift: Option<CMatrix>,
    /// Orthogonal projectors of the key pinching; their sum must carry the
    /// range of the sift.
    pub pinchers: Vec<CMatrix>,
    /// Error-correction leakage in bits per key-generation signal,
    /// subtracted from the certified privacy bound.
    pub ec_leak: f64,
    /// Key-generation signals per clock slot: multiplies the per-signal
    /// bound into the per-slot rate.
    pub signals_per_slot: f64,
    /// Tr(AρA†) of the observed state (1 when there is no sifting). The
    /// objective is normalized by it so the solver works in bits per
    /// key-generation signal.
    pub sift_pass_probability: f64,
}

impl KeyMap {
    /// Pinching of Alice's qubit Z basis on a joint space with local
    /// dimensions `(dim_a, dim_b)`; only the first two (photon) levels of
    /// Alice's side are key levels. No sifting, no error-correction term.
    pub fn alice_z(dim_a: usize, dim_b: usize) -> Self {
        let pinchers = (0..2)
            .map(|k| {
                let ket = basis_ket(dim_a, k);
                crate::qmath::tensor(&(&ket * ket.adjoint()), &identity(dim_b))
            })
            .collect();
        Self {
            sift: None,
            pinchers,
            ec_leak: 0.0,
            signals_per_slot: 1.0,
            sift_pass_probability: 1.0,
        }
    }

    /// Key map of the 6 state-4 state protocol: key bits come from slots in
    /// which both Alice and Bob registered a σz click. The sift operator is
    /// √(Σ E_Z±) ⊗ √(Σ F_Z±); the pinching acts on Alice's Z basis; the
    /// error-correction term is f · H2(QBER_HV) with the QBER conditioned
    /// on Z-Z coincidences.
    ///
    /// Rates are per sifted signal; `signals_per_slot` carries the sifted
    /// rate (the observed Z-Z coincidence probability per slot) so that the
    /// report's per-slot normalization comes out right.
    pub fn sifted_z(
        povm_a: &PovmSet,
        povm_b: &PovmSet,
        probs: &ProbTable,
        convention: Correlation,
        error_correction_f: f64,
    ) -> Result<Self, KeyRateError> {
        let za = z_click_indices(povm_a)?;
        let zb = z_click_indices(povm_b)?;
        let sift_a = sqrt_sum(povm_a, &za);
        let sift_b = sqrt_sum(povm_b, &zb);
        let sift = crate::qmath::tensor(&sift_a, &sift_b);

        // conditional Z-Z statistics from the observation table
        let p = |s: usize, t: usize| probs.get(za[s], zb[t]);
        let p_pass = p(0, 0) + p(0, 1) + p(1, 0) + p(1, 1);
        if p_pass <= 0.0 {
            return Err(KeyRateError::Input(
                "no Z-Z coincidence probability; key map undefined".into(),
            ));
        }
        let agree = (p(0, 0) + p(1, 1)) / p_pass;
        let qber_hv = match convention {
            Correlation::Anticorrelated => agree,
            Correlation::Correlated => 1.0 - agree,
        };
        let ec_leak =
            error_correction_f * binary_entropy(qber_hv.clamp(0.0, 1.0)).expect("clamped");

        let mut km = Self::alice_z(povm_a.space_dim, povm_b.space_dim);
        km.sift = Some(sift);
        km.ec_leak = ec_leak;
        km.signals_per_slot = p_pass;
        km.sift_pass_probability = p_pass;
        Ok(km)
    }
}

fn z_click_indices(povm: &PovmSet) -> Result<[usize; 2], KeyRateError> {
    let find = |sign: Sign| {
        povm.outcomes
            .iter()
            .position(|&o| o == (Basis::Z, sign))
            .ok_or_else(|| KeyRateError::Input("POVM has no Z outcomes".into()))
    };
    Ok([find(Sign::Plus)?, find(Sign::Minus)?])
}

fn sqrt_sum(povm: &PovmSet, indices: &[usize; 2]) -> CMatrix {
    let sum = &povm.effects[indices[0]] + &povm.effects[indices[1]];
    hermitian_function(&sum, |l| l.max(0.0).sqrt())
}

/// Evaluator for f_δ and its exact gradient, normalized to bits per
/// key-generation signal (the sift operator is divided by
/// √sift_pass_probability so the conditioned trace is of order one and the
/// solver's tolerances act on the physically meaningful scale).
pub(crate) struct Objective {
    sift: Option<CMatrix>,
    sift_adj: Option<CMatrix>,
    sift_gram: CMatrix,
    pinchers: Vec<CMatrix>,
    support: CMatrix,
    support_dim: f64,
    delta: f64,
    dim: usize,
}

impl Objective {
    pub fn new(keymap: &KeyMap, dim: usize, delta: f64) -> Result<Self, KeyRateError> {
        if keymap.pinchers.is_empty() {
            return Err(KeyRateError::Input("key map has no pinching projectors".into()));
        }
        for p in &keymap.pinchers {
            if p.nrows() != dim || p.ncols() != dim {
                return Err(KeyRateError::Input("pinching projector dimension mismatch".into()));
            }
        }
        let mut support = CMatrix::zeros(dim, dim);
        for p in &keymap.pinchers {
            support += p;
        }
        let support_dim = support.trace().re;
        if !(keymap.sift_pass_probability > 0.0) {
            return Err(KeyRateError::Input(
                "sift pass probability must be positive".into(),
            ));
        }
        let scale = c(1.0 / keymap.sift_pass_probability.sqrt(), 0.0);
        let (sift, sift_adj, sift_gram) = match &keymap.sift {
            Some(a) => {
                if a.nrows() != dim || a.ncols() != dim {
                    return Err(KeyRateError::Input("sift operator dimension mismatch".into()));
                }
                let a = a * scale;
                let adj = a.adjoint();
                let gram = &adj * &a;
                (Some(a), Some(adj), gram)
            }
            None => {
                if (keymap.sift_pass_probability - 1.0).abs() > 1e-12 {
                    let a = identity(dim) * scale;
                    let gram = &a * &a;
                    (Some(a.clone()), Some(a), gram)
                } else {
                    (None, None, identity(dim))
                }
            }
        };
        Ok(Self {
            sift,
            sift_adj,
            sift_gram,
            pinchers: keymap.pinchers.clone(),
            support,
            support_dim,
            delta,
            dim,
        })
    }

    fn tau(&self, rho: &CMatrix) -> CMatrix {
        match (&self.sift, &self.sift_adj) {
            (Some(a), Some(adj)) => hermitize(&(a * rho * adj)),
            _ => hermitize(rho),
        }
    }

    fn pinch(&self, m: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, self.dim);
        for p in &self.pinchers {
            out += p * m * p;
        }
        out
    }

    /// Smoothed sifted state and its trace: τ_δ/p with p = Tr(AρA†).
    fn normalized_tau_delta(&self, rho: &CMatrix) -> Option<(CMatrix, f64)> {
        let tau = self.tau(rho);
        let p = tau.trace().re;
        if p < 1e-300 {
            return None;
        }
        let d = self.delta;
        let t = tau * c((1.0 - d) / p, 0.0) + &self.support * c(d / self.support_dim, 0.0);
        Some((t, p))
    }

    /// ln of a PSD matrix supported (up to smoothing) on I_S; directions
    /// with eigenvalue below the smoothing floor are exact zeros of the
    /// sifted algebra and get ln := 0, which the A†·A sandwich annihilates.
    fn log_on_support(&self, m: &CMatrix) -> CMatrix {
        let floor = self.delta / (4.0 * self.support_dim);
        hermitian_function(m, |l| if l > floor { l.ln() } else { 0.0 })
    }

    /// f_δ(ρ) in bits.
    pub fn value_bits(&self, rho: &CMatrix) -> f64 {
        let Some((t, p)) = self.normalized_tau_delta(rho) else {
            return 0.0;
        };
        let z = self.pinch(&t);
        let floor = self.delta / (4.0 * self.support_dim);
        let (tvals, _) = hermitian_eigen(&t);
        let s_tau: f64 = tvals.iter().filter(|&&l| l > floor).map(|&l| l * l.ln()).sum();
        let log_z = self.log_on_support(&z);
        let cross = trace_product(&t, &log_z);
        p * (s_tau - cross) / LN_2
    }

    /// Exact gradient of f_δ in bits:
    /// ∇ = (1−δ)·A†GA + (δ/s)·Tr(I_S G)·A†A, G = ln τ̂_δ − ln Z(τ̂_δ).
    pub fn gradient_bits(&self, rho: &CMatrix) -> CMatrix {
        let Some((t, _)) = self.normalized_tau_delta(rho) else {
            return CMatrix::zeros(self.dim, self.dim);
        };
        let z = self.pinch(&t);
        let g = self.log_on_support(&t) - self.log_on_support(&z);
        let sandwiched = match (&self.sift, &self.sift_adj) {
            (Some(a), Some(adj)) => adj * &g * a,
            _ => g.clone(),
        };
        let trace_part = trace_product(&self.support, &g);
        let grad = sandwiched * c((1.0 - self.delta) / LN_2, 0.0)
            + &self.sift_gram * c(self.delta * trace_part / (self.support_dim * LN_2), 0.0);
        hermitize(&grad)
    }

    /// Conservative bound on |f_δ − f| over states, in bits; subtracted
    /// from the certified lower bound.
    pub fn smoothing_correction_bits(&self) -> f64 {
        let d = self.delta;
        let s = self.support_dim;
        8.0 * d * ((d / s).ln().abs() + s) / LN_2
    }
}

fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}
