//! The analytical key-rate pipeline: expectation values from coincidence
//! counts, the phase-independent channel parameter C, the QBERs, a phase
//! estimate, and the asymptotic analytic key rate, all with first-order
//! propagation of Poissonian counting errors.

use thiserror::Error;

use crate::detection::CountRecord;
use crate::qmath::binary_entropy;

/// Basis reconciliation factor q for the 6 state-4 state protocol: both
/// parties choose the key-generating σz basis with probability (1/3)(1/2).
pub const DEFAULT_Q: f64 = 1.0 / 6.0;
/// Error correction at the Shannon limit.
pub const DEFAULT_F: f64 = 1.0;
/// Below this C magnitude the relative phase is considered undefined.
pub const PHASE_C_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("all four coincidence counters are zero; expectation undefined")]
    AllZeroCounts,
    #[error("C = {0:.4} too small to estimate a phase (threshold {PHASE_C_THRESHOLD})")]
    PhaseUndefined(f64),
}

/// A value with its first-order propagated standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measured {
    pub value: f64,
    pub sigma: f64,
}

impl Measured {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }
}

/// Whether the Z outcomes of a perfect state agree (Φ-type) or disagree
/// (Ψ-type, the delivered |HV⟩ + e^{iφ}|VH⟩ state).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correlation {
    Correlated,
    Anticorrelated,
}

impl Correlation {
    fn sign(self) -> f64 {
        match self {
            Correlation::Correlated => 1.0,
            Correlation::Anticorrelated => -1.0,
        }
    }
}

/// Expectation value (M++ − M+− − M−+ + M−−)/ΣM with the Poisson error of
/// each counter propagated to first order.
///
/// Counter order: (M++, M+−, M−+, M−−).
pub fn expectation(counts: [u64; 4]) -> Result<Measured, ProtocolError> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(ProtocolError::AllZeroCounts);
    }
    let total = total as f64;
    let signs = [1.0, -1.0, -1.0, 1.0];
    let value = counts
        .iter()
        .zip(signs)
        .map(|(&m, s)| s * m as f64)
        .sum::<f64>()
        / total;
    // σ² = Σ (∂f/∂M_k)² Var(M_k) with Var(M_k) = M_k
    let var: f64 = counts
        .iter()
        .zip(signs)
        .map(|(&m, s)| {
            let d = (s - value) / total;
            d * d * m as f64
        })
        .sum();
    Ok(Measured::new(value, var.sqrt()))
}

/// The phase-independent channel parameter C = √(⟨σxσx⟩² + ⟨σyσx⟩²).
///
/// Near C = 0 the propagation formula degenerates; the error falls back to
/// the larger component uncertainty.
pub fn compute_c(exp_xx: Measured, exp_yx: Measured) -> Measured {
    let c = exp_xx.value.hypot(exp_yx.value);
    let sigma = if c > 1e-9 {
        ((exp_xx.value * exp_xx.sigma).powi(2) + (exp_yx.value * exp_yx.sigma).powi(2)).sqrt() / c
    } else {
        exp_xx.sigma.max(exp_yx.sigma)
    };
    Measured::new(c, sigma)
}

/// QBER_HV = (1 − s·⟨σzσz⟩)/2 and QBER*_Diag = (1 − C)/2, both clamped to
/// [0, 1]. `s` is +1 for the correlated convention and −1 for the
/// anticorrelated one (Bob's Z bit flipped before comparison).
pub fn compute_qbers(
    exp_zz: Measured,
    c: Measured,
    convention: Correlation,
) -> (Measured, Measured) {
    let s = convention.sign();
    let hv = ((1.0 - s * exp_zz.value) / 2.0).clamp(0.0, 1.0);
    let diag = ((1.0 - c.value) / 2.0).clamp(0.0, 1.0);
    (
        Measured::new(hv, exp_zz.sigma / 2.0),
        Measured::new(diag, c.sigma / 2.0),
    )
}

/// Relative phase from the two phase-sensitive expectation values, as the
/// two-argument arctangent of (⟨σyσx⟩, ⟨σxσx⟩), in (−π, π].
pub fn estimate_phase(exp_xx: f64, exp_yx: f64) -> Result<f64, ProtocolError> {
    let c = exp_xx.hypot(exp_yx);
    if c <= PHASE_C_THRESHOLD {
        return Err(ProtocolError::PhaseUndefined(c));
    }
    Ok(exp_yx.atan2(exp_xx))
}

/// Continue a wrapped phase sequence across branch cuts: each step takes the
/// branch nearest the previous value, so |step| ≤ π.
pub fn unwrap_phases(phases: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phases.len());
    let mut prev: Option<f64> = None;
    for &p in phases {
        let v = match prev {
            None => p,
            Some(q) => q + wrap_to_pi(p - q),
        };
        out.push(v);
        prev = Some(v);
    }
    out
}

fn wrap_to_pi(x: f64) -> f64 {
    use std::f64::consts::PI;
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// Asymptotic analytic key rate per clock slot:
/// K = max(0, q·R·(1 − f·H2(QBER_HV) − H2(QBER*_Diag))),
/// with R the coincidence rate in coincidences/slot.
pub fn analytic_key_rate(qber_hv: f64, qber_diag_star: f64, r: f64, q: f64, f: f64) -> f64 {
    let h_hv = binary_entropy(qber_hv.clamp(0.0, 1.0)).expect("clamped");
    let h_diag = binary_entropy(qber_diag_star.clamp(0.0, 1.0)).expect("clamped");
    (q * r * (1.0 - f * h_hv - h_diag)).max(0.0)
}

/// d/dx H2(x) = log2((1−x)/x), clamped away from the endpoints where the
/// derivative diverges.
fn h2_prime(x: f64) -> f64 {
    let x = x.clamp(1e-9, 1.0 - 1e-9);
    ((1.0 - x) / x).log2()
}

/// First-order uncertainty of the analytic key rate from the QBER and rate
/// uncertainties.
pub fn analytic_key_rate_sigma(
    qber_hv: Measured,
    qber_diag_star: Measured,
    r: Measured,
    q: f64,
    f: f64,
) -> f64 {
    let h_hv = binary_entropy(qber_hv.value.clamp(0.0, 1.0)).expect("clamped");
    let h_diag = binary_entropy(qber_diag_star.value.clamp(0.0, 1.0)).expect("clamped");
    let bracket = 1.0 - f * h_hv - h_diag;
    let dr = q * bracket * r.sigma;
    let dhv = q * r.value * f * h2_prime(qber_hv.value) * qber_hv.sigma;
    let ddiag = q * r.value * h2_prime(qber_diag_star.value) * qber_diag_star.sigma;
    (dr * dr + dhv * dhv + ddiag * ddiag).sqrt()
}

/// Per-interval output of the analytic pipeline.
#[derive(Debug, Clone)]
pub struct ProtocolEstimates {
    pub t_start: f64,
    pub exp_zz: Measured,
    pub exp_xx: Measured,
    pub exp_yx: Measured,
    pub c: Measured,
    /// Unwrapped phase estimate; `None` when C is below the threshold.
    pub phi_est: Option<f64>,
    pub qber_hv: Measured,
    pub qber_diag_star: Measured,
    pub total_coincidences: u64,
    /// Coincidences per clock slot.
    pub rate_per_slot: Measured,
    pub key_rate_per_slot: Measured,
    pub key_rate_per_second: f64,
}

impl ProtocolEstimates {
    pub fn qber_total(&self) -> Measured {
        Measured::new(
            self.qber_hv.value + self.qber_diag_star.value,
            (self.qber_hv.sigma.powi(2) + self.qber_diag_star.sigma.powi(2)).sqrt(),
        )
    }
}

/// Coincidence counters of one measured basis pair, in
/// (M++, M+−, M−+, M−−) order.
fn block(rec: &CountRecord, a0: usize, b0: usize) -> [u64; 4] {
    [
        rec.coincidences[a0][b0],
        rec.coincidences[a0][b0 + 1],
        rec.coincidences[a0 + 1][b0],
        rec.coincidences[a0 + 1][b0 + 1],
    ]
}

/// Run the analytic pipeline on a single integration interval.
///
/// The phase is the principal-value estimate; [`estimate_run`] unwraps it
/// across intervals.
pub fn estimate_interval(
    rec: &CountRecord,
    convention: Correlation,
) -> Result<ProtocolEstimates, ProtocolError> {
    let exp_zz = expectation(block(rec, 0, 0))?;
    let exp_xx = expectation(block(rec, 2, 2))?;
    let exp_yx = expectation(block(rec, 4, 2))?;
    let c = compute_c(exp_xx, exp_yx);
    let (qber_hv, qber_diag_star) = compute_qbers(exp_zz, c, convention);
    let phi_est = estimate_phase(exp_xx.value, exp_yx.value).ok();

    let slots = rec.slots() as f64;
    let total = rec.total_coincidences();
    let rate_per_slot = Measured::new(total as f64 / slots, (total as f64).sqrt() / slots);
    let key_slot = analytic_key_rate(
        qber_hv.value,
        qber_diag_star.value,
        rate_per_slot.value,
        DEFAULT_Q,
        DEFAULT_F,
    );
    let key_sigma =
        analytic_key_rate_sigma(qber_hv, qber_diag_star, rate_per_slot, DEFAULT_Q, DEFAULT_F);
    Ok(ProtocolEstimates {
        t_start: rec.t_start,
        exp_zz,
        exp_xx,
        exp_yx,
        c,
        phi_est,
        qber_hv,
        qber_diag_star,
        total_coincidences: total,
        rate_per_slot,
        key_rate_per_slot: Measured::new(key_slot, key_sigma),
        key_rate_per_second: key_slot / rec.slot_duration,
    })
}

/// Analytic pipeline over a time-ordered run. Intervals with an undefined
/// expectation (all-zero counters in some basis pair) are skipped and appear
/// as `None`; phases are unwrapped across the surviving intervals.
pub fn estimate_run(
    records: &[CountRecord],
    convention: Correlation,
) -> Vec<Option<ProtocolEstimates>> {
    let mut out: Vec<Option<ProtocolEstimates>> = records
        .iter()
        .map(|r| estimate_interval(r, convention).ok())
        .collect();
    // unwrap phases over the intervals that produced one
    let mut prev: Option<f64> = None;
    for est in out.iter_mut().flatten() {
        if let Some(p) = est.phi_est {
            let unwrapped = match prev {
                None => p,
                Some(q) => q + wrap_to_pi(p - q),
            };
            est.phi_est = Some(unwrapped);
            prev = Some(unwrapped);
        }
    }
    out
}

/// Infinite-data limit of the analytic pipeline evaluated on exact outcome
/// probabilities (typically predicted from a reconstructed state through
/// the detection model), rather than on sampled counts.
#[derive(Debug, Clone)]
pub struct AnalyticOnProbs {
    pub exp_zz: f64,
    pub exp_xx: f64,
    pub exp_yx: f64,
    pub c: f64,
    pub qber_hv: f64,
    pub qber_diag_star: f64,
    /// 1 − f·H2(QBER_HV) − H2(QBER*_Diag): bits per sifted coincidence.
    pub bits_per_sifted: f64,
    /// Sum of all 24 click-click probabilities (the coincidence rate in
    /// whatever normalization the table carries).
    pub coincidence_prob: f64,
}

/// Run the expectation/C/QBER/key-rate chain on a 6×4 probability table.
pub fn analytic_on_probs(
    probs: &crate::detection::ProbTable,
    convention: Correlation,
    f: f64,
) -> Result<AnalyticOnProbs, ProtocolError> {
    if probs.n_a != 6 || probs.n_b != 4 {
        return Err(ProtocolError::AllZeroCounts);
    }
    let block = |a0: usize, b0: usize| -> Result<f64, ProtocolError> {
        let (pp, pm, mp, mm) = (
            probs.get(a0, b0),
            probs.get(a0, b0 + 1),
            probs.get(a0 + 1, b0),
            probs.get(a0 + 1, b0 + 1),
        );
        let tot = pp + pm + mp + mm;
        if tot <= 0.0 {
            return Err(ProtocolError::AllZeroCounts);
        }
        Ok((pp - pm - mp + mm) / tot)
    };
    let exp_zz = block(0, 0)?;
    let exp_xx = block(2, 2)?;
    let exp_yx = block(4, 2)?;
    let c = exp_xx.hypot(exp_yx);
    let s = convention.sign();
    let qber_hv = ((1.0 - s * exp_zz) / 2.0).clamp(0.0, 1.0);
    let qber_diag_star = ((1.0 - c) / 2.0).clamp(0.0, 1.0);
    let bits_per_sifted = 1.0
        - f * binary_entropy(qber_hv).expect("clamped")
        - binary_entropy(qber_diag_star).expect("clamped");
    Ok(AnalyticOnProbs {
        exp_zz,
        exp_xx,
        exp_yx,
        c,
        qber_hv,
        qber_diag_star,
        bits_per_sifted,
        coincidence_prob: probs.click_click_total(),
    })
}

/// Run averages in the style of the experiment's figure captions.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub n_intervals: usize,
    pub n_used: usize,
    pub mean_c: Measured,
    pub mean_qber_hv: Measured,
    pub mean_qber_diag_star: Measured,
    pub mean_qber_total: Measured,
    pub mean_key_rate_per_slot: Measured,
    pub mean_key_rate_per_second: f64,
}

/// Average the per-interval estimates; uncertainties combine as
/// √(Σσ²)/n (independent intervals).
pub fn summarize(estimates: &[Option<ProtocolEstimates>]) -> Option<RunSummary> {
    let used: Vec<&ProtocolEstimates> = estimates.iter().flatten().collect();
    if used.is_empty() {
        return None;
    }
    let n = used.len() as f64;
    let mean = |f: &dyn Fn(&ProtocolEstimates) -> Measured| -> Measured {
        let value = used.iter().map(|e| f(e).value).sum::<f64>() / n;
        let var = used.iter().map(|e| f(e).sigma.powi(2)).sum::<f64>() / (n * n);
        Measured::new(value, var.sqrt())
    };
    Some(RunSummary {
        n_intervals: estimates.len(),
        n_used: used.len(),
        mean_c: mean(&|e| e.c),
        mean_qber_hv: mean(&|e| e.qber_hv),
        mean_qber_diag_star: mean(&|e| e.qber_diag_star),
        mean_qber_total: mean(&|e| e.qber_total()),
        mean_key_rate_per_slot: mean(&|e| e.key_rate_per_slot),
        mean_key_rate_per_second: used.iter().map(|e| e.key_rate_per_second).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn expectation_arithmetic() {
        assert_abs_diff_eq!(expectation([30, 10, 10, 30]).unwrap().value, 0.5, epsilon = 1e-15);
        for n in [1u64, 17, 100_000] {
            assert_abs_diff_eq!(expectation([n, 0, 0, n]).unwrap().value, 1.0, epsilon = 1e-15);
        }
        // closed-form propagation: σ² = Σ(∂f/∂M)² M = 4·(1/100)²·25 = 0.01
        let m = expectation([25, 25, 25, 25]).unwrap();
        assert_abs_diff_eq!(m.value, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.sigma, 0.1, epsilon = 1e-12);
        assert!(matches!(expectation([0, 0, 0, 0]), Err(ProtocolError::AllZeroCounts)));
    }

    #[test]
    fn c_parameter_from_phase_components() {
        for k in 0..32 {
            let phi = 2.0 * PI * k as f64 / 32.0;
            let c = compute_c(
                Measured::new(phi.cos(), 0.01),
                Measured::new(phi.sin(), 0.01),
            );
            assert_abs_diff_eq!(c.value, 1.0, epsilon = 1e-12);
        }
        let zero = compute_c(Measured::new(0.0, 0.02), Measured::new(0.0, 0.01));
        assert_eq!(zero.value, 0.0);
        assert_eq!(zero.sigma, 0.02);
    }

    #[test]
    fn c_recovers_werner_visibility() {
        // brute-force expectations on the Werner state via the source model
        use crate::source::{apply_noise, bell_state, protocol_expectations, SourceModel};
        let mut model = SourceModel::scenario_a(1);
        model.walkoff_time = 0.0;
        for v in [0.3, 0.7, 0.978] {
            model.visibility = v;
            let rho = apply_noise(&bell_state(2.2), &model);
            let (xx, yx, _) = protocol_expectations(&rho);
            let c = compute_c(Measured::new(xx, 0.0), Measured::new(yx, 0.0));
            assert_abs_diff_eq!(c.value, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn qber_conventions() {
        // ideal anticorrelated state: ⟨σzσz⟩ = −1, C = 1
        let zz = Measured::new(-1.0, 0.02);
        let c = Measured::new(1.0, 0.04);
        let (hv, diag) = compute_qbers(zz, c, Correlation::Anticorrelated);
        assert_abs_diff_eq!(hv.value, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(diag.value, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hv.sigma, 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(diag.sigma, 0.02, epsilon = 1e-15);
        // the correlated convention sees the same state as fully erroneous
        let (hv, _) = compute_qbers(zz, c, Correlation::Correlated);
        assert_abs_diff_eq!(hv.value, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn phase_estimation_and_inversion() {
        assert_abs_diff_eq!(estimate_phase(1.0, 0.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(estimate_phase(0.0, 1.0).unwrap(), PI / 2.0, epsilon = 1e-15);
        // forward simulation then inversion
        let (xx, yx, _) = crate::source::protocol_expectations(&crate::source::bell_state(2.0));
        assert_abs_diff_eq!(estimate_phase(xx, yx).unwrap(), 2.0, epsilon = 1e-9);
        assert!(matches!(
            estimate_phase(0.01, 0.01),
            Err(ProtocolError::PhaseUndefined(_))
        ));
    }

    #[test]
    fn phase_unwrapping_continues_across_branch_cut() {
        let wrapped: Vec<f64> = (0..40).map(|k| {
            let true_phi = 0.2 * k as f64;
            (true_phi + PI).rem_euclid(2.0 * PI) - PI
        }).collect();
        let unwrapped = unwrap_phases(&wrapped);
        for (k, &p) in unwrapped.iter().enumerate() {
            assert_abs_diff_eq!(p, 0.2 * k as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn key_rate_limits() {
        // theoretical limit of the system: q·R·1 at R = 1
        assert_abs_diff_eq!(
            analytic_key_rate(0.0, 0.0, 1.0, DEFAULT_Q, DEFAULT_F),
            1.0 / 6.0,
            epsilon = 1e-12
        );
        // entropy saturation clamps to zero
        assert_eq!(analytic_key_rate(0.5, 0.0, 1.0, DEFAULT_Q, DEFAULT_F), 0.0);
        // bracketing the usual security threshold
        assert_eq!(analytic_key_rate(0.5, 0.5, 1.0, DEFAULT_Q, DEFAULT_F), 0.0);
        assert!(analytic_key_rate(0.02, 0.011, 1.0, DEFAULT_Q, DEFAULT_F) > 0.0);
    }

    #[test]
    fn key_rate_monotone_in_each_qber() {
        let mut prev = f64::INFINITY;
        let mut q = 0.0;
        while q <= 0.5 + 1e-12 {
            let k = analytic_key_rate(q, 0.05, 1.0, DEFAULT_Q, DEFAULT_F);
            assert!(k <= prev + 1e-12, "not monotone at qber_hv={q}");
            prev = k;
            q += 1e-3;
        }
        prev = f64::INFINITY;
        q = 0.0;
        while q <= 0.5 + 1e-12 {
            let k = analytic_key_rate(0.05, q, 1.0, DEFAULT_Q, DEFAULT_F);
            assert!(k <= prev + 1e-12, "not monotone at qber_diag={q}");
            prev = k;
            q += 1e-3;
        }
    }

    #[test]
    fn interval_pipeline_on_simulated_counts() {
        use crate::detection::{build_povm, coincidence_probs, sample_counts, AnalyzerSpec, EfficiencyMap};
        use crate::source::SourceModel;
        let model = SourceModel::scenario_a(3);
        let eff = EfficiencyMap::uniform(0.1);
        let pa = build_povm(&AnalyzerSpec::alice(), &eff, false).unwrap();
        let pb = build_povm(&AnalyzerSpec::bob(), &eff, false).unwrap();
        let records: Vec<_> = (0..5)
            .map(|k| {
                let rho = model.state_at(k as f64);
                let probs = coincidence_probs(&rho, &pa, &pb).unwrap();
                sample_counts(&probs, model.pair_rate, 1.0, 1e-9, k as f64, 1000 + k).unwrap()
            })
            .collect();
        let ests = estimate_run(&records, Correlation::Anticorrelated);
        assert_eq!(ests.len(), 5);
        for est in ests.iter().flatten() {
            assert!((est.c.value - 0.978).abs() < 0.05);
            assert!(est.qber_hv.value < 0.05);
            assert!(est.key_rate_per_slot.value > 0.0);
            assert!(est.phi_est.is_some());
        }
        let summary = summarize(&ests).unwrap();
        assert_eq!(summary.n_used, 5);
        assert!(summary.mean_key_rate_per_second > 0.0);
    }

    #[test]
    fn zero_count_interval_is_skipped_not_poisoned() {
        let rec = CountRecord {
            t_start: 0.0,
            duration: 1.0,
            slot_duration: 1e-9,
            coincidences: [[0; 4]; 6],
            singles_alice: [0; 6],
            singles_bob: [0; 4],
        };
        let ests = estimate_run(&[rec], Correlation::Anticorrelated);
        assert_eq!(ests.len(), 1);
        assert!(ests[0].is_none());
        assert!(summarize(&ests).is_none());
    }
}
