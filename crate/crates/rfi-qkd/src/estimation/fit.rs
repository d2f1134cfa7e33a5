//! Step 1: joint Poisson maximum-likelihood fit of the ten detector
//! efficiencies, the pair rate, the source visibility, and a nuisance phase
//! per interval, using all 24 coincidence counters and 10 singles counters
//! of every record.
//!
//! The source/detection model behind the fit is the Werner state with a
//! per-interval phase measured by ideal projectors scaled by basis
//! probability and detector efficiency — the minimal model that predicts
//! every counter. Coordinate ascent with exact 1-d coordinate maximizers
//! (multiplicative updates for the rate and efficiencies, bisection for the
//! visibility, grid + golden-section for each phase) keeps the
//! log-likelihood non-decreasing at every step.

use crate::detection::{AnalyzerSpec, CountRecord, EfficiencyMap};
use crate::estimation::EstimationError;

const ETA_FLOOR: f64 = 1e-8;

/// Which parameters to hold fixed, and the stopping rule.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub fixed_eta_alice: [Option<f64>; 6],
    pub fixed_eta_bob: [Option<f64>; 4],
    pub fixed_pair_rate: Option<f64>,
    pub fixed_visibility: Option<f64>,
    pub max_sweeps: usize,
    /// Relative log-likelihood gain below which the fit stops.
    pub rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            fixed_eta_alice: [None; 6],
            fixed_eta_bob: [None; 4],
            fixed_pair_rate: None,
            fixed_visibility: None,
            max_sweeps: 2000,
            rel_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub efficiencies: EfficiencyMap,
    pub pair_rate: f64,
    pub visibility: f64,
    pub per_interval_phase: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub sweeps: usize,
}

fn sign_of(outcome: usize) -> f64 {
    if outcome % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Joint correlation ⟨σa ⊗ σb⟩/V of the phase-rotated state for Alice basis
/// index (0 = Z, 1 = X, 2 = Y) and Bob basis index (0 = Z, 1 = X).
fn correlation(a_basis: usize, b_basis: usize, phi: f64) -> f64 {
    match (a_basis, b_basis) {
        (0, 0) => -1.0,
        (1, 1) => phi.cos(),
        (2, 1) => phi.sin(),
        _ => 0.0,
    }
}

/// Born probability of joint click outcome (i, j) on the Werner state with
/// visibility `v` and phase `phi`, for ideal projectors:
/// q = (1 + s_i s_j V corr)/4.
pub fn werner_outcome_prob(alice_outcome: usize, bob_outcome: usize, v: f64, phi: f64) -> f64 {
    let corr = correlation(alice_outcome / 2, bob_outcome / 2, phi);
    (1.0 + sign_of(alice_outcome) * sign_of(bob_outcome) * v * corr) / 4.0
}

struct FitProblem<'a> {
    recs: &'a [CountRecord],
    /// basis probability per Alice outcome
    pa: [f64; 6],
    pb: [f64; 4],
}

struct Params {
    eta_a: [f64; 6],
    eta_b: [f64; 4],
    rate: f64,
    v: f64,
    phases: Vec<f64>,
}

impl FitProblem<'_> {
    fn pairs(&self, t: usize) -> f64 {
        self.recs[t].duration
    }

    /// Predicted mean of coincidence counter (i, j) in record t.
    fn mu(&self, p: &Params, t: usize, i: usize, j: usize) -> f64 {
        p.rate
            * self.pairs(t)
            * self.pa[i]
            * p.eta_a[i]
            * self.pb[j]
            * p.eta_b[j]
            * werner_outcome_prob(i, j, p.v, p.phases[t])
    }

    fn mu_single_a(&self, p: &Params, t: usize, i: usize) -> f64 {
        p.rate * self.pairs(t) * self.pa[i] * p.eta_a[i] * 0.5
    }

    fn mu_single_b(&self, p: &Params, t: usize, j: usize) -> f64 {
        p.rate * self.pairs(t) * self.pb[j] * p.eta_b[j] * 0.5
    }

    /// Poisson log-likelihood up to the count-factorial constant.
    fn loglik(&self, p: &Params) -> f64 {
        let mut l = 0.0;
        for (t, rec) in self.recs.iter().enumerate() {
            for i in 0..6 {
                for j in 0..4 {
                    let mu = self.mu(p, t, i, j);
                    let cnt = rec.coincidences[i][j] as f64;
                    if cnt > 0.0 {
                        if mu <= 0.0 {
                            return f64::NEG_INFINITY;
                        }
                        l += cnt * mu.ln();
                    }
                    l -= mu;
                }
            }
            for i in 0..6 {
                let mu = self.mu_single_a(p, t, i);
                let cnt = rec.singles_alice[i] as f64;
                if cnt > 0.0 {
                    if mu <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    l += cnt * mu.ln();
                }
                l -= mu;
            }
            for j in 0..4 {
                let mu = self.mu_single_b(p, t, j);
                let cnt = rec.singles_bob[j] as f64;
                if cnt > 0.0 {
                    if mu <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    l += cnt * mu.ln();
                }
                l -= mu;
            }
        }
        l
    }

    /// Exact coordinate maximizer for a parameter all of whose predicted
    /// means are proportional to it: θ* = θ · Σobserved / Σpredicted.
    fn multiplicative_update(observed: f64, predicted: f64, theta: f64) -> f64 {
        if predicted <= 0.0 {
            theta
        } else {
            theta * observed / predicted
        }
    }

    fn update_eta_a(&self, p: &mut Params, i: usize) {
        let mut obs = 0.0;
        let mut pred = 0.0;
        for (t, rec) in self.recs.iter().enumerate() {
            obs += rec.singles_alice[i] as f64;
            pred += self.mu_single_a(p, t, i);
            for j in 0..4 {
                obs += rec.coincidences[i][j] as f64;
                pred += self.mu(p, t, i, j);
            }
        }
        p.eta_a[i] = Self::multiplicative_update(obs, pred, p.eta_a[i]).clamp(ETA_FLOOR, 1.0);
    }

    fn update_eta_b(&self, p: &mut Params, j: usize) {
        let mut obs = 0.0;
        let mut pred = 0.0;
        for (t, rec) in self.recs.iter().enumerate() {
            obs += rec.singles_bob[j] as f64;
            pred += self.mu_single_b(p, t, j);
            for i in 0..6 {
                obs += rec.coincidences[i][j] as f64;
                pred += self.mu(p, t, i, j);
            }
        }
        p.eta_b[j] = Self::multiplicative_update(obs, pred, p.eta_b[j]).clamp(ETA_FLOOR, 1.0);
    }

    fn update_rate(&self, p: &mut Params) {
        let mut obs = 0.0;
        let mut pred = 0.0;
        for (t, rec) in self.recs.iter().enumerate() {
            for i in 0..6 {
                for j in 0..4 {
                    obs += rec.coincidences[i][j] as f64;
                    pred += self.mu(p, t, i, j);
                }
            }
            for i in 0..6 {
                obs += rec.singles_alice[i] as f64;
                pred += self.mu_single_a(p, t, i);
            }
            for j in 0..4 {
                obs += rec.singles_bob[j] as f64;
                pred += self.mu_single_b(p, t, j);
            }
        }
        p.rate = Self::multiplicative_update(obs, pred, p.rate).max(f64::MIN_POSITIVE);
    }

    /// Move along the near-flat ridge (rate ↦ k·rate, η ↦ η/k) that leaves
    /// every singles mean invariant and scales every coincidence mean by
    /// 1/k; the exact maximizer is k = Σpredicted/Σobserved coincidences.
    /// Plain coordinate ascent crawls along this direction, so the ridge
    /// gets its own coordinate. Reverted if clamping spoils the move.
    fn update_scale(&self, p: &mut Params) {
        let mut obs = 0.0;
        let mut pred = 0.0;
        for (t, rec) in self.recs.iter().enumerate() {
            for i in 0..6 {
                for j in 0..4 {
                    obs += rec.coincidences[i][j] as f64;
                    pred += self.mu(p, t, i, j);
                }
            }
        }
        if obs <= 0.0 || pred <= 0.0 {
            return;
        }
        let k = pred / obs;
        let before = self.loglik(p);
        let saved = (p.eta_a, p.eta_b, p.rate);
        p.rate *= k;
        for e in p.eta_a.iter_mut().chain(p.eta_b.iter_mut()) {
            *e = (*e / k).clamp(ETA_FLOOR, 1.0);
        }
        if self.loglik(p) < before {
            (p.eta_a, p.eta_b, p.rate) = saved;
        }
    }

    /// Exact visibility maximizer by bisection on the (monotone decreasing)
    /// derivative of the concave 1-d log-likelihood.
    fn update_visibility(&self, p: &mut Params) {
        // per-counter: q(V) = 1/4 + V·d, weight w = rate·pairs·pa·ηa·pb·ηb
        let mut terms: Vec<(f64, f64, f64)> = Vec::new(); // (count, d, w)
        for (t, rec) in self.recs.iter().enumerate() {
            for i in 0..6 {
                for j in 0..4 {
                    let d = sign_of(i) * sign_of(j) * correlation(i / 2, j / 2, p.phases[t]) / 4.0;
                    if d == 0.0 {
                        continue;
                    }
                    let w = p.rate
                        * self.pairs(t)
                        * self.pa[i]
                        * p.eta_a[i]
                        * self.pb[j]
                        * p.eta_b[j];
                    terms.push((rec.coincidences[i][j] as f64, d, w));
                }
            }
        }
        let deriv = |v: f64| -> f64 {
            terms
                .iter()
                .map(|&(cnt, d, w)| {
                    let q = 0.25 + v * d;
                    let data_term = if cnt > 0.0 {
                        if q <= 0.0 {
                            // q can only vanish from the d < 0 side, where
                            // cnt·d/q → −∞: the data forbids this V
                            return f64::NEG_INFINITY;
                        }
                        cnt * d / q
                    } else {
                        0.0
                    };
                    data_term - w * d
                })
                .sum()
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        if deriv(lo) <= 0.0 {
            p.v = 0.0;
            return;
        }
        if deriv(hi) >= 0.0 {
            p.v = 1.0;
            return;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if deriv(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        p.v = 0.5 * (lo + hi);
    }

    /// Phase-dependent part of record t's log-likelihood: the σx/σy ⊗ σx
    /// coincidence counters.
    fn phase_loglik(&self, p: &Params, t: usize, phi: f64) -> f64 {
        let rec = &self.recs[t];
        let mut l = 0.0;
        for i in 2..6 {
            for j in 2..4 {
                let q = werner_outcome_prob(i, j, p.v, phi);
                let mu = p.rate * self.pairs(t) * self.pa[i] * p.eta_a[i] * self.pb[j] * p.eta_b[j] * q;
                let cnt = rec.coincidences[i][j] as f64;
                if cnt > 0.0 {
                    if mu <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    l += cnt * mu.ln();
                }
                l -= mu;
            }
        }
        l
    }

    fn update_phase(&self, p: &mut Params, t: usize) {
        let current = self.phase_loglik(p, t, p.phases[t]);
        // global grid scan, then golden-section refinement in the best bracket
        let n_grid = 64;
        let mut best_phi = p.phases[t];
        let mut best_l = current;
        for k in 0..n_grid {
            let phi = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / n_grid as f64;
            let l = self.phase_loglik(p, t, phi);
            if l > best_l {
                best_l = l;
                best_phi = phi;
            }
        }
        let half_step = std::f64::consts::PI / n_grid as f64;
        let (mut lo, mut hi) = (best_phi - half_step, best_phi + half_step);
        let golden = 0.5 * (5.0_f64.sqrt() - 1.0);
        let mut x1 = hi - golden * (hi - lo);
        let mut x2 = lo + golden * (hi - lo);
        let mut f1 = self.phase_loglik(p, t, x1);
        let mut f2 = self.phase_loglik(p, t, x2);
        for _ in 0..48 {
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + golden * (hi - lo);
                f2 = self.phase_loglik(p, t, x2);
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - golden * (hi - lo);
                f1 = self.phase_loglik(p, t, x1);
            }
        }
        let refined = 0.5 * (lo + hi);
        if self.phase_loglik(p, t, refined) > current {
            p.phases[t] = refined;
        } else if best_l > current {
            p.phases[t] = best_phi;
        }
    }
}

/// Crude per-record phase from the raw σxσx and σyσx expectations; `None`
/// when either block has no counts.
fn crude_phase(rec: &CountRecord) -> Option<f64> {
    let block = |a0: usize| -> Option<f64> {
        let c = &rec.coincidences;
        let (pp, pm, mp, mm) = (c[a0][2], c[a0][3], c[a0 + 1][2], c[a0 + 1][3]);
        let tot = pp + pm + mp + mm;
        if tot == 0 {
            return None;
        }
        Some((pp as f64 - pm as f64 - mp as f64 + mm as f64) / tot as f64)
    };
    let xx = block(2)?;
    let yx = block(4)?;
    Some(yx.atan2(xx))
}

fn angular_distance(a: f64, b: f64) -> f64 {
    use std::f64::consts::PI;
    ((a - b + PI).rem_euclid(2.0 * PI) - PI).abs()
}

/// Fit detector efficiencies, pair rate, visibility, and per-interval
/// nuisance phases to a set of count records by coordinate ascent on the
/// joint Poisson likelihood.
///
/// Requires at least 10 records spanning at least two distinct phases;
/// non-convergence within `max_sweeps` is reported through the `converged`
/// flag, not an error.
pub fn fit_efficiencies(
    records: &[CountRecord],
    opts: &FitOptions,
) -> Result<FitResult, EstimationError> {
    if records.len() < 10 {
        return Err(EstimationError::Identifiability(format!(
            "need at least 10 records, got {}",
            records.len()
        )));
    }
    let total: u64 = records
        .iter()
        .map(|r| r.total_coincidences() + r.singles_alice.iter().sum::<u64>() + r.singles_bob.iter().sum::<u64>())
        .sum();
    if total == 0 {
        return Err(EstimationError::Identifiability(
            "all records have zero counts".into(),
        ));
    }
    let crude: Vec<f64> = records.iter().filter_map(crude_phase).collect();
    if crude.is_empty() {
        return Err(EstimationError::Identifiability(
            "no record has phase-sensitive coincidences".into(),
        ));
    }
    let spread = crude
        .iter()
        .flat_map(|&a| crude.iter().map(move |&b| angular_distance(a, b)))
        .fold(0.0, f64::max);
    if spread < 1e-9 {
        return Err(EstimationError::Identifiability(
            "records span a single phase".into(),
        ));
    }

    let alice = AnalyzerSpec::alice();
    let bob = AnalyzerSpec::bob();
    let mut pa = [0.0; 6];
    for (i, &(b, _)) in crate::detection::ALICE_OUTCOMES.iter().enumerate() {
        pa[i] = alice.basis_prob(b).expect("default basis");
    }
    let mut pb = [0.0; 4];
    for (j, &(b, _)) in crate::detection::BOB_OUTCOMES.iter().enumerate() {
        pb[j] = bob.basis_prob(b).expect("default basis");
    }
    let problem = FitProblem { recs: records, pa, pb };

    // neutral starts: η = 0.1, rate from total coincidences, V = 0.9,
    // phases from the crude per-record estimates
    let eta0 = 0.1;
    let total_duration: f64 = records.iter().map(|r| r.duration).sum();
    let total_coinc: u64 = records.iter().map(|r| r.total_coincidences()).sum();
    let rate0 = (total_coinc as f64 / total_duration / (eta0 * eta0)).max(1.0);
    let mut params = Params {
        eta_a: [eta0; 6],
        eta_b: [eta0; 4],
        rate: opts.fixed_pair_rate.unwrap_or(rate0),
        v: opts.fixed_visibility.unwrap_or(0.9),
        phases: records
            .iter()
            .map(|r| crude_phase(r).unwrap_or(0.0))
            .collect(),
    };
    for i in 0..6 {
        if let Some(eta) = opts.fixed_eta_alice[i] {
            params.eta_a[i] = eta;
        }
    }
    for j in 0..4 {
        if let Some(eta) = opts.fixed_eta_bob[j] {
            params.eta_b[j] = eta;
        }
    }

    let mut loglik = problem.loglik(&params);
    let mut converged = false;
    let mut sweeps = 0;
    for sweep in 1..=opts.max_sweeps {
        sweeps = sweep;
        if opts.fixed_pair_rate.is_none() {
            problem.update_rate(&mut params);
        }
        for i in 0..6 {
            if opts.fixed_eta_alice[i].is_none() {
                problem.update_eta_a(&mut params, i);
            }
        }
        for j in 0..4 {
            if opts.fixed_eta_bob[j].is_none() {
                problem.update_eta_b(&mut params, j);
            }
        }
        let all_eta_free = opts.fixed_eta_alice.iter().all(Option::is_none)
            && opts.fixed_eta_bob.iter().all(Option::is_none);
        if opts.fixed_pair_rate.is_none() && all_eta_free {
            problem.update_scale(&mut params);
        }
        if opts.fixed_visibility.is_none() {
            problem.update_visibility(&mut params);
        }
        for t in 0..records.len() {
            problem.update_phase(&mut params, t);
        }
        let new_loglik = problem.loglik(&params);
        let gain = new_loglik - loglik;
        loglik = new_loglik;
        if loglik.is_finite() && gain.abs() <= opts.rel_tol * loglik.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        efficiencies: EfficiencyMap { alice: params.eta_a, bob: params.eta_b },
        pair_rate: params.rate,
        visibility: params.v,
        per_interval_phase: params.phases,
        log_likelihood: loglik,
        converged,
        sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{build_povm, coincidence_probs, sample_counts, EfficiencyMap};
    use crate::source::{PhaseTrajectory, SourceModel};
    use approx::assert_abs_diff_eq;

    /// Synthetic records from the forward model in `detection`.
    pub(crate) fn synthetic_records(
        eff: &EfficiencyMap,
        rate: f64,
        v: f64,
        n_records: usize,
        seed: u64,
    ) -> Vec<CountRecord> {
        let model = SourceModel {
            visibility: v,
            walkoff_time: 0.0,
            pump_coherence_time: 1.08e-9,
            pair_rate: rate,
            phase_trajectory: PhaseTrajectory::RandomWalk { phi0: 0.4, step_sigma: 0.15, seed },
        };
        let pa = build_povm(&AnalyzerSpec::alice(), eff, false).unwrap();
        let pb = build_povm(&AnalyzerSpec::bob(), eff, false).unwrap();
        (0..n_records)
            .map(|k| {
                let rho = model.state_at(k as f64);
                let probs = coincidence_probs(&rho, &pa, &pb).unwrap();
                sample_counts(&probs, rate, 1.0, 1e-9, k as f64, seed ^ k as u64).unwrap()
            })
            .collect()
    }

    #[test]
    fn werner_probabilities_match_born_rule() {
        // dual route: closed form vs Tr(ρ (P_i ⊗ P_j)) through the
        // detection module with unit efficiencies
        use crate::source::{apply_noise, bell_state};
        let alice = AnalyzerSpec::alice();
        let bob = AnalyzerSpec::bob();
        let pa = build_povm(&alice, &EfficiencyMap::uniform(1.0), false).unwrap();
        let pb = build_povm(&bob, &EfficiencyMap::uniform(1.0), false).unwrap();
        for &(v, phi) in &[(1.0, 0.0), (0.9, 1.3), (0.4, -2.0), (0.0, 0.7)] {
            let model = SourceModel {
                visibility: v,
                walkoff_time: 0.0,
                pump_coherence_time: 1.0,
                pair_rate: 1.0,
                phase_trajectory: PhaseTrajectory::Constant { phi0: phi },
            };
            let rho = apply_noise(&bell_state(phi), &model);
            let probs = coincidence_probs(&rho, &pa, &pb).unwrap();
            for i in 0..6 {
                for j in 0..4 {
                    let pa_prob = 1.0 / 3.0;
                    let pb_prob = 0.5;
                    let q = probs.get(i, j) / (pa_prob * pb_prob);
                    assert_abs_diff_eq!(q, werner_outcome_prob(i, j, v, phi), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_too_few_records() {
        let recs = synthetic_records(&EfficiencyMap::uniform(0.1), 1e5, 0.97, 5, 7);
        assert!(matches!(
            fit_efficiencies(&recs, &FitOptions::default()),
            Err(EstimationError::Identifiability(_))
        ));
    }

    #[test]
    fn rejects_zero_counts() {
        let rec = CountRecord {
            t_start: 0.0,
            duration: 1.0,
            slot_duration: 1e-9,
            coincidences: [[0; 4]; 6],
            singles_alice: [0; 6],
            singles_bob: [0; 4],
        };
        let recs = vec![rec; 12];
        assert!(matches!(
            fit_efficiencies(&recs, &FitOptions::default()),
            Err(EstimationError::Identifiability(_))
        ));
    }

    #[test]
    fn rejects_single_phase() {
        // identical exact-mean records: every crude phase is the same
        let mut rec = CountRecord {
            t_start: 0.0,
            duration: 1.0,
            slot_duration: 1e-9,
            coincidences: [[10; 4]; 6],
            singles_alice: [100; 6],
            singles_bob: [100; 4],
        };
        rec.coincidences[2][2] = 40;
        rec.coincidences[3][3] = 40;
        let recs = vec![rec; 12];
        assert!(matches!(
            fit_efficiencies(&recs, &FitOptions::default()),
            Err(EstimationError::Identifiability(_))
        ));
    }

    #[test]
    fn single_free_efficiency_is_recovered() {
        let mut truth = EfficiencyMap::uniform(0.09);
        truth.alice[2] = 0.063; // the one we pretend not to know
        let recs = synthetic_records(&truth, 2e5, 0.97, 12, 21);
        let mut opts = FitOptions {
            fixed_pair_rate: Some(2e5),
            fixed_visibility: Some(0.97),
            ..Default::default()
        };
        for i in 0..6 {
            opts.fixed_eta_alice[i] = Some(truth.alice[i]);
        }
        for j in 0..4 {
            opts.fixed_eta_bob[j] = Some(truth.bob[j]);
        }
        opts.fixed_eta_alice[2] = None;
        let fit = fit_efficiencies(&recs, &opts).unwrap();
        assert!(fit.converged);
        // 3σ of the Poisson-limited single-parameter estimate
        let singles_total: u64 = recs.iter().map(|r| r.singles_alice[2]).sum();
        let three_sigma = 3.0 * truth.alice[2] / (singles_total as f64).sqrt();
        assert!(
            (fit.efficiencies.alice[2] - truth.alice[2]).abs() < three_sigma,
            "recovered {} vs truth {}",
            fit.efficiencies.alice[2],
            truth.alice[2]
        );
    }

    #[test]
    fn joint_fit_recovers_all_parameters() {
        let truth = EfficiencyMap {
            alice: [0.063, 0.120, 0.081, 0.095, 0.072, 0.110],
            bob: [0.088, 0.067, 0.102, 0.079],
        };
        let rate = 2e5;
        let recs = synthetic_records(&truth, rate, 0.975, 20, 33);
        let fit = fit_efficiencies(&recs, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        for (fitted, want) in fit
            .efficiencies
            .alice
            .iter()
            .chain(fit.efficiencies.bob.iter())
            .zip(truth.alice.iter().chain(truth.bob.iter()))
        {
            assert!(
                (fitted - want).abs() < 0.005,
                "fitted {fitted} vs truth {want}"
            );
        }
        assert!((fit.pair_rate - rate).abs() / rate < 0.02);
        assert!((fit.visibility - 0.975).abs() < 0.01);
    }
}
