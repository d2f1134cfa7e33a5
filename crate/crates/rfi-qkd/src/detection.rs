//! Analyzer POVMs with per-detector efficiencies, coincidence probabilities,
//! and Poissonian count sampling on the 1 ns slot clock.
//!
//! Alice's default analyzer measures σz, σx, σy (six click outcomes), Bob's
//! measures σz, σx (four). Each click effect is basis_prob · η · |b,s⟩⟨b,s|;
//! the no-click effect completes the set to the identity. With
//! `embed_vacuum` the operators act on a qutrit whose third level is the
//! vacuum (no photon in the slot), on which only the no-click effect acts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qmath::{c, identity, tensor, CMatrix, CVector, DensityMatrix};

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("efficiency {value} for {label} outside [0, 1]")]
    EfficiencyOutOfRange { label: String, value: f64 },
    #[error("basis probabilities {0:?} do not sum to 1")]
    BasisProbs(Vec<f64>),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("pair rate {rate}/s exceeds one pair per {slot_duration} s slot")]
    Saturation { rate: f64, slot_duration: f64 },
    #[error("no known efficiency for {0}")]
    UnknownDetector(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Alice,
    Bob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
    Y,
}

impl Basis {
    pub fn letter(self) -> char {
        match self {
            Basis::Z => 'Z',
            Basis::X => 'X',
            Basis::Y => 'Y',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn letter(self) -> char {
        match self {
            Sign::Plus => 'p',
            Sign::Minus => 'm',
        }
    }
}

/// Alice's click outcomes in canonical storage/CSV order.
pub const ALICE_OUTCOMES: [(Basis, Sign); 6] = [
    (Basis::Z, Sign::Plus),
    (Basis::Z, Sign::Minus),
    (Basis::X, Sign::Plus),
    (Basis::X, Sign::Minus),
    (Basis::Y, Sign::Plus),
    (Basis::Y, Sign::Minus),
];

/// Bob's click outcomes in canonical storage/CSV order.
pub const BOB_OUTCOMES: [(Basis, Sign); 4] = [
    (Basis::Z, Sign::Plus),
    (Basis::Z, Sign::Minus),
    (Basis::X, Sign::Plus),
    (Basis::X, Sign::Minus),
];

/// Single-qubit projector |b, s⟩⟨b, s| for eigenvalue +1 (`Plus`) or −1.
pub fn basis_projector(basis: Basis, sign: Sign) -> CMatrix {
    let s = 1.0 / 2.0_f64.sqrt();
    let ket: CVector = match (basis, sign) {
        (Basis::Z, Sign::Plus) => CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]),
        (Basis::Z, Sign::Minus) => CVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0)]),
        (Basis::X, Sign::Plus) => CVector::from_vec(vec![c(s, 0.0), c(s, 0.0)]),
        (Basis::X, Sign::Minus) => CVector::from_vec(vec![c(s, 0.0), c(-s, 0.0)]),
        (Basis::Y, Sign::Plus) => CVector::from_vec(vec![c(s, 0.0), c(0.0, s)]),
        (Basis::Y, Sign::Minus) => CVector::from_vec(vec![c(s, 0.0), c(0.0, -s)]),
    };
    &ket * ket.adjoint()
}

/// Which bases a receiver measures and with what probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerSpec {
    pub side: Side,
    pub bases: Vec<Basis>,
    pub basis_probs: Vec<f64>,
}

impl AnalyzerSpec {
    pub fn new(side: Side, bases: Vec<Basis>, basis_probs: Vec<f64>) -> Result<Self, DetectionError> {
        let sum: f64 = basis_probs.iter().sum();
        if bases.len() != basis_probs.len()
            || basis_probs.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(DetectionError::BasisProbs(basis_probs));
        }
        Ok(Self { side, bases, basis_probs })
    }

    /// Six-state analyzer: σz, σx, σy with probability 1/3 each.
    pub fn alice() -> Self {
        Self {
            side: Side::Alice,
            bases: vec![Basis::Z, Basis::X, Basis::Y],
            basis_probs: vec![1.0 / 3.0; 3],
        }
    }

    /// Four-state analyzer: σz, σx with probability 1/2 each.
    pub fn bob() -> Self {
        Self {
            side: Side::Bob,
            bases: vec![Basis::Z, Basis::X],
            basis_probs: vec![0.5; 2],
        }
    }

    /// Click outcomes in order: for each basis, + then −.
    pub fn outcomes(&self) -> Vec<(Basis, Sign)> {
        self.bases
            .iter()
            .flat_map(|&b| [(b, Sign::Plus), (b, Sign::Minus)])
            .collect()
    }

    pub fn basis_prob(&self, basis: Basis) -> Option<f64> {
        self.bases
            .iter()
            .position(|&b| b == basis)
            .map(|i| self.basis_probs[i])
    }
}

/// Per-detector efficiencies for the ten physical detectors
/// (6 on Alice's side, 4 on Bob's), each in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyMap {
    /// Indexed by [`ALICE_OUTCOMES`] order.
    pub alice: [f64; 6],
    /// Indexed by [`BOB_OUTCOMES`] order.
    pub bob: [f64; 4],
}

impl EfficiencyMap {
    pub fn uniform(eta: f64) -> Self {
        Self { alice: [eta; 6], bob: [eta; 4] }
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        for (label, value) in self.named_entries() {
            if !(0.0..=1.0).contains(&value) {
                return Err(DetectionError::EfficiencyOutOfRange { label, value });
            }
        }
        Ok(())
    }

    pub fn get(&self, side: Side, basis: Basis, sign: Sign) -> Result<f64, DetectionError> {
        match side {
            Side::Alice => ALICE_OUTCOMES
                .iter()
                .position(|&o| o == (basis, sign))
                .map(|i| self.alice[i]),
            Side::Bob => BOB_OUTCOMES
                .iter()
                .position(|&o| o == (basis, sign))
                .map(|i| self.bob[i]),
        }
        .ok_or_else(|| {
            DetectionError::UnknownDetector(detector_label(side, basis, sign))
        })
    }

    /// ("A_Zp", η) style pairs in canonical order, for serialization.
    pub fn named_entries(&self) -> Vec<(String, f64)> {
        let mut out = Vec::with_capacity(10);
        for (i, &(b, s)) in ALICE_OUTCOMES.iter().enumerate() {
            out.push((detector_label(Side::Alice, b, s), self.alice[i]));
        }
        for (i, &(b, s)) in BOB_OUTCOMES.iter().enumerate() {
            out.push((detector_label(Side::Bob, b, s), self.bob[i]));
        }
        out
    }
}

pub fn detector_label(side: Side, basis: Basis, sign: Sign) -> String {
    let side_ch = match side {
        Side::Alice => 'A',
        Side::Bob => 'B',
    };
    format!("{}_{}{}", side_ch, basis.letter(), sign.letter())
}

/// A labeled positive-operator valued measure: one effect per click outcome
/// plus the completing no-click effect.
#[derive(Debug, Clone)]
pub struct PovmSet {
    /// 2 for a bare qubit, 3 with the vacuum level appended.
    pub space_dim: usize,
    pub outcomes: Vec<(Basis, Sign)>,
    pub effects: Vec<CMatrix>,
    pub no_click: CMatrix,
}

impl PovmSet {
    pub fn n_click(&self) -> usize {
        self.effects.len()
    }

    /// Click effects followed by the no-click effect.
    pub fn all_effects(&self) -> Vec<&CMatrix> {
        self.effects.iter().chain(std::iter::once(&self.no_click)).collect()
    }

    /// Max deviation of Σ effects + no_click from the identity.
    pub fn completeness_defect(&self) -> f64 {
        let mut sum = self.no_click.clone();
        for e in &self.effects {
            sum += e;
        }
        (sum - identity(self.space_dim))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// Embed a qubit operator into the qutrit with a vacuum third level
/// (zero action on the vacuum).
fn embed_qubit(m: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(3, 3);
    for i in 0..2 {
        for j in 0..2 {
            out[(i, j)] = m[(i, j)];
        }
    }
    out
}

/// Build the analyzer POVM: click effect (b, s) = basis_prob(b) · η(b, s) ·
/// |b,s⟩⟨b,s|, no-click = identity − Σ effects.
pub fn build_povm(
    spec: &AnalyzerSpec,
    eff: &EfficiencyMap,
    embed_vacuum: bool,
) -> Result<PovmSet, DetectionError> {
    eff.validate()?;
    let dim = if embed_vacuum { 3 } else { 2 };
    let outcomes = spec.outcomes();
    let mut effects = Vec::with_capacity(outcomes.len());
    for &(basis, sign) in &outcomes {
        let p = spec
            .basis_prob(basis)
            .ok_or_else(|| DetectionError::UnknownDetector(detector_label(spec.side, basis, sign)))?;
        let eta = eff.get(spec.side, basis, sign)?;
        let proj = basis_projector(basis, sign) * c(p * eta, 0.0);
        effects.push(if embed_vacuum { embed_qubit(&proj) } else { proj });
    }
    let mut no_click = identity(dim);
    for e in &effects {
        no_click -= e;
    }
    Ok(PovmSet { space_dim: dim, outcomes, effects, no_click })
}

/// Joint outcome probabilities P[i, j] = Tr(ρ · (E_i ⊗ F_j)), including the
/// no-click row and column (`n_a` and `n_b` index the no-click outcomes).
#[derive(Debug, Clone)]
pub struct ProbTable {
    pub n_a: usize,
    pub n_b: usize,
    /// (n_a + 1) × (n_b + 1) row-major; last row/column are no-click.
    pub p: Vec<f64>,
}

impl ProbTable {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * (self.n_b + 1) + j]
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Σ_j P[i, j] over all Bob outcomes including no-click.
    pub fn alice_marginal(&self, i: usize) -> f64 {
        (0..=self.n_b).map(|j| self.get(i, j)).sum()
    }

    /// Σ_i P[i, j] over all Alice outcomes including no-click.
    pub fn bob_marginal(&self, j: usize) -> f64 {
        (0..=self.n_a).map(|i| self.get(i, j)).sum()
    }

    /// Sum of the click-click block.
    pub fn click_click_total(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n_a {
            for j in 0..self.n_b {
                acc += self.get(i, j);
            }
        }
        acc
    }
}

/// Born-rule outcome table for a joint state measured by two POVMs.
pub fn coincidence_probs(
    rho: &DensityMatrix,
    povm_a: &PovmSet,
    povm_b: &PovmSet,
) -> Result<ProbTable, DetectionError> {
    if rho.dim() != povm_a.space_dim * povm_b.space_dim {
        return Err(DetectionError::Dimension(format!(
            "state dim {} != {} x {}",
            rho.dim(),
            povm_a.space_dim,
            povm_b.space_dim
        )));
    }
    let ea = povm_a.all_effects();
    let fb = povm_b.all_effects();
    let n_a = povm_a.n_click();
    let n_b = povm_b.n_click();
    let mut p = Vec::with_capacity((n_a + 1) * (n_b + 1));
    for e in &ea {
        for f in &fb {
            let prob = rho.expectation(&tensor(e, f));
            debug_assert!(prob >= -1e-12, "negative outcome probability {prob}");
            p.push(prob.max(0.0));
        }
    }
    let table = ProbTable { n_a, n_b, p };
    debug_assert!((table.total() - 1.0).abs() <= 1e-10);
    Ok(table)
}

/// One integration interval's raw counters: the 6×4 coincidence matrix plus
/// singles, with the interval and clock-slot bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub t_start: f64,
    /// Integration time in seconds (1 s in the experiment).
    pub duration: f64,
    /// Clock slot in seconds (1 ns in the experiment).
    pub slot_duration: f64,
    /// Indexed [ALICE_OUTCOMES][BOB_OUTCOMES].
    pub coincidences: [[u64; 4]; 6],
    pub singles_alice: [u64; 6],
    pub singles_bob: [u64; 4],
}

impl CountRecord {
    /// Number of clock slots in the interval.
    pub fn slots(&self) -> u64 {
        (self.duration / self.slot_duration).round() as u64
    }

    pub fn total_coincidences(&self) -> u64 {
        self.coincidences.iter().flatten().sum()
    }

    /// Element-wise sum of several records; the result spans from the first
    /// record's start over the summed duration.
    pub fn aggregate(records: &[CountRecord]) -> Option<CountRecord> {
        let first = records.first()?;
        let mut out = CountRecord {
            t_start: first.t_start,
            duration: 0.0,
            slot_duration: first.slot_duration,
            coincidences: [[0; 4]; 6],
            singles_alice: [0; 6],
            singles_bob: [0; 4],
        };
        for r in records {
            out.duration += r.duration;
            for i in 0..6 {
                for j in 0..4 {
                    out.coincidences[i][j] += r.coincidences[i][j];
                }
            }
            for i in 0..6 {
                out.singles_alice[i] += r.singles_alice[i];
            }
            for j in 0..4 {
                out.singles_bob[j] += r.singles_bob[j];
            }
        }
        Some(out)
    }
}

fn poisson_draw(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    use rand::Rng;
    use rand_distr::Poisson;
    if lambda <= 0.0 {
        return 0;
    }
    let d = Poisson::new(lambda).expect("positive finite mean");
    rng.sample(d) as u64
}

/// Sample one interval of counts: every coincidence counter is an
/// independent Poisson draw with mean pair_rate · duration · P[i, j];
/// singles draw from the click marginals. Deterministic given `seed`.
pub fn sample_counts(
    probs: &ProbTable,
    pair_rate: f64,
    duration: f64,
    slot_duration: f64,
    t_start: f64,
    seed: u64,
) -> Result<CountRecord, DetectionError> {
    if probs.n_a != 6 || probs.n_b != 4 {
        return Err(DetectionError::Dimension(format!(
            "count records hold 6x4 coincidences, got {}x{}",
            probs.n_a, probs.n_b
        )));
    }
    if pair_rate * slot_duration > 1.0 {
        return Err(DetectionError::Saturation { rate: pair_rate, slot_duration });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = pair_rate * duration;
    let mut coincidences = [[0u64; 4]; 6];
    for (i, row) in coincidences.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = poisson_draw(&mut rng, n * probs.get(i, j));
        }
    }
    let mut singles_alice = [0u64; 6];
    for (i, s) in singles_alice.iter_mut().enumerate() {
        *s = poisson_draw(&mut rng, n * probs.alice_marginal(i));
    }
    let mut singles_bob = [0u64; 4];
    for (j, s) in singles_bob.iter_mut().enumerate() {
        *s = poisson_draw(&mut rng, n * probs.bob_marginal(j));
    }
    Ok(CountRecord {
        t_start,
        duration,
        slot_duration,
        coincidences,
        singles_alice,
        singles_bob,
    })
}
