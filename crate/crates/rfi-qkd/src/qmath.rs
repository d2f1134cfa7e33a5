//! Dense complex linear algebra on small Hilbert spaces (dim ≤ 9) plus the
//! quantum-information functionals used throughout the toolkit: entropies,
//! overlap fidelity, purity, and two-qubit concurrence.
//!
//! Everything here is a pure function of immutable inputs. The single
//! numerical primitive is the Hermitian eigendecomposition; eigenvalues with
//! magnitude below [`EIG_CLIP`] are treated as zero.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

/// Dense complex matrix; the toolkit never needs dimensions above 9.
pub type CMatrix = DMatrix<Complex<f64>>;
/// Dense complex column vector (state ket).
pub type CVector = DVector<Complex<f64>>;
/// Complex scalar.
pub type C64 = Complex<f64>;

/// Eigenvalues at or below this are clipped to zero in entropies, matrix
/// square roots, and PSD checks.
pub const EIG_CLIP: f64 = 1e-12;

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
const PSD_TOL: f64 = -1e-9;

#[derive(Debug, Error)]
pub enum QmathError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not Hermitian (max elementwise deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("trace is {0:.12}, expected 1")]
    TraceNotOne(f64),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPositive(f64),
    #[error("argument {value} outside domain {domain}")]
    Domain { value: f64, domain: &'static str },
    #[error("reference state is not pure (purity {0:.6})")]
    ReferenceNotPure(f64),
}

/// Which tensor factor to keep in a partial trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    A,
    B,
}

// ── Elementary constructors ─────────────────────────────────────────────────

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

/// Computational basis ket |i⟩ in `dim` dimensions.
pub fn basis_ket(dim: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[i] = Complex::new(1.0, 0.0);
    v
}

/// σx in the |H⟩, |V⟩ basis.
pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
}

/// σy in the |H⟩, |V⟩ basis.
pub fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)])
}

/// σz with the convention σz|H⟩ = +|H⟩, |H⟩ ≡ (1, 0).
pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)])
}

pub fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

// ── Core operations ─────────────────────────────────────────────────────────

/// Kronecker product a ⊗ b: block (i, j) equals a[i,j] · b.
pub fn tensor(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// (m + m†)/2 — symmetrize away roundoff before eigendecomposition.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// Max elementwise |m - m†| deviation.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let d = m - m.adjoint();
    d.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigendecomposition of a Hermitian matrix: (eigenvalues ascending,
/// eigenvectors as matrix columns in the same order).
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let dim = m.nrows();
    let se = hermitize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
    let vals: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = CMatrix::zeros(dim, dim);
    for (col, &i) in order.iter().enumerate() {
        vecs.set_column(col, &se.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Eigenvalues only, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut vals: Vec<f64> = hermitize(m).symmetric_eigen().eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Apply `f` to the eigenvalues of a Hermitian matrix: V f(Λ) V†.
pub fn hermitian_function(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let dim = m.nrows();
    let diag = CMatrix::from_diagonal(&DVector::from_iterator(
        dim,
        vals.iter().map(|&v| c(f(v), 0.0)),
    ));
    &vecs * diag * vecs.adjoint()
}

/// Binary entropy H2(x) = −x log2 x − (1−x) log2 (1−x), with the continuity
/// convention H2(0) = H2(1) = 0.
///
/// Evaluated through the canonical pair (max(x, 1−x), its complement) so that
/// H2(x) and H2(1−x) are bit-identical.
pub fn binary_entropy(x: f64) -> Result<f64, QmathError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(QmathError::Domain { value: x, domain: "[0, 1]" });
    }
    let hi = x.max(1.0 - x);
    Ok(plogp(hi) + plogp(1.0 - hi))
}

fn plogp(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p * p.log2()
    }
}

// ── Density matrices ────────────────────────────────────────────────────────

/// Trace-one positive semidefinite operator on a declared Hilbert space.
///
/// Construction validates Hermiticity (1e-10 elementwise), unit trace
/// (±1e-10), and numerical positivity (min eigenvalue ≥ −1e-9).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dim: usize,
    mat: CMatrix,
}

impl DensityMatrix {
    pub fn new(mat: CMatrix) -> Result<Self, QmathError> {
        if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
            return Err(QmathError::Dimension(format!(
                "density matrix must be square and nonempty, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let defect = hermiticity_defect(&mat);
        if defect > HERMITIAN_TOL {
            return Err(QmathError::NotHermitian(defect));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(QmathError::TraceNotOne(tr.re));
        }
        let min_eig = hermitian_eigenvalues(&mat)[0];
        if min_eig < PSD_TOL {
            return Err(QmathError::NotPositive(min_eig));
        }
        let dim = mat.nrows();
        Ok(Self { dim, mat: hermitize(&mat) })
    }

    /// Rank-1 projector |ψ⟩⟨ψ| from a ket; the ket is normalized first.
    pub fn from_pure(ket: &CVector) -> Result<Self, QmathError> {
        let norm = ket.norm();
        if norm < EIG_CLIP {
            return Err(QmathError::Domain { value: norm, domain: "norm > 0" });
        }
        let psi = ket / c(norm, 0.0);
        let mat = &psi * psi.adjoint();
        Self::new(mat)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            dim,
            mat: identity(dim) * c(1.0 / dim as f64, 0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    /// Tr(ρ²).
    pub fn purity(&self) -> f64 {
        (&self.mat * &self.mat).trace().re
    }

    /// Re Tr(ρ·op) — expectation value of a Hermitian observable.
    pub fn expectation(&self, op: &CMatrix) -> f64 {
        (&self.mat * op).trace().re
    }
}

/// Reduced state on the kept side of a bipartite system with local
/// dimensions `dims = (dA, dB)`.
pub fn partial_trace(
    rho: &DensityMatrix,
    dims: (usize, usize),
    keep: Subsystem,
) -> Result<DensityMatrix, QmathError> {
    let (da, db) = dims;
    if da * db != rho.dim() {
        return Err(QmathError::Dimension(format!(
            "partial trace dims {}x{} do not factor dimension {}",
            da,
            db,
            rho.dim()
        )));
    }
    let m = rho.matrix();
    let out_dim = match keep {
        Subsystem::A => da,
        Subsystem::B => db,
    };
    let mut out = CMatrix::zeros(out_dim, out_dim);
    match keep {
        Subsystem::A => {
            for a1 in 0..da {
                for a2 in 0..da {
                    let mut acc = c(0.0, 0.0);
                    for b in 0..db {
                        acc += m[(a1 * db + b, a2 * db + b)];
                    }
                    out[(a1, a2)] = acc;
                }
            }
        }
        Subsystem::B => {
            for b1 in 0..db {
                for b2 in 0..db {
                    let mut acc = c(0.0, 0.0);
                    for a in 0..da {
                        acc += m[(a * db + b1, a * db + b2)];
                    }
                    out[(b1, b2)] = acc;
                }
            }
        }
    }
    DensityMatrix::new(out)
}

/// Von Neumann entropy −Σ λᵢ log2 λᵢ in bits; eigenvalues ≤ 1e-12
/// contribute zero.
pub fn entropy_vn(rho: &DensityMatrix) -> f64 {
    hermitian_eigenvalues(rho.matrix())
        .iter()
        .filter(|&&l| l > EIG_CLIP)
        .map(|&l| -l * l.log2())
        .sum()
}

/// Purity, overlap fidelity, and concurrence of a two-qubit state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateMetrics {
    pub purity: f64,
    /// ⟨ψ_ref|ρ|ψ_ref⟩ for the pure reference state.
    pub fidelity: f64,
    pub concurrence: f64,
}

/// Two-qubit state quality against a pure reference state.
///
/// Fidelity is the overlap ⟨ψ|ρ|ψ⟩ (the reference must be pure);
/// concurrence uses the spin-flip construction max(0, λ1−λ2−λ3−λ4) with
/// λᵢ the decreasing square roots of the eigenvalues of √ρ ρ̃ √ρ.
pub fn state_metrics(
    rho: &DensityMatrix,
    reference: &DensityMatrix,
) -> Result<StateMetrics, QmathError> {
    if rho.dim() != 4 || reference.dim() != 4 {
        return Err(QmathError::Dimension(format!(
            "state metrics require two-qubit (dim 4) states, got {} and {}",
            rho.dim(),
            reference.dim()
        )));
    }
    let ref_purity = reference.purity();
    if (ref_purity - 1.0).abs() > 1e-8 {
        return Err(QmathError::ReferenceNotPure(ref_purity));
    }
    let fidelity = (rho.matrix() * reference.matrix()).trace().re;
    Ok(StateMetrics {
        purity: rho.purity(),
        fidelity,
        concurrence: concurrence(rho),
    })
}

/// Two-qubit concurrence via the spin-flip eigenvalue construction.
pub fn concurrence(rho: &DensityMatrix) -> f64 {
    debug_assert_eq!(rho.dim(), 4);
    let yy = tensor(&pauli_y(), &pauli_y());
    let rho_tilde = &yy * rho.matrix().conjugate() * &yy;
    let sqrt_rho = hermitian_function(rho.matrix(), |l| l.max(0.0).sqrt());
    let m = &sqrt_rho * rho_tilde * &sqrt_rho;
    let mut lambdas: Vec<f64> = hermitian_eigenvalues(&m)
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    (lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).max(0.0)
}

// ── Random states (seeded; used by property tests and calibration) ─────────

/// Matrix with independent standard complex Gaussian entries.
pub fn random_ginibre<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CMatrix {
    use rand_distr::StandardNormal;
    CMatrix::from_fn(dim, dim, |_, _| {
        c(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// Full-rank random density matrix from the Hilbert-Schmidt ensemble.
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DensityMatrix {
    let g = random_ginibre(rng, dim);
    let m = &g * g.adjoint();
    let tr = m.trace().re;
    DensityMatrix::new(m * c(1.0 / tr, 0.0)).expect("Gram matrix is a valid state")
}

/// Haar-random pure state.
pub fn random_pure<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DensityMatrix {
    use rand_distr::StandardNormal;
    let ket = CVector::from_fn(dim, |_, _| {
        c(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    DensityMatrix::from_pure(&ket).expect("random ket is nonzero")
}

/// Haar-random unitary via QR of a Ginibre matrix with phase fixing.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CMatrix {
    let g = random_ginibre(rng, dim);
    let qr = g.qr();
    let r_diag: Vec<C64> = (0..dim).map(|i| qr.r()[(i, i)]).collect();
    let q = qr.q();
    let phases = CMatrix::from_diagonal(&DVector::from_iterator(
        dim,
        r_diag.iter().map(|z| {
            if z.norm() < EIG_CLIP {
                c(1.0, 0.0)
            } else {
                z / z.norm()
            }
        }),
    ));
    q * phases
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ket_hv_vh(phi: f64) -> CVector {
        // (|HV⟩ + e^{iφ}|VH⟩)/√2 in the (HH, HV, VH, VV) product basis
        let mut v = CVector::zeros(4);
        let s = 1.0 / 2.0_f64.sqrt();
        v[1] = c(s, 0.0);
        v[2] = c(phi.cos(), phi.sin()) * c(s, 0.0);
        v
    }

    #[test]
    fn tensor_identities() {
        let i2 = identity(2);
        let i4 = tensor(&i2, &i2);
        assert_eq!(i4, identity(4));

        // σz⊗σz |HV⟩ = −|HV⟩
        let zz = tensor(&pauli_z(), &pauli_z());
        let hv = basis_ket(4, 1);
        let out = &zz * &hv;
        assert_abs_diff_eq!((out + hv).norm(), 0.0, epsilon = 1e-14);

        // σx⊗σx |HV⟩ = |VH⟩ (hand expansion of the 4x4 product)
        let xx = tensor(&pauli_x(), &pauli_x());
        let out = &xx * basis_ket(4, 1);
        assert_abs_diff_eq!((out - basis_ket(4, 2)).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn tensor_trace_multiplicative_and_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_ginibre(&mut rng, 2);
            let b = random_ginibre(&mut rng, 3);
            let d = random_ginibre(&mut rng, 2);
            let tab = tensor(&a, &b);
            let prod = a.trace() * b.trace();
            assert_abs_diff_eq!((tab.trace() - prod).norm(), 0.0, epsilon = 1e-10);
            let left = tensor(&tensor(&a, &b), &d);
            let right = tensor(&a, &tensor(&b, &d));
            let diff = (&left - &right).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(diff <= 1e-12, "associativity defect {diff}");
        }
    }

    #[test]
    fn partial_trace_bell_marginal_is_mixed() {
        let rho = DensityMatrix::from_pure(&ket_hv_vh(0.0)).unwrap();
        let red = partial_trace(&rho, (2, 2), Subsystem::A).unwrap();
        let diff = (red.matrix() - identity(2) * c(0.5, 0.0))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn partial_trace_recovers_product_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let da = rng.gen_range(2..=3);
            let db = rng.gen_range(2..=3);
            let ra = random_density(&mut rng, da);
            let rb = random_density(&mut rng, db);
            let joint = DensityMatrix::new(tensor(ra.matrix(), rb.matrix())).unwrap();
            let back_a = partial_trace(&joint, (da, db), Subsystem::A).unwrap();
            let back_b = partial_trace(&joint, (da, db), Subsystem::B).unwrap();
            let da_err = (back_a.matrix() - ra.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            let db_err = (back_b.matrix() - rb.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(da_err <= 1e-12 && db_err <= 1e-12);
        }
    }

    #[test]
    fn partial_trace_9dim_preserves_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rho = random_density(&mut rng, 9);
        let red = partial_trace(&rho, (3, 3), Subsystem::B).unwrap();
        // independent oracle: direct index summation of the kept diagonal
        let mut tr = c(0.0, 0.0);
        for a in 0..3 {
            for b in 0..3 {
                tr += rho.matrix()[(a * 3 + b, a * 3 + b)];
            }
        }
        assert_abs_diff_eq!(red.matrix().trace().re, tr.re, epsilon = 1e-12);
        assert_abs_diff_eq!(red.matrix().trace().re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn partial_trace_rejects_bad_dims() {
        let rho = DensityMatrix::maximally_mixed(6);
        assert!(partial_trace(&rho, (2, 2), Subsystem::A).is_err());
    }

    #[test]
    fn binary_entropy_values() {
        assert_abs_diff_eq!(binary_entropy(0.5).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(binary_entropy(0.0).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(binary_entropy(1.0).unwrap(), 0.0, epsilon = 1e-14);
        // frozen from direct high-precision evaluation
        assert_abs_diff_eq!(binary_entropy(0.11).unwrap(), 0.499916, epsilon = 1e-4);
        assert!(binary_entropy(-0.01).is_err());
        assert!(binary_entropy(1.01).is_err());
    }

    #[test]
    fn binary_entropy_symmetric_on_grid() {
        let mut x = 0.0;
        while x <= 1.0 {
            let h = binary_entropy(x).unwrap();
            let h2 = binary_entropy(1.0 - x).unwrap();
            assert_eq!(h, h2, "asymmetry at x={x}");
            x += 1e-3;
        }
    }

    #[test]
    fn entropy_values() {
        let pure = DensityMatrix::from_pure(&basis_ket(2, 0)).unwrap();
        assert_abs_diff_eq!(entropy_vn(&pure), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(entropy_vn(&DensityMatrix::maximally_mixed(2)), 1.0, epsilon = 1e-12);
        let diag = DensityMatrix::new(CMatrix::from_diagonal(&DVector::from_vec(vec![
            c(0.9, 0.0),
            c(0.1, 0.0),
        ])))
        .unwrap();
        // equals H2(0.1), frozen from the eigenvalue formula
        assert_abs_diff_eq!(entropy_vn(&diag), 0.468996, epsilon = 1e-4);
        assert_abs_diff_eq!(entropy_vn(&diag), binary_entropy(0.1).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn entropy_unitarily_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let rho = random_density(&mut rng, 4);
            let u = random_unitary(&mut rng, 4);
            let rotated = DensityMatrix::new(&u * rho.matrix() * u.adjoint()).unwrap();
            assert!((entropy_vn(&rotated) - entropy_vn(&rho)).abs() <= 1e-9);
        }
    }

    #[test]
    fn metrics_on_pure_entangled_state() {
        let rho = DensityMatrix::from_pure(&ket_hv_vh(1.3)).unwrap();
        let m = state_metrics(&rho, &rho).unwrap();
        assert_abs_diff_eq!(m.purity, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.fidelity, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.concurrence, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn werner_concurrence_vanishes_at_one_third() {
        // V = 1/3 sits exactly on the separability boundary max(0, (3V−1)/2)
        let v = 1.0 / 3.0;
        let bell = DensityMatrix::from_pure(&ket_hv_vh(0.0)).unwrap();
        let mat = bell.matrix() * c(v, 0.0) + identity(4) * c((1.0 - v) / 4.0, 0.0);
        let werner = DensityMatrix::new(mat).unwrap();
        assert_abs_diff_eq!(concurrence(&werner), 0.0, epsilon = 1e-9);
        // a notch above the boundary it must match the closed form
        let v = 0.6;
        let mat = bell.matrix() * c(v, 0.0) + identity(4) * c((1.0 - v) / 4.0, 0.0);
        let werner = DensityMatrix::new(mat).unwrap();
        assert_abs_diff_eq!(concurrence(&werner), (3.0 * v - 1.0) / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn separable_products_have_zero_concurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let ra = random_density(&mut rng, 2);
            let rb = random_density(&mut rng, 2);
            let prod = DensityMatrix::new(tensor(ra.matrix(), rb.matrix())).unwrap();
            assert!(concurrence(&prod) <= 1e-9);
        }
    }

    #[test]
    fn metrics_reject_wrong_dimension() {
        let rho = DensityMatrix::maximally_mixed(2);
        let r4 = DensityMatrix::maximally_mixed(4);
        assert!(state_metrics(&rho, &r4).is_err());
    }

    #[test]
    fn metrics_reject_mixed_reference() {
        let rho = DensityMatrix::maximally_mixed(4);
        assert!(matches!(
            state_metrics(&rho, &rho),
            Err(QmathError::ReferenceNotPure(_))
        ));
    }

    #[test]
    fn density_matrix_validation() {
        // non-Hermitian
        let mut m = identity(2) * c(0.5, 0.0);
        m[(0, 1)] = c(0.3, 0.1);
        assert!(matches!(DensityMatrix::new(m), Err(QmathError::NotHermitian(_))));
        // wrong trace
        assert!(matches!(
            DensityMatrix::new(identity(2)),
            Err(QmathError::TraceNotOne(_))
        ));
        // not PSD
        let m = CMatrix::from_diagonal(&DVector::from_vec(vec![c(1.5, 0.0), c(-0.5, 0.0)]));
        assert!(matches!(DensityMatrix::new(m), Err(QmathError::NotPositive(_))));
    }
}
