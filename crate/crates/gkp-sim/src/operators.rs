//! Dense operator construction on truncated Fock spaces.
//!
//! Displacement operators come in two independent routes: a matrix exponential
//! of the truncated generator (exactly unitary; the primary construction used
//! by all physics), and a closed-form Fock-basis expression built from
//! associated Laguerre polynomials (the exact untruncated matrix elements
//! ⟨m|D̂(γ)|n⟩; the cross-check oracle). The routes agree away from the
//! truncation edge and necessarily differ inside a band of width
//! ≈ |γ|² + 𝒪(|γ|√n) below the truncation, where the unitary route
//! reshuffles the weight that leaks past the edge.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;

use crate::error::{GkpError, Result};
use crate::hilbert::HilbertConfig;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const UNITARY_TOL: f64 = 1e-8;

pub fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

pub fn cr(re: f64) -> C64 {
    Complex::new(re, 0.0)
}

/// Square dense complex matrix with optional structure assertions.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    pub dim: usize,
    pub entries: CMat,
}

impl OperatorMatrix {
    pub fn new(entries: CMat) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(GkpError::validation(format!(
                "operator must be square, got {}×{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(OperatorMatrix { dim: entries.nrows(), entries })
    }

    /// Wrap a matrix asserting Hermiticity to `HERMITIAN_TOL` in max-norm.
    pub fn hermitian(entries: CMat) -> Result<Self> {
        let op = Self::new(entries)?;
        op.check_hermitian(HERMITIAN_TOL)?;
        Ok(op)
    }

    pub fn check_hermitian(&self, tol: f64) -> Result<()> {
        let r = hermiticity_residual(&self.entries);
        if r > tol {
            return Err(GkpError::validation(format!(
                "matrix not Hermitian: residual {r:.3e} > {tol:.1e}"
            )));
        }
        Ok(())
    }

    pub fn check_unitary(&self, tol: f64) -> Result<()> {
        let r = unitarity_residual(&self.entries);
        if r > tol {
            return Err(GkpError::validation(format!(
                "matrix not unitary: residual {r:.3e} > {tol:.1e}"
            )));
        }
        Ok(())
    }
}

impl std::ops::Deref for OperatorMatrix {
    type Target = CMat;
    fn deref(&self) -> &CMat {
        &self.entries
    }
}

pub fn hermiticity_residual(m: &CMat) -> f64 {
    let mut r: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            r = r.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    r
}

pub fn unitarity_residual(m: &CMat) -> f64 {
    let p = m.adjoint() * m;
    let mut r: f64 = 0.0;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let target = if i == j { cr(1.0) } else { cr(0.0) };
            r = r.max((p[(i, j)] - target).norm());
        }
    }
    r
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Bare annihilation operator on a single `fock`-dimensional mode.
pub fn annihilation_fock(fock: usize) -> CMat {
    let mut m = CMat::zeros(fock, fock);
    for n in 1..fock {
        m[(n - 1, n)] = cr((n as f64).sqrt());
    }
    m
}

pub fn number_fock(fock: usize) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(fock, (0..fock).map(|n| cr(n as f64))))
}

/// Closed-form ⟨m|D̂(γ)|n⟩ via associated Laguerre recurrence.
///
/// For m ≥ n with d = m−n:  ⟨m|D̂|n⟩ = √(n!/m!) γ^d e^{−|γ|²/2} L_n^{(d)}(|γ|²),
/// and the upper triangle follows from D̂(γ)† = D̂(−γ). The √(n!/m!)γ^d factor
/// is accumulated multiplicatively to avoid factorial overflow.
pub fn displacement_fock(fock: usize, gamma: C64) -> CMat {
    let x = gamma.norm_sqr();
    let envelope = (-x / 2.0).exp();
    let mut m = CMat::zeros(fock, fock);
    for d in 0..fock {
        // Laguerre column L_n^{(d)}(x) by upward recurrence in n.
        let mut lag_prev = 0.0_f64;
        let mut lag = 1.0_f64;
        // prefactors for the lower (γ) and upper (−γ*) triangles at n = 0
        let mut pref_lo = cr(envelope);
        let mut pref_up = cr(envelope);
        for j in 1..=d {
            pref_lo *= gamma / cr((j as f64).sqrt());
            pref_up *= -gamma.conj() / cr((j as f64).sqrt());
        }
        for n in 0..fock - d {
            m[(n + d, n)] = pref_lo * lag;
            m[(n, n + d)] = pref_up * lag;
            // advance L: L_{n+1}^{(d)} = ((2n+1+d−x)L_n − (n+d)L_{n−1})/(n+1)
            let nf = n as f64;
            let df = d as f64;
            let lag_next = ((2.0 * nf + 1.0 + df - x) * lag - (nf + df) * lag_prev) / (nf + 1.0);
            lag_prev = lag;
            lag = lag_next;
            let scale = ((nf + 1.0) / (nf + 1.0 + df)).sqrt();
            pref_lo *= scale;
            pref_up *= scale;
        }
    }
    m
}

/// Displacement as the exact unitary exponential of the truncated generator
/// γâ† − γ*â. This is the primary route: it is unitary by construction, so
/// D̂(γ)D̂(−γ) = 𝟙 holds on the whole truncated space. Its matrix elements
/// deviate from the untruncated ⟨m|D̂|n⟩ only near the truncation edge, within
/// a band of width ≈ |γ|² + 𝒪(|γ|√n) below `fock`.
pub fn displacement_unitary_fock(fock: usize, gamma: C64) -> CMat {
    let a = annihilation_fock(fock);
    let ad = a.adjoint();
    // γâ†−γ*â is anti-Hermitian; exponentiate via the Hermitian i(γâ†−γ*â).
    let h = (&ad * gamma - &a * gamma.conj()) * c(0.0, 1.0);
    expm_hermitian(&h, 1.0)
}

/// exp(−i·H·t) for Hermitian H via eigendecomposition.
pub fn expm_hermitian(h: &CMat, t: f64) -> CMat {
    let eig = SymmetricEigen::new(h.clone());
    evolve_from_eigen(&eig.eigenvalues, &eig.eigenvectors, t)
}

/// exp(−i·λ̂·t) reassembled from a precomputed eigensystem.
pub fn evolve_from_eigen(eigenvalues: &DVector<f64>, eigenvectors: &CMat, t: f64) -> CMat {
    let mut vd = eigenvectors.clone();
    for (j, lam) in eigenvalues.iter().enumerate() {
        let ph = C64::from_polar(1.0, -lam * t);
        vd.column_mut(j).iter_mut().for_each(|z| *z *= ph);
    }
    vd * eigenvectors.adjoint()
}

pub fn identity(dim: usize) -> CMat {
    CMat::identity(dim, dim)
}

/// Pauli matrices on the spin factor; index 0 = |↓⟩.
pub fn sigma_x() -> CMat {
    CMat::from_row_slice(2, 2, &[cr(0.0), cr(1.0), cr(1.0), cr(0.0)])
}

pub fn sigma_y() -> CMat {
    CMat::from_row_slice(2, 2, &[cr(0.0), c(0.0, -1.0), c(0.0, 1.0), cr(0.0)])
}

pub fn sigma_z() -> CMat {
    // |↓⟩ is index 0 and an eigenvector with +1 so that ⟨σ̂z⟩ = p↓ − p↑.
    CMat::from_row_slice(2, 2, &[cr(1.0), cr(0.0), cr(0.0), cr(-1.0)])
}

/// σ̂⁺ = |↑⟩⟨↓|.
pub fn sigma_plus() -> CMat {
    CMat::from_row_slice(2, 2, &[cr(0.0), cr(0.0), cr(1.0), cr(0.0)])
}

/// Embed per-factor operators into the full space; `None` means identity.
/// Factors are ordered spin, then mode 0 (= mode-y in two-mode configs),
/// then mode 1.
pub fn embed(cfg: &HilbertConfig, spin_op: Option<&CMat>, mode_ops: &[Option<&CMat>]) -> Result<CMat> {
    if mode_ops.len() != cfg.mode_count {
        return Err(GkpError::validation(format!(
            "expected {} mode-operator slots, got {}",
            cfg.mode_count,
            mode_ops.len()
        )));
    }
    let f = cfg.fock_truncation;
    let check = |m: &CMat, want: usize| -> Result<()> {
        if m.nrows() != want || m.ncols() != want {
            return Err(GkpError::validation(format!(
                "factor operator is {}×{}, expected {want}×{want}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(())
    };
    let mut acc = match spin_op {
        Some(s) => {
            cfg.require_spin()?;
            check(s, 2)?;
            s.clone()
        }
        None => identity(cfg.spin_dim()),
    };
    for slot in mode_ops {
        acc = match slot {
            Some(m) => {
                check(m, f)?;
                acc.kronecker(m)
            }
            None => acc.kronecker(&identity(f)),
        };
    }
    Ok(acc)
}

/// â on the given mode, embedded in the full tensor space.
pub fn annihilation_op(cfg: &HilbertConfig, mode: usize) -> Result<OperatorMatrix> {
    cfg.check_mode(mode)?;
    let a = annihilation_fock(cfg.fock_truncation);
    let mut slots: Vec<Option<&CMat>> = vec![None; cfg.mode_count];
    slots[mode] = Some(&a);
    OperatorMatrix::new(embed(cfg, None, &slots)?)
}

/// D̂(γ) on the given mode, identity elsewhere (unitary route).
pub fn displacement_op(cfg: &HilbertConfig, mode: usize, gamma: C64) -> Result<OperatorMatrix> {
    cfg.check_mode(mode)?;
    if !gamma.re.is_finite() || !gamma.im.is_finite() {
        return Err(GkpError::validation("displacement amplitude must be finite"));
    }
    let d = displacement_unitary_fock(cfg.fock_truncation, gamma);
    let mut slots: Vec<Option<&CMat>> = vec![None; cfg.mode_count];
    slots[mode] = Some(&d);
    OperatorMatrix::new(embed(cfg, None, &slots)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_hermitian(n: usize, seed: u64) -> CMat {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw = CMat::from_fn(n, n, |_, _| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        (&raw + raw.adjoint()) * cr(0.5)
    }

    #[test]
    fn symmetric_eigen_handles_complex_hermitian() {
        let h = random_hermitian(8, 42);
        let eig = SymmetricEigen::new(h.clone());
        let v = &eig.eigenvectors;
        let lam = CMat::from_diagonal(&eig.eigenvalues.map(cr));
        let rebuilt = v * lam * v.adjoint();
        assert!(max_abs_diff(&rebuilt, &h) < 1e-10, "eigendecomposition must reconstruct H");
        let vv = v.adjoint() * v;
        assert!(max_abs_diff(&vv, &identity(8)) < 1e-10, "eigenvectors must be orthonormal");
    }

    #[test]
    fn annihilation_matrix_elements() {
        // defining elements: (0,1) = 1, (1,2) = √2
        let cfg = HilbertConfig::mode_only(3).unwrap();
        let a = annihilation_op(&cfg, 0).unwrap();
        assert_relative_eq!(a[(0, 1)].re, 1.0, max_relative = 1e-15);
        assert_relative_eq!(a[(1, 2)].re, 2.0_f64.sqrt(), max_relative = 1e-15);
        assert_eq!(a.iter().filter(|z| z.norm() > 0.0).count(), 2);
    }

    #[test]
    fn number_operator_eigenvalue() {
        let f = 6;
        let a = annihilation_fock(f);
        let n = a.adjoint() * &a;
        let mut ket2 = CVec::zeros(f);
        ket2[2] = cr(1.0);
        let out = &n * &ket2;
        assert_relative_eq!(out[2].re, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn commutator_is_identity_on_interior_block() {
        let f = 12;
        let a = annihilation_fock(f);
        let comm = &a * a.adjoint() - a.adjoint() * &a;
        for i in 0..f - 1 {
            for j in 0..f - 1 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((comm[(i, j)] - cr(want)).norm() < 1e-13);
            }
        }
    }

    fn block_residual(a: &CMat, b: &CMat, block: usize) -> f64 {
        let mut r: f64 = 0.0;
        for i in 0..block {
            for j in 0..block {
                r = r.max((a[(i, j)] - b[(i, j)]).norm());
            }
        }
        r
    }

    #[test]
    fn displacement_routes_agree_away_from_truncation_edge() {
        // The truncation edge band for |γ| ≤ 3 reaches down to ≈ index 22 on a
        // 50-state ladder and ≈ index 32 on a 70-state ladder (width grows as
        // |γ|² + O(|γ|√n)), so the routes are compared on interior blocks that
        // stay clear of it: 20×20 at fock 50 and 30×30 at fock 70.
        let cases = [c(1.0, 0.0), c(0.0, 1.3), c(1.2, -0.7), c(-2.1, 1.9), c(3.0, 0.0)];
        for (k, &gamma) in cases.iter().enumerate() {
            let r50 = block_residual(
                &displacement_fock(50, gamma),
                &displacement_unitary_fock(50, gamma),
                20,
            );
            assert!(r50 < 1e-8, "case {k} fock 50: residual {r50:.2e}");
            let r70 = block_residual(
                &displacement_fock(70, gamma),
                &displacement_unitary_fock(70, gamma),
                30,
            );
            assert!(r70 < 1e-8, "case {k} fock 70: residual {r70:.2e}");
        }
    }

    #[test]
    fn displacement_zero_is_identity() {
        let d = displacement_fock(20, cr(0.0));
        assert!(max_abs_diff(&d, &identity(20)) < 1e-15);
    }

    #[test]
    fn vacuum_overlap_of_unit_displacement() {
        let d = displacement_fock(50, cr(1.0));
        assert_relative_eq!(d[(0, 0)].re, (-0.5_f64).exp(), max_relative = 1e-12);
        assert!(d[(0, 0)].im.abs() < 1e-15);
    }

    #[test]
    fn displacement_inverse_on_top_block() {
        let f = 50;
        let ls = (2.0 * std::f64::consts::PI).sqrt();
        let d = displacement_unitary_fock(f, cr(ls));
        let dinv = displacement_unitary_fock(f, cr(-ls));
        let prod = &d * &dinv;
        let r = block_residual(&prod, &identity(f), f);
        assert!(r < 1e-12, "D(γ)D(−γ) deviates from identity by {r:.2e}");
        // Closed-form elements compose back to the identity only on an interior
        // block whose intermediate excursions stay below truncation, so a
        // milder displacement is used for that check.
        let dc = displacement_fock(f, c(0.9, -0.9));
        let dcinv = displacement_fock(f, c(-0.9, 0.9));
        let rc = block_residual(&(&dc * &dcinv), &identity(f), 15);
        assert!(rc < 1e-12, "closed-form interior composition residual {rc:.2e}");
    }

    #[test]
    fn embedding_is_an_algebra_homomorphism() {
        let cfg = HilbertConfig::spin_two_modes(4).unwrap();
        let a = annihilation_fock(4);
        let b = displacement_fock(4, c(0.3, -0.2));
        let ab = &a * &b;
        let ea = embed(&cfg, None, &[Some(&a), None]).unwrap();
        let eb = embed(&cfg, None, &[Some(&b), None]).unwrap();
        let eab = embed(&cfg, None, &[Some(&ab), None]).unwrap();
        assert_eq!(&ea * &eb, eab, "embed(AB) must equal embed(A)·embed(B) exactly");
        // operators on different factors commute
        let eb1 = embed(&cfg, None, &[None, Some(&b)]).unwrap();
        assert!(max_abs_diff(&(&ea * &eb1), &(&eb1 * &ea)) < 1e-15);
    }

    #[test]
    fn expm_hermitian_matches_phase_rotation() {
        // exp(−i n̂ t) must be diagonal with phases e^{−int}
        let f = 8;
        let n = number_fock(f);
        let u = expm_hermitian(&n, 0.7);
        for k in 0..f {
            let want = C64::from_polar(1.0, -0.7 * k as f64);
            assert!((u[(k, k)] - want).norm() < 1e-12);
        }
        assert!(unitarity_residual(&u) < 1e-12);
    }

    #[test]
    fn operator_matrix_flags() {
        let h = random_hermitian(5, 7);
        assert!(OperatorMatrix::hermitian(h.clone()).is_ok());
        let mut broken = h;
        broken[(0, 1)] += cr(1e-6);
        assert!(OperatorMatrix::hermitian(broken).is_err());
    }
}
