//! State vectors, density matrices, thermal states, and reductions.

use crate::error::{GkpError, Result};
use crate::hilbert::HilbertConfig;
use crate::operators::{cr, CMat, CVec, C64};

pub const NORM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    pub dim: usize,
    pub amplitudes: CVec,
}

impl QuantumState {
    /// Wrap an amplitude vector, requiring unit norm within `NORM_TOL`.
    pub fn new(amplitudes: CVec) -> Result<Self> {
        let n = amplitudes.norm();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(GkpError::validation(format!(
                "state norm {n} deviates from 1 beyond {NORM_TOL:.0e}"
            )));
        }
        Ok(QuantumState { dim: amplitudes.len(), amplitudes })
    }

    /// Wrap without the norm check (post-selection intermediates).
    pub fn unnormalized(amplitudes: CVec) -> Self {
        QuantumState { dim: amplitudes.len(), amplitudes }
    }

    pub fn normalized(mut amplitudes: CVec) -> Result<Self> {
        let n = amplitudes.norm();
        if n == 0.0 {
            return Err(GkpError::validation("cannot normalize a zero vector"));
        }
        amplitudes /= cr(n);
        Ok(QuantumState { dim: amplitudes.len(), amplitudes })
    }

    /// Basis ket |i⟩.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = CVec::zeros(dim);
        v[i] = cr(1.0);
        QuantumState { dim, amplitudes: v }
    }

    /// |↓, 0, …⟩: spin down (if present), all modes in vacuum.
    pub fn ground(cfg: &HilbertConfig) -> Self {
        Self::basis(cfg.dim(), 0)
    }

    pub fn inner(&self, other: &QuantumState) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    pub fn overlap_sq(&self, other: &QuantumState) -> f64 {
        self.inner(other).norm_sqr()
    }

    /// ⟨ψ|M|ψ⟩.
    pub fn expectation(&self, m: &CMat) -> C64 {
        self.amplitudes.dotc(&(m * &self.amplitudes))
    }

    pub fn to_density(&self) -> DensityMatrix {
        let v = &self.amplitudes;
        DensityMatrix { dim: self.dim, entries: v * v.adjoint() }
    }

    /// Tensor product self ⊗ other (self on the slower index).
    pub fn tensor(&self, other: &QuantumState) -> QuantumState {
        let mut v = CVec::zeros(self.dim * other.dim);
        for i in 0..self.dim {
            for j in 0..other.dim {
                v[i * other.dim + j] = self.amplitudes[i] * other.amplitudes[j];
            }
        }
        QuantumState { dim: v.len(), amplitudes: v }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub dim: usize,
    pub entries: CMat,
}

impl DensityMatrix {
    pub fn new(entries: CMat) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(GkpError::validation("density matrix must be square"));
        }
        let rho = DensityMatrix { dim: entries.nrows(), entries };
        rho.validate()?;
        Ok(rho)
    }

    pub fn validate(&self) -> Result<()> {
        let herm = crate::operators::hermiticity_residual(&self.entries);
        if herm > 1e-9 {
            return Err(GkpError::validation(format!("density matrix not Hermitian: {herm:.2e}")));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > 1e-9 || tr.im.abs() > 1e-9 {
            return Err(GkpError::validation(format!("density matrix trace {tr} ≠ 1")));
        }
        let eig = nalgebra::SymmetricEigen::new(self.entries.clone());
        let min = eig.eigenvalues.min();
        if min < -1e-9 {
            return Err(GkpError::validation(format!(
                "density matrix has negative eigenvalue {min:.2e}"
            )));
        }
        Ok(())
    }

    pub fn trace(&self) -> C64 {
        self.entries.diagonal().sum()
    }

    pub fn expectation(&self, m: &CMat) -> C64 {
        // Tr(ρM) without forming the product matrix
        let mut s = cr(0.0);
        for i in 0..self.dim {
            for k in 0..self.dim {
                s += self.entries[(i, k)] * m[(k, i)];
            }
        }
        s
    }
}

/// Thermal (Bose–Einstein) state on one mode: p(n) = n̄ⁿ/(1+n̄)^{n+1},
/// renormalized over the truncated ladder.
pub fn thermal_state(cfg: &HilbertConfig, mode: usize, nbar: f64) -> Result<DensityMatrix> {
    cfg.check_mode(mode)?;
    if nbar < 0.0 {
        return Err(GkpError::validation(format!("nbar must be ≥ 0, got {nbar}")));
    }
    let weights = thermal_weights(cfg.fock_truncation, nbar);
    if cfg.mode_count != 1 || cfg.include_spin {
        return Err(GkpError::validation(
            "thermal_state builds a bare single-mode density matrix; embed it explicitly",
        ));
    }
    let entries = CMat::from_diagonal(&CVec::from_iterator(weights.len(), weights.iter().map(|&p| cr(p))));
    Ok(DensityMatrix { dim: cfg.fock_truncation, entries })
}

/// Truncated, renormalized Bose–Einstein weights.
pub fn thermal_weights(fock: usize, nbar: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..fock)
        .map(|n| nbar.powi(n as i32) / (1.0 + nbar).powi(n as i32 + 1))
        .collect();
    let total: f64 = w.iter().sum();
    for p in &mut w {
        *p /= total;
    }
    w
}

/// Partial trace of a density matrix over all factors except `keep`,
/// where the full space factors as ⊗ dims[i] in row-major (left = slowest) order.
pub fn partial_trace(rho: &CMat, dims: &[usize], keep: usize) -> Result<CMat> {
    let total: usize = dims.iter().product();
    if rho.nrows() != total || rho.ncols() != total {
        return Err(GkpError::validation(format!(
            "partial_trace: matrix dim {} does not match factorization {:?}",
            rho.nrows(),
            dims
        )));
    }
    if keep >= dims.len() {
        return Err(GkpError::validation("partial_trace: keep index out of range"));
    }
    let dk = dims[keep];
    // strides: index i = Σ n_f · stride_f
    let mut strides = vec![1usize; dims.len()];
    for f in (0..dims.len() - 1).rev() {
        strides[f] = strides[f + 1] * dims[f + 1];
    }
    let mut out = CMat::zeros(dk, dk);
    // enumerate all indices of the traced-out factors
    let env_dims: Vec<usize> =
        dims.iter().enumerate().filter(|(f, _)| *f != keep).map(|(_, &d)| d).collect();
    let env_strides: Vec<usize> =
        strides.iter().enumerate().filter(|(f, _)| *f != keep).map(|(_, &s)| s).collect();
    let env_total: usize = env_dims.iter().product::<usize>().max(1);
    for env in 0..env_total {
        let mut rem = env;
        let mut base = 0usize;
        for (d, s) in env_dims.iter().zip(&env_strides) {
            base += (rem % d) * s;
            rem /= d;
        }
        for i in 0..dk {
            let row = base + i * strides[keep];
            for j in 0..dk {
                let col = base + j * strides[keep];
                out[(i, j)] += rho[(row, col)];
            }
        }
    }
    Ok(out)
}

/// Project a spin⊗mode(s) state onto spin |↓⟩ without renormalizing.
/// Returns the projected full-space vector and the |↓⟩ probability.
pub fn project_spin_down(cfg: &HilbertConfig, psi: &CVec) -> Result<(CVec, f64)> {
    cfg.require_spin()?;
    let half = cfg.mode_space_dim();
    if psi.len() != cfg.dim() {
        return Err(GkpError::validation("state dimension mismatch in spin projection"));
    }
    let mut out = CVec::zeros(psi.len());
    let mut p = 0.0;
    for i in 0..half {
        out[i] = psi[i];
        p += psi[i].norm_sqr();
    }
    Ok((out, p))
}

/// Coherent state |γ⟩ on a bare mode (for oracle tests).
pub fn coherent_state(fock: usize, gamma: C64) -> QuantumState {
    let mut v = CVec::zeros(fock);
    let mut amp = cr((-gamma.norm_sqr() / 2.0).exp());
    for n in 0..fock {
        v[n] = amp;
        amp *= gamma / cr(((n + 1) as f64).sqrt());
    }
    QuantumState::normalized(v).expect("coherent amplitudes are nonzero")
}

pub fn fock_state(fock: usize, n: usize) -> QuantumState {
    QuantumState::basis(fock, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::c;
    use approx::assert_relative_eq;

    #[test]
    fn thermal_weights_match_geometric_law() {
        let w = thermal_weights(60, 0.05);
        assert_relative_eq!(w[0], 1.0 / 1.05, max_relative = 1e-12);
        assert_relative_eq!(w[1] / w[0], 0.05 / 1.05, max_relative = 1e-10);
        let total: f64 = w.iter().sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn thermal_zero_is_vacuum_projector() {
        let cfg = HilbertConfig::mode_only(10).unwrap();
        let rho = thermal_state(&cfg, 0, 0.0).unwrap();
        assert_relative_eq!(rho.entries[(0, 0)].re, 1.0, epsilon = 1e-14);
        assert!(rho.entries.iter().skip(1).all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn negative_nbar_rejected() {
        let cfg = HilbertConfig::mode_only(10).unwrap();
        assert!(thermal_state(&cfg, 0, -0.1).is_err());
    }

    #[test]
    fn coherent_state_vacuum_overlap() {
        let st = coherent_state(50, cr(1.0));
        assert_relative_eq!(st.amplitudes[0].re, (-0.5_f64).exp(), max_relative = 1e-10);
    }

    #[test]
    fn partial_trace_of_product_state() {
        let a = coherent_state(4, c(0.3, 0.1));
        let b = fock_state(3, 2);
        let joint = a.tensor(&b).to_density();
        let ra = partial_trace(&joint.entries, &[4, 3], 0).unwrap();
        let rb = partial_trace(&joint.entries, &[4, 3], 1).unwrap();
        let da = a.to_density();
        assert!(crate::operators::max_abs_diff(&ra, &da.entries) < 1e-12);
        assert!((rb[(2, 2)] - cr(1.0)).norm() < 1e-12);
    }

    #[test]
    fn spin_projection_probability() {
        let cfg = HilbertConfig::spin_mode(3).unwrap();
        // (|↓,0⟩ + |↑,1⟩)/√2
        let mut v = CVec::zeros(6);
        v[0] = cr(1.0 / 2.0_f64.sqrt());
        v[4] = cr(1.0 / 2.0_f64.sqrt());
        let (proj, p) = project_spin_down(&cfg, &v).unwrap();
        assert_relative_eq!(p, 0.5, epsilon = 1e-12);
        assert!((proj[0] - v[0]).norm() < 1e-15 && proj[4].norm() < 1e-15);
    }

    #[test]
    fn hermitian_expectation_is_real() {
        let st = coherent_state(30, c(0.7, -0.4));
        let n = crate::operators::number_fock(30);
        let e = st.expectation(&n);
        assert!(e.im.abs() < 1e-10);
        assert_relative_eq!(e.re, st.amplitudes[1].norm_sqr() + 0.0, epsilon = 1.0); // sanity: finite
        assert_relative_eq!(e.re, c(0.7, -0.4).norm_sqr(), max_relative = 1e-8);
    }
}
