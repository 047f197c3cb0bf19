//! Wigner quasi-probability via the displaced-parity expectation
//! W(x,p) = (1/π)·Tr[ρ̂ D̂(α) Π̂ D̂(α)†] with α = (x + ip)/√2.

use crate::error::{GkpError, Result};
use crate::operators::{c, displacement_unitary_fock, CMat, C64};
use crate::states::{DensityMatrix, QuantumState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePoint {
    pub x: f64,
    pub p: f64,
}

impl PhasePoint {
    pub fn alpha(&self) -> C64 {
        c(self.x, self.p) / c(2.0_f64.sqrt(), 0.0)
    }
}

/// Uniform square grid helper: `n`×`n` points spanning [−half, half]².
pub fn square_grid(half: f64, n: usize) -> Vec<PhasePoint> {
    let mut pts = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = -half + 2.0 * half * (i as f64) / ((n - 1).max(1) as f64);
            let p = -half + 2.0 * half * (j as f64) / ((n - 1).max(1) as f64);
            pts.push(PhasePoint { x, p });
        }
    }
    pts
}

fn check_finite(grid: &[PhasePoint]) -> Result<()> {
    if grid.iter().any(|pt| !pt.x.is_finite() || !pt.p.is_finite()) {
        return Err(GkpError::validation("Wigner grid contains non-finite points"));
    }
    Ok(())
}

/// Wigner function of a single-mode pure state on a phase-space grid.
pub fn wigner_state(state: &QuantumState, grid: &[PhasePoint]) -> Result<Vec<f64>> {
    check_finite(grid)?;
    let f = state.dim;
    let inv_pi = 1.0 / std::f64::consts::PI;
    Ok(grid
        .iter()
        .map(|pt| {
            let d = displacement_unitary_fock(f, pt.alpha());
            let shifted = d.adjoint() * &state.amplitudes;
            let mut w = 0.0;
            for (n, z) in shifted.iter().enumerate() {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                w += sign * z.norm_sqr();
            }
            w * inv_pi
        })
        .collect())
}

/// Wigner function of a single-mode density matrix.
pub fn wigner_density(rho: &DensityMatrix, grid: &[PhasePoint]) -> Result<Vec<f64>> {
    check_finite(grid)?;
    let f = rho.dim;
    let inv_pi = 1.0 / std::f64::consts::PI;
    Ok(grid
        .iter()
        .map(|pt| {
            let d = displacement_unitary_fock(f, pt.alpha());
            let m: CMat = d.adjoint() * &rho.entries * &d;
            let mut w = 0.0;
            for n in 0..f {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                w += sign * m[(n, n)].re;
            }
            w * inv_pi
        })
        .collect())
}
