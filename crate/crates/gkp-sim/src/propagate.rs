//! Time-ordered propagation of piecewise-constant Hamiltonians.

use crate::error::{GkpError, Result};
use crate::operators::{
    evolve_from_eigen, hermiticity_residual, CMat, CVec, OperatorMatrix, HERMITIAN_TOL,
};
use nalgebra::SymmetricEigen;

/// One piecewise-constant segment: a Hermitian generator held for a duration.
pub type Segment = (OperatorMatrix, f64);

fn check_segment(h: &OperatorMatrix, dt: f64) -> Result<()> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(GkpError::validation(format!("segment duration must be > 0, got {dt}")));
    }
    let r = hermiticity_residual(&h.entries);
    if r > HERMITIAN_TOL {
        return Err(GkpError::validation(format!(
            "segment Hamiltonian not Hermitian (residual {r:.2e})"
        )));
    }
    Ok(())
}

/// Û = ∏ₖ exp(−i Hₖ Δtₖ), last segment leftmost.
pub fn propagate_piecewise(segments: &[Segment]) -> Result<OperatorMatrix> {
    if segments.is_empty() {
        return Err(GkpError::validation("propagate_piecewise needs at least one segment"));
    }
    let dim = segments[0].0.dim;
    let mut u = CMat::identity(dim, dim);
    for (h, dt) in segments {
        check_segment(h, *dt)?;
        if h.dim != dim {
            return Err(GkpError::validation("segment dimensions disagree"));
        }
        let eig = SymmetricEigen::new(h.entries.clone());
        let step = evolve_from_eigen(&eig.eigenvalues, &eig.eigenvectors, *dt);
        u = step * u;
    }
    OperatorMatrix::new(u)
}

/// Apply the same time-ordered product directly to a batch of state columns,
/// avoiding the full propagator matrix.
pub fn apply_piecewise(segments: &[Segment], states: &CMat) -> Result<CMat> {
    let mut psi = states.clone();
    for (h, dt) in segments {
        check_segment(h, *dt)?;
        if h.dim != psi.nrows() {
            return Err(GkpError::validation("segment dimension does not match state"));
        }
        let eig = SymmetricEigen::new(h.entries.clone());
        let step = evolve_from_eigen(&eig.eigenvalues, &eig.eigenvectors, *dt);
        psi = step * psi;
    }
    Ok(psi)
}

pub fn apply_piecewise_vec(segments: &[Segment], state: &CVec) -> Result<CVec> {
    let m = CMat::from_columns(&[state.clone()]);
    Ok(apply_piecewise(segments, &m)?.column(0).into_owned())
}
