//! Logical state and process tomography: Pauli-expectation reconstruction,
//! physicality projection, and constrained χ-matrix fitting.
//!
//! Logical tensor order follows the label order: in a two-qubit word "PQ",
//! P is the outer (first) qubit factor.

use std::collections::BTreeMap;

use crate::error::{GkpError, Result};
use crate::measure::{PauliAxis, PauliLabel};
use crate::operators::{c, cr, CMat, CVec};

#[derive(Debug, Clone, PartialEq)]
pub struct LogicalDensityMatrix {
    pub qubits: usize,
    pub matrix: CMat,
}

impl LogicalDensityMatrix {
    /// Hermitian, unit-trace matrix of dimension 2^qubits. Negative
    /// eigenvalues are allowed here; physicality is a separate projection.
    pub fn new(qubits: usize, matrix: CMat) -> Result<Self> {
        let d = 1usize << qubits;
        if !(1..=2).contains(&qubits) {
            return Err(GkpError::validation("logical registers hold 1 or 2 qubits"));
        }
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(GkpError::validation(format!(
                "expected a {d}×{d} matrix, got {}×{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if crate::operators::hermiticity_residual(&matrix) > 1e-8 {
            return Err(GkpError::validation("logical density matrix must be Hermitian"));
        }
        let trace = matrix.trace();
        if (trace.re - 1.0).abs() > 1e-6 || trace.im.abs() > 1e-9 {
            return Err(GkpError::validation(format!("trace must be 1, got {trace}")));
        }
        Ok(LogicalDensityMatrix { qubits, matrix })
    }

    pub fn dim(&self) -> usize {
        1 << self.qubits
    }

    /// ⟨E⟩ = Tr(ρE) for every non-identity Pauli word.
    pub fn pauli_readback(&self) -> BTreeMap<PauliLabel, f64> {
        let mut out = BTreeMap::new();
        for label in PauliLabel::nontrivial(self.qubits) {
            let e = pauli_word_matrix(&label);
            out.insert(label, (&self.matrix * e).trace().re);
        }
        out
    }
}

/// Process matrix in the Pauli operator basis (I, X, Y, Z)^⊗qubits,
/// ordered with the first label character as the outer Kronecker factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiMatrix {
    pub qubits: usize,
    pub matrix: CMat,
}

impl ChiMatrix {
    pub fn new(qubits: usize, matrix: CMat) -> Result<Self> {
        let chi = ChiMatrix { qubits, matrix };
        chi.validate()?;
        Ok(chi)
    }

    pub fn basis_dim(&self) -> usize {
        let d = 1usize << self.qubits;
        d * d
    }

    /// Hermiticity 1e-8, positivity ≥ −1e-8 on the spectrum, and trace
    /// preservation Σ χ_mn Ê_n†Ê_m = 𝟙 within 1e-6.
    pub fn validate(&self) -> Result<()> {
        let dd = self.basis_dim();
        if self.matrix.nrows() != dd || self.matrix.ncols() != dd {
            return Err(GkpError::validation(format!(
                "χ must be {dd}×{dd}, got {}×{}",
                self.matrix.nrows(),
                self.matrix.ncols()
            )));
        }
        if crate::operators::hermiticity_residual(&self.matrix) > 1e-8 {
            return Err(GkpError::validation("χ must be Hermitian"));
        }
        let eig = self.matrix.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-8 {
            return Err(GkpError::validation(format!(
                "χ must be non-negative definite, min eigenvalue {min:.3e}"
            )));
        }
        let residual = trace_preservation_residual(self.qubits, &self.matrix);
        if residual > 1e-6 {
            return Err(GkpError::validation(format!(
                "χ must be trace preserving, residual {residual:.3e}"
            )));
        }
        Ok(())
    }

    /// Apply the process: ρ ↦ Σ χ_mn Ê_m ρ Ê_n†.
    pub fn apply(&self, rho: &CMat) -> CMat {
        let basis = pauli_basis(self.qubits);
        let d = 1usize << self.qubits;
        let mut out = CMat::zeros(d, d);
        for (m, em) in basis.iter().enumerate() {
            for (n, en) in basis.iter().enumerate() {
                let w = self.matrix[(m, n)];
                if w.norm() > 0.0 {
                    out += (em * rho * en.adjoint()).map(|x| x * w);
                }
            }
        }
        out
    }
}

/// β^{mn}_{ij} expansion coefficients Ê_m ρ̂_i Ê_n† = Σ_j β^{mn}_{ij} ρ̂_j
/// over the matrix-unit basis ρ̂_j = |k⟩⟨l|, flattened to a matrix with
/// row (i·d² + j) and column (m·d² + n).
#[derive(Debug, Clone)]
pub struct BetaTensor {
    pub qubits: usize,
    pub inputs: usize,
    pub matrix: CMat,
}

fn sigma(axis: PauliAxis) -> CMat {
    match axis {
        PauliAxis::I => CMat::from_row_slice(2, 2, &[cr(1.0), cr(0.0), cr(0.0), cr(1.0)]),
        PauliAxis::X => CMat::from_row_slice(2, 2, &[cr(0.0), cr(1.0), cr(1.0), cr(0.0)]),
        PauliAxis::Y => CMat::from_row_slice(2, 2, &[cr(0.0), c(0.0, -1.0), c(0.0, 1.0), cr(0.0)]),
        PauliAxis::Z => CMat::from_row_slice(2, 2, &[cr(1.0), cr(0.0), cr(0.0), cr(-1.0)]),
    }
}

fn pauli_word_matrix(label: &PauliLabel) -> CMat {
    match label {
        PauliLabel::One(a) => sigma(*a),
        PauliLabel::Two(a, b) => sigma(*a).kronecker(&sigma(*b)),
    }
}

/// The d² Pauli words in χ-basis order.
pub fn pauli_basis(qubits: usize) -> Vec<CMat> {
    let axes = [PauliAxis::I, PauliAxis::X, PauliAxis::Y, PauliAxis::Z];
    match qubits {
        1 => axes.iter().map(|&a| sigma(a)).collect(),
        2 => {
            let mut out = Vec::with_capacity(16);
            for &a in &axes {
                for &b in &axes {
                    out.push(sigma(a).kronecker(&sigma(b)));
                }
            }
            out
        }
        other => panic!("qubits must be 1 or 2, got {other}"),
    }
}

/// ρ̂ = (1/d)(𝟙 + Σ ⟨Ê⟩ Ê) from a complete set of Pauli expectations.
pub fn reconstruct_logical_state(
    expectations: &BTreeMap<PauliLabel, f64>,
    qubits: usize,
) -> Result<LogicalDensityMatrix> {
    if !(1..=2).contains(&qubits) {
        return Err(GkpError::validation("logical registers hold 1 or 2 qubits"));
    }
    let d = 1usize << qubits;
    let mut rho = CMat::identity(d, d);
    for label in PauliLabel::nontrivial(qubits) {
        let v = *expectations.get(&label).ok_or_else(|| {
            GkpError::validation(format!("missing Pauli expectation for label {label}"))
        })?;
        rho += pauli_word_matrix(&label).scale(v);
    }
    LogicalDensityMatrix::new(qubits, rho.scale(1.0 / d as f64))
}

/// Projection of a real vector onto the probability simplex.
fn simplex_projection(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    let mut found = false;
    for (k, &v) in sorted.iter().enumerate() {
        acc += v;
        let t = (acc - 1.0) / (k + 1) as f64;
        if v - t > 0.0 {
            theta = t;
            found = true;
        } else {
            break;
        }
    }
    if !found {
        theta = (values.iter().sum::<f64>() - 1.0) / values.len() as f64;
    }
    values.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Frobenius-nearest density matrix: project the spectrum onto the
/// probability simplex while keeping the eigenvectors.
pub fn project_physical_state(rho: &LogicalDensityMatrix) -> LogicalDensityMatrix {
    let eig = rho.matrix.clone().symmetric_eigen();
    let lambda: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    let projected = simplex_projection(&lambda);
    let d = rho.dim();
    let mut out = CMat::zeros(d, d);
    for (k, &p) in projected.iter().enumerate() {
        if p > 0.0 {
            let v = eig.eigenvectors.column(k);
            for r in 0..d {
                for s in 0..d {
                    out[(r, s)] += v[r] * v[s].conj() * p;
                }
            }
        }
    }
    LogicalDensityMatrix::new(rho.qubits, out).expect("simplex projection yields a state")
}

/// Build β for a list of input states over the matrix-unit basis.
pub fn beta_tensor(inputs: &[LogicalDensityMatrix]) -> Result<BetaTensor> {
    let qubits = inputs
        .first()
        .ok_or_else(|| GkpError::validation("β needs at least one input state"))?
        .qubits;
    if inputs.iter().any(|r| r.qubits != qubits) {
        return Err(GkpError::validation("all β inputs must share the qubit count"));
    }
    let d = 1usize << qubits;
    let dd = d * d;
    let basis = pauli_basis(qubits);
    let mut m = CMat::zeros(inputs.len() * dd, dd * dd);
    for (i, rho) in inputs.iter().enumerate() {
        for (mi, em) in basis.iter().enumerate() {
            for (ni, en) in basis.iter().enumerate() {
                let conv = em * &rho.matrix * en.adjoint();
                for k in 0..d {
                    for l in 0..d {
                        m[(i * dd + k * d + l, mi * dd + ni)] = conv[(k, l)];
                    }
                }
            }
        }
    }
    Ok(BetaTensor { qubits, inputs: inputs.len(), matrix: m })
}

fn vec_chi(chi: &CMat) -> CVec {
    let dd = chi.nrows();
    CVec::from_iterator(dd * dd, (0..dd * dd).map(|idx| chi[(idx / dd, idx % dd)]))
}

fn unvec_chi(x: &CVec, dd: usize) -> CMat {
    CMat::from_fn(dd, dd, |m, n| x[m * dd + n])
}

/// Σ χ_mn Ê_n†Ê_m − 𝟙, the trace-preservation defect, as a Frobenius norm.
fn trace_preservation_residual(qubits: usize, chi: &CMat) -> f64 {
    tp_map(qubits, chi).norm()
}

fn tp_map(qubits: usize, chi: &CMat) -> CMat {
    let basis = pauli_basis(qubits);
    let d = 1usize << qubits;
    let mut acc = CMat::zeros(d, d);
    for (m, em) in basis.iter().enumerate() {
        for (n, en) in basis.iter().enumerate() {
            acc += (en.adjoint() * em).map(|x| x * chi[(m, n)]);
        }
    }
    acc - CMat::identity(d, d)
}

/// Matrix of the linear map χ ↦ Σ χ_mn Ê_n†Ê_m acting on vec(χ).
fn tp_constraint_matrix(qubits: usize) -> CMat {
    let basis = pauli_basis(qubits);
    let d = 1usize << qubits;
    let dd = d * d;
    let mut m = CMat::zeros(dd, dd * dd);
    for (mi, em) in basis.iter().enumerate() {
        for (ni, en) in basis.iter().enumerate() {
            let f = en.adjoint() * em;
            for k in 0..d {
                for l in 0..d {
                    m[(k * d + l, mi * dd + ni)] = f[(k, l)];
                }
            }
        }
    }
    m
}

fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

fn project_psd(m: &CMat) -> CMat {
    let h = hermitize(m);
    let dd = h.nrows();
    let eig = h.symmetric_eigen();
    let mut out = CMat::zeros(dd, dd);
    for k in 0..dd {
        let lam = eig.eigenvalues[k];
        if lam > 0.0 {
            let v = eig.eigenvectors.column(k);
            for r in 0..dd {
                for s in 0..dd {
                    out[(r, s)] += v[r] * v[s].conj() * lam;
                }
            }
        }
    }
    out
}

const CHI_FIT_TOL: f64 = 1e-8;
const CHI_FIT_MAX_ITERS: usize = 20_000;

/// Fit the process matrix minimizing ‖β·vec(χ) − λ‖₂, then enforce
/// Hermiticity, positivity, and trace preservation by Dykstra alternation
/// between the PSD cone and the trace-preservation affine set, seeded with
/// the unconstrained least-squares solution.
pub fn fit_chi(
    inputs: &[LogicalDensityMatrix],
    outputs: &[LogicalDensityMatrix],
) -> Result<ChiMatrix> {
    if inputs.len() != outputs.len() {
        return Err(GkpError::validation(format!(
            "{} inputs vs {} outputs",
            inputs.len(),
            outputs.len()
        )));
    }
    let beta = beta_tensor(inputs)?;
    let qubits = beta.qubits;
    let d = 1usize << qubits;
    let dd = d * d;
    if inputs.len() < dd {
        return Err(GkpError::validation(format!(
            "need at least {dd} informationally complete inputs, got {}",
            inputs.len()
        )));
    }
    if outputs.iter().any(|r| r.qubits != qubits) {
        return Err(GkpError::validation("output qubit count differs from inputs"));
    }
    let mut lambda = CVec::zeros(inputs.len() * dd);
    for (i, rho) in outputs.iter().enumerate() {
        for k in 0..d {
            for l in 0..d {
                lambda[i * dd + k * d + l] = rho.matrix[(k, l)];
            }
        }
    }

    let svd = beta.matrix.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > smax * 1e-10)
        .count();
    if rank < dd * dd {
        return Err(GkpError::validation(format!(
            "input set is not informationally complete: β has rank {rank} < {}",
            dd * dd
        )));
    }
    let x0 = svd
        .solve(&lambda, smax * 1e-12)
        .map_err(|e| GkpError::validation(format!("β least squares failed: {e}")))?;
    let chi_ls = hermitize(&unvec_chi(&x0.column(0).into_owned(), dd));

    // precompute the pseudo-inverse applied by the affine TP projection
    let tpm = tp_constraint_matrix(qubits);
    let tp_svd = tpm.clone().svd(true, true);
    let target = vec_chi(&CMat::identity(d, d));

    let proj_tp = |chi: &CMat| -> CMat {
        let x = vec_chi(chi);
        let defect = &tpm * &x - &target;
        let correction = tp_svd
            .solve(&defect, 1e-12)
            .expect("TP constraint map has full row rank");
        hermitize(&unvec_chi(&(x - correction.column(0).into_owned()), dd))
    };

    let mut x = chi_ls;
    let mut cone_correction = CMat::zeros(dd, dd);
    let mut converged = false;
    for _ in 0..CHI_FIT_MAX_ITERS {
        let y = proj_tp(&x);
        let z = project_psd(&(&y + &cone_correction));
        cone_correction = &y + &cone_correction - &z;
        let step = (&z - &x).norm();
        x = z;
        if trace_preservation_residual(qubits, &x) < CHI_FIT_TOL && step < CHI_FIT_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(GkpError::Convergence(format!(
            "χ fit did not reach residual {CHI_FIT_TOL:.0e} in {CHI_FIT_MAX_ITERS} iterations"
        )));
    }
    ChiMatrix::new(qubits, x)
}

/// χ_id = u u† with u_m = Tr(Ê_m†Û)/d for the ideal unitary.
pub fn ideal_chi(qubits: usize, gate: &CMat) -> Result<ChiMatrix> {
    let d = 1usize << qubits;
    if gate.nrows() != d || gate.ncols() != d {
        return Err(GkpError::validation(format!(
            "gate must be {d}×{d}, got {}×{}",
            gate.nrows(),
            gate.ncols()
        )));
    }
    let basis = pauli_basis(qubits);
    let u = CVec::from_iterator(
        basis.len(),
        basis.iter().map(|e| (e.adjoint() * gate).trace() / cr(d as f64)),
    );
    let dd = basis.len();
    let mut chi = CMat::zeros(dd, dd);
    for m in 0..dd {
        for n in 0..dd {
            chi[(m, n)] = u[m] * u[n].conj();
        }
    }
    ChiMatrix::new(qubits, chi)
}

/// F̄_proc = Tr(χ χ_id).
pub fn process_fidelity(chi: &ChiMatrix, ideal_gate: &CMat) -> Result<f64> {
    let id = ideal_chi(chi.qubits, ideal_gate)?;
    Ok((&chi.matrix * &id.matrix).trace().re)
}

/// ⟨target|ρ|target⟩ for a pure logical target.
pub fn state_fidelity(rho: &LogicalDensityMatrix, target: &CVec) -> Result<f64> {
    let d = rho.dim();
    if target.len() != d {
        return Err(GkpError::validation(format!(
            "target dimension {} does not match {d}",
            target.len()
        )));
    }
    let norm = target.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(GkpError::validation(format!("target must be normalized, ‖t‖ = {norm}")));
    }
    let v = (target.adjoint() * &rho.matrix * target)[(0, 0)];
    if v.im.abs() > 1e-10 {
        return Err(GkpError::validation(format!(
            "fidelity came out complex ({v}); input was not Hermitian"
        )));
    }
    Ok(v.re)
}
