//! Finite-energy GKP codewords synthesized as ground states of the grid
//! Hamiltonian, plus the stabilizer-based squeezing diagnostics.

use std::f64::consts::PI;


use crate::error::{GkpError, Result};
use crate::hilbert::HilbertConfig;
use crate::operators::{
    c, cr, displacement_unitary_fock, number_fock, CVec, C64, OperatorMatrix,
};
use crate::states::QuantumState;

/// Square-lattice geometry in dimensionless phase-space units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GkpLattice {
    /// Lattice spacing ℓ_s = √(2π).
    pub ell_s: f64,
    /// Half-spacing displacement α = √(π/2); logical X̂ is D̂(α).
    pub alpha: C64,
    /// β = iα; logical Ẑ is D̂(β).
    pub beta: C64,
}

impl GkpLattice {
    pub fn square() -> Self {
        let a = (PI / 2.0).sqrt();
        GkpLattice { ell_s: (2.0 * PI).sqrt(), alpha: cr(a), beta: c(0.0, a) }
    }

    /// Stabilizer displacements live at the full lattice spacing 2α and 2β.
    pub fn stabilizer_x(&self) -> C64 {
        2.0 * self.alpha
    }

    pub fn stabilizer_z(&self) -> C64 {
        2.0 * self.beta
    }

    pub fn check(&self) -> Result<()> {
        if (self.beta - C64::i() * self.alpha).norm() > 1e-12 {
            return Err(GkpError::validation("lattice must satisfy β = iα"));
        }
        // (2α)(2β)* − c.c. = ±4πi keeps the stabilizer pair commuting.
        let sym = self.stabilizer_x() * self.stabilizer_z().conj();
        let comm = sym - sym.conj();
        if ((comm.im.abs() - 4.0 * PI).abs() > 1e-9) || comm.re.abs() > 1e-12 {
            return Err(GkpError::validation(format!(
                "stabilizer symplectic form must be ±4πi, got {comm}"
            )));
        }
        Ok(())
    }
}

impl Default for GkpLattice {
    fn default() -> Self {
        GkpLattice::square()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridHamiltonianParams {
    pub omega0: f64,
    pub j: f64,
}

impl GridHamiltonianParams {
    pub fn new(omega0: f64, j: f64) -> Result<Self> {
        if !(omega0.is_finite() && j.is_finite()) || omega0 <= 0.0 || j < 0.0 {
            return Err(GkpError::validation(format!(
                "grid Hamiltonian needs ω₀ > 0 and J ≥ 0, got ω₀={omega0}, J={j}"
            )));
        }
        Ok(GridHamiltonianParams { omega0, j })
    }

    pub fn from_ratio(ratio: f64) -> Result<Self> {
        GridHamiltonianParams::new(1.0, ratio)
    }

    pub fn ratio(&self) -> f64 {
        self.j / self.omega0
    }
}

/// The six logical cardinal states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LogicalLabel {
    PlusZ,
    MinusZ,
    PlusX,
    MinusX,
    PlusY,
    MinusY,
}

impl LogicalLabel {
    pub const ALL: [LogicalLabel; 6] = [
        LogicalLabel::PlusZ,
        LogicalLabel::MinusZ,
        LogicalLabel::PlusX,
        LogicalLabel::MinusX,
        LogicalLabel::PlusY,
        LogicalLabel::MinusY,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LogicalLabel::PlusZ => "+Z",
            LogicalLabel::MinusZ => "-Z",
            LogicalLabel::PlusX => "+X",
            LogicalLabel::MinusX => "-X",
            LogicalLabel::PlusY => "+Y",
            LogicalLabel::MinusY => "-Y",
        }
    }
}

impl std::fmt::Display for LogicalLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LogicalLabel {
    type Err = GkpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "+Z" => Ok(LogicalLabel::PlusZ),
            "-Z" => Ok(LogicalLabel::MinusZ),
            "+X" => Ok(LogicalLabel::PlusX),
            "-X" => Ok(LogicalLabel::MinusX),
            "+Y" => Ok(LogicalLabel::PlusY),
            "-Y" => Ok(LogicalLabel::MinusY),
            other => Err(GkpError::Format(format!("unknown logical label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Codeword {
    pub label: LogicalLabel,
    pub state: QuantumState,
    pub delta_x_db: f64,
    pub delta_z_db: f64,
}

/// Ground-pair diagnostics recorded during synthesis.
#[derive(Debug, Clone, Copy)]
pub struct SynthesisDiagnostics {
    /// Energy splitting of the quasi-degenerate ground pair.
    pub splitting: f64,
    /// Gap from the pair to the third level.
    pub gap: f64,
    /// ⟨+Z_L|D̂(β)|+Z_L⟩ after label fixing; low values mean the inversion
    /// produced states with no logical identity.
    pub label_confidence: f64,
}

#[derive(Debug, Clone)]
pub struct CodewordSet {
    pub lattice: GkpLattice,
    pub entries: Vec<Codeword>,
    pub diagnostics: SynthesisDiagnostics,
}

impl CodewordSet {
    pub fn get(&self, label: LogicalLabel) -> &Codeword {
        self.entries
            .iter()
            .find(|e| e.label == label)
            .expect("codeword set always carries all six labels")
    }

    pub fn state(&self, label: LogicalLabel) -> &QuantumState {
        &self.get(label).state
    }
}

pub fn build_grid_hamiltonian(
    cfg: &HilbertConfig,
    params: &GridHamiltonianParams,
) -> Result<OperatorMatrix> {
    if cfg.include_spin || cfg.mode_count != 1 {
        return Err(GkpError::validation(
            "grid Hamiltonian is defined on a single bare mode",
        ));
    }
    let f = cfg.fock_truncation;
    let ls = (2.0 * PI).sqrt();
    let cos_x = (displacement_unitary_fock(f, c(0.0, ls)) + displacement_unitary_fock(f, c(0.0, -ls)))
        .scale(0.5);
    let cos_p =
        (displacement_unitary_fock(f, cr(ls)) + displacement_unitary_fock(f, cr(-ls))).scale(0.5);
    let h = number_fock(f).scale(params.omega0) - (cos_x + cos_p).scale(params.j);
    OperatorMatrix::hermitian(h)
}

/// Gap-to-splitting ratio below which the "quasi-degenerate pair above a
/// clear gap" picture has broken down.
const GAP_RATIO_FLOOR: f64 = 1.05;
/// Minimum ⟨+Z_L|D̂(β)|+Z_L⟩ for the label assignment to be meaningful.
const LABEL_CONFIDENCE_FLOOR: f64 = 0.2;
/// Codewords this weakly squeezed (vacuum = 0 dB) carry no grid structure,
/// which happens when the truncation or J is far too small.
const MIN_SQUEEZING_FLOOR_DB: f64 = 1.0;

pub fn codewords_from_ground_states(
    h: &OperatorMatrix,
    lattice: &GkpLattice,
) -> Result<CodewordSet> {
    lattice.check()?;
    h.check_hermitian(crate::operators::HERMITIAN_TOL)?;
    let f = h.dim;
    let eig = nalgebra::SymmetricEigen::new(h.entries.clone());
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let (e0, e1, e2) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    let splitting = e1 - e0;
    let gap = e2 - e1;
    if gap < GAP_RATIO_FLOOR * splitting {
        return Err(GkpError::Synthesis(format!(
            "no quasi-degenerate ground pair: splitting {splitting:.4}, gap {gap:.4}"
        )));
    }

    let v0 = phase_fix(eig.eigenvectors.column(order[0]).into_owned());
    let v1 = phase_fix(eig.eigenvectors.column(order[1]).into_owned());
    let z_l = displacement_unitary_fock(f, lattice.beta);

    // The Hadamard-pair inversion; which ground vector is |+H⟩ is decided by
    // whichever assignment yields a |+Z_L⟩ actually polarized along +Z.
    let (cs, sn) = ((PI / 8.0).cos(), (PI / 8.0).sin());
    let invert = |vp: &CVec, vm: &CVec| -> (CVec, CVec) {
        let zp = vp.scale(cs) - vm.scale(sn);
        let zm = vp.scale(sn) + vm.scale(cs);
        (zp.clone().scale(1.0 / zp.norm()), zm.clone().scale(1.0 / zm.norm()))
    };
    let polarization = |v: &CVec| (v.adjoint() * (&z_l * v))[(0, 0)].re;
    let (zp_a, zm_a) = invert(&v0, &v1);
    let (zp_b, zm_b) = invert(&v1, &v0);
    let (pol_a, pol_b) = (polarization(&zp_a), polarization(&zp_b));
    let (zp, zm, confidence) =
        if pol_a >= pol_b { (zp_a, zm_a, pol_a) } else { (zp_b, zm_b, pol_b) };
    if confidence < LABEL_CONFIDENCE_FLOOR {
        return Err(GkpError::Synthesis(format!(
            "label confidence ⟨+Z|D̂(β)|+Z⟩ = {confidence:.3} below {LABEL_CONFIDENCE_FLOOR}"
        )));
    }

    let normalized = |v: CVec| -> CVec {
        let n = v.norm();
        v.scale(1.0 / n)
    };
    let xp = normalized(&zp + &zm);
    let xm = normalized(&zp - &zm);
    let yp = normalized(&zp + (&zm).scale_i());
    let ym = normalized(&zp - (&zm).scale_i());

    let mut entries = Vec::with_capacity(6);
    for (label, v) in [
        (LogicalLabel::PlusZ, zp),
        (LogicalLabel::MinusZ, zm),
        (LogicalLabel::PlusX, xp),
        (LogicalLabel::MinusX, xm),
        (LogicalLabel::PlusY, yp),
        (LogicalLabel::MinusY, ym),
    ] {
        let state = QuantumState::new(v)?;
        let (delta_x_db, delta_z_db) = squeezing_from_stabilizers(&state, lattice)?;
        entries.push(Codeword { label, state, delta_x_db, delta_z_db });
    }
    let min_db = entries
        .iter()
        .flat_map(|e| [e.delta_x_db, e.delta_z_db])
        .fold(f64::INFINITY, f64::min);
    if min_db < MIN_SQUEEZING_FLOOR_DB {
        return Err(GkpError::Synthesis(format!(
            "minimum codeword squeezing {min_db:.2} dB is below {MIN_SQUEEZING_FLOOR_DB} dB \
             (ground pair splitting {splitting:.4}, gap {gap:.4}); \
             increase J/ω₀ or the Fock truncation"
        )));
    }

    Ok(CodewordSet {
        lattice: *lattice,
        entries,
        diagnostics: SynthesisDiagnostics { splitting, gap, label_confidence: confidence },
    })
}

/// Fix the global phase so the largest-magnitude even-Fock amplitude is
/// real-positive.
fn phase_fix(v: CVec) -> CVec {
    let mut best = 0usize;
    let mut best_mag = -1.0;
    for i in (0..v.len()).step_by(2) {
        let m = v[i].norm();
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    if best_mag <= 0.0 {
        return v;
    }
    let phase = v[best] / best_mag;
    v.scale_conj(phase)
}

trait VecPhaseOps {
    fn scale_i(&self) -> CVec;
    fn scale_conj(self, phase: C64) -> CVec;
}

impl VecPhaseOps for CVec {
    fn scale_i(&self) -> CVec {
        self.map(|x| C64::i() * x)
    }

    fn scale_conj(self, phase: C64) -> CVec {
        let p = phase.conj();
        self.map(|x| p * x)
    }
}

/// dB value for a squared envelope parameter Δ²; vacuum (Δ² = 1) is 0 dB.
pub fn squeezing_db_from_delta_sq(delta_sq: f64) -> f64 {
    -10.0 * delta_sq.log10()
}

pub fn squeezing_from_stabilizers(
    state: &QuantumState,
    lattice: &GkpLattice,
) -> Result<(f64, f64)> {
    lattice.check()?;
    let f = state.dim;
    let mut out = [0.0; 2];
    // ⟨D̂(iλ)⟩ = ⟨e^{i√2 λ x̂}⟩ is the characteristic function of x̂, so the
    // x-quadrature peak width Δ_X is read from the imaginary-axis stabilizer
    // D̂(2β), and Δ_Z from the real-axis D̂(2α).
    for (slot, gamma) in [(0usize, lattice.stabilizer_z()), (1, lattice.stabilizer_x())] {
        let s_op = displacement_unitary_fock(f, gamma);
        let s = state.expectation(&s_op).norm();
        out[slot] = if s == 0.0 {
            f64::NEG_INFINITY
        } else {
            let s = if s >= 1.0 {
                eprintln!(
                    "warning: stabilizer expectation {s} ≥ 1; clamping (truncation artifact)"
                );
                1.0 - f64::EPSILON
            } else {
                s
            };
            let delta_sq = -(s * s).ln() / (2.0 * PI);
            squeezing_db_from_delta_sq(delta_sq)
        };
    }
    Ok((out[0], out[1]))
}

/// Convenience wrapper: build the Hamiltonian at fock `f` for `J/ω₀ = ratio`
/// (ω₀ = 1 units) and synthesize the codeword set.
pub fn synthesize_codewords(fock: usize, ratio: f64) -> Result<CodewordSet> {
    let cfg = HilbertConfig::mode_only(fock)?;
    let params = GridHamiltonianParams::from_ratio(ratio)?;
    let h = build_grid_hamiltonian(&cfg, &params)?;
    codewords_from_ground_states(&h, &GkpLattice::square())
}
