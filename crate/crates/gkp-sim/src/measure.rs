//! Logical Pauli operators, SSSD Pauli measurement operators with their
//! displacement-sample plans, and the ancilla-interference readout channel.
//!
//! Two-mode conventions: tensor layout is spin ⊗ mode-y ⊗ mode-x. A two-mode
//! Pauli label written "PQ" puts P on mode x and Q on mode y; displacement
//! samples pair γ with mode x and δ with mode y.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GkpError, Result};
use crate::gkp::GkpLattice;
use crate::hilbert::HilbertConfig;
use crate::operators::{c, cr, displacement_unitary_fock, identity, CMat, CVec, C64, OperatorMatrix};
use crate::sdf::{pulse_propagator, IonParams, LambDickeOrder, ModeLabel, SdfPulse};
use crate::states::QuantumState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PauliAxis {
    I,
    X,
    Y,
    Z,
}

impl PauliAxis {
    pub const NONTRIVIAL: [PauliAxis; 3] = [PauliAxis::X, PauliAxis::Y, PauliAxis::Z];

    pub fn as_char(&self) -> char {
        match self {
            PauliAxis::I => 'I',
            PauliAxis::X => 'X',
            PauliAxis::Y => 'Y',
            PauliAxis::Z => 'Z',
        }
    }

    fn from_char(ch: char) -> Result<Self> {
        match ch {
            'I' => Ok(PauliAxis::I),
            'X' => Ok(PauliAxis::X),
            'Y' => Ok(PauliAxis::Y),
            'Z' => Ok(PauliAxis::Z),
            other => Err(GkpError::Format(format!("unknown Pauli axis {other:?}"))),
        }
    }
}

/// One- or two-mode Pauli word. `Two(p, q)` acts with `p` on mode x and `q`
/// on mode y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PauliLabel {
    One(PauliAxis),
    Two(PauliAxis, PauliAxis),
}

impl PauliLabel {
    pub fn mode_count(&self) -> usize {
        match self {
            PauliLabel::One(_) => 1,
            PauliLabel::Two(..) => 2,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(
            self,
            PauliLabel::One(PauliAxis::I) | PauliLabel::Two(PauliAxis::I, PauliAxis::I)
        )
    }

    /// The 3 single-mode or 15 two-mode non-identity words.
    pub fn nontrivial(mode_count: usize) -> Vec<PauliLabel> {
        match mode_count {
            1 => PauliAxis::NONTRIVIAL.iter().map(|&a| PauliLabel::One(a)).collect(),
            2 => {
                let axes = [PauliAxis::I, PauliAxis::X, PauliAxis::Y, PauliAxis::Z];
                let mut out = Vec::with_capacity(15);
                for &p in &axes {
                    for &q in &axes {
                        let label = PauliLabel::Two(p, q);
                        if !label.is_identity() {
                            out.push(label);
                        }
                    }
                }
                out
            }
            other => panic!("mode_count must be 1 or 2, got {other}"),
        }
    }
}

impl std::fmt::Display for PauliLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PauliLabel::One(a) => write!(f, "{}", a.as_char()),
            PauliLabel::Two(a, b) => write!(f, "{}{}", a.as_char(), b.as_char()),
        }
    }
}

impl std::str::FromStr for PauliLabel {
    type Err = GkpError;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        match chars.as_slice() {
            [a] => Ok(PauliLabel::One(PauliAxis::from_char(*a)?)),
            [a, b] => Ok(PauliLabel::Two(PauliAxis::from_char(*a)?, PauliAxis::from_char(*b)?)),
            _ => Err(GkpError::Format(format!("Pauli label must be 1 or 2 letters, got {s:?}"))),
        }
    }
}

/// Logical Pauli displacement at half the lattice spacing:
/// X̂_L = D̂(ℓ_s/2), Ẑ_L = D̂(iℓ_s/2), Ŷ_L = D̂((1+i)ℓ_s/2), so that
/// X̂_L² = Ŝ_X and Ẑ_L² = Ŝ_Z hold as operator identities.
pub fn logical_pauli_op(fock: usize, lattice: &GkpLattice, axis: PauliAxis) -> OperatorMatrix {
    let gamma = match axis {
        PauliAxis::I => cr(0.0),
        PauliAxis::X => lattice.alpha,
        PauliAxis::Y => lattice.alpha + lattice.beta,
        PauliAxis::Z => lattice.beta,
    };
    OperatorMatrix::new(displacement_unitary_fock(fock, gamma))
        .expect("displacement construction is square")
}

/// One displacement sample of a measurement plan. `kappa` counts the orbit
/// of sign flips the retained representative stands for (2 when only the
/// global conjugation ⟨D̂(−γ)⟩ = ⟨D̂(γ)⟩* is used, 4 when per-mode flips are
/// folded in, which is exact for states even under per-mode parity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedSample {
    pub target: PauliLabel,
    pub gamma: C64,
    pub delta: Option<C64>,
    pub weight: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone)]
pub struct MeasurementPlan {
    pub mode_count: usize,
    pub truncation: usize,
    pub samples: Vec<PlannedSample>,
}

impl MeasurementPlan {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples_for(&self, label: PauliLabel) -> impl Iterator<Item = &PlannedSample> {
        self.samples.iter().filter(move |s| s.target == label)
    }
}

/// Half-integer grid points n+½ for n ∈ −N..N−1, with the SSSD weights.
/// Under n → −n−1 the displacement negates while the weight is unchanged,
/// which is what the conjugate-pair reduction exploits.
fn sssd_terms(n_trunc: usize) -> Vec<(f64, f64)> {
    let n = n_trunc as i64;
    (-n..n)
        .map(|k| {
            let half = k as f64 + 0.5;
            let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            (half, sign / half)
        })
        .collect()
}

/// Per-mode factor of a measurement term: displacement and weight lists,
/// full (double-sided) or reduced to canonical representatives.
fn factor_terms(axis: PauliAxis, lattice: &GkpLattice, n_trunc: usize, reduced: bool) -> Vec<(C64, f64)> {
    let ls = lattice.ell_s;
    let pi = std::f64::consts::PI;
    let keep = |half: f64| !reduced || half > 0.0;
    match axis {
        PauliAxis::I => vec![(cr(0.0), 1.0)],
        PauliAxis::X => sssd_terms(n_trunc)
            .into_iter()
            .filter(|&(h, _)| keep(h))
            .map(|(h, w)| (cr(ls * h), w / pi))
            .collect(),
        PauliAxis::Z => sssd_terms(n_trunc)
            .into_iter()
            .filter(|&(h, _)| keep(h))
            .map(|(h, w)| (c(0.0, ls * h), w / pi))
            .collect(),
        PauliAxis::Y => {
            let terms = sssd_terms(n_trunc);
            let mut out = Vec::new();
            for &(hn, _) in terms.iter().filter(|&&(h, _)| keep(h)) {
                for &(hm, _) in &terms {
                    // the Y sum carries no alternating sign: 1/((n+½)(m+½))
                    out.push((c(ls * hn, ls * hm), 1.0 / (hn * hm) / (pi * pi)));
                }
            }
            out
        }
    }
}

/// Dense matrix of a single-mode factor from its full term list.
fn factor_matrix(fock: usize, axis: PauliAxis, lattice: &GkpLattice, n_trunc: usize) -> CMat {
    if axis == PauliAxis::I {
        return identity(fock);
    }
    let mut m = CMat::zeros(fock, fock);
    for (gamma, w) in factor_terms(axis, lattice, n_trunc, false) {
        m += displacement_unitary_fock(fock, gamma).scale(w);
    }
    m
}

/// SSSD measurement operator and its reduced sample plan for one label.
pub fn pauli_measurement_op(
    fock: usize,
    lattice: &GkpLattice,
    label: PauliLabel,
    n_trunc: usize,
) -> Result<(OperatorMatrix, MeasurementPlan)> {
    if n_trunc == 0 {
        return Err(GkpError::validation("plan truncation N must be ≥ 1"));
    }
    lattice.check()?;
    let op = match label {
        PauliLabel::One(a) => factor_matrix(fock, a, lattice, n_trunc),
        PauliLabel::Two(ax, ay) => {
            // tensor layout is y ⊗ x
            factor_matrix(fock, ay, lattice, n_trunc)
                .kronecker(&factor_matrix(fock, ax, lattice, n_trunc))
        }
    };
    let samples = plan_samples_for(label, lattice, n_trunc);
    let plan =
        MeasurementPlan { mode_count: label.mode_count(), truncation: n_trunc, samples };
    Ok((OperatorMatrix::hermitian(op)?, plan))
}

fn plan_samples_for(label: PauliLabel, lattice: &GkpLattice, n_trunc: usize) -> Vec<PlannedSample> {
    match label {
        PauliLabel::One(PauliAxis::I) => Vec::new(),
        PauliLabel::One(a) => factor_terms(a, lattice, n_trunc, true)
            .into_iter()
            .map(|(gamma, weight)| PlannedSample { target: label, gamma, delta: None, weight, kappa: 2.0 })
            .collect(),
        PauliLabel::Two(ax, ay) => {
            if label.is_identity() {
                return Vec::new();
            }
            let non_identity =
                [ax, ay].iter().filter(|&&a| a != PauliAxis::I).count() as i32;
            let kappa = 2.0_f64.powi(non_identity);
            let xs = factor_terms(ax, lattice, n_trunc, ax != PauliAxis::I);
            let ys = factor_terms(ay, lattice, n_trunc, ay != PauliAxis::I);
            let mut out = Vec::with_capacity(xs.len() * ys.len());
            for &(gx, wx) in &xs {
                for &(gy, wy) in &ys {
                    out.push(PlannedSample {
                        target: label,
                        gamma: gx,
                        delta: Some(gy),
                        weight: wx * wy,
                        kappa,
                    });
                }
            }
            out
        }
    }
}

/// The complete plan covering every non-identity Pauli word. Single-mode
/// size is 2N+2N²; two-mode size is 4N+8N²+8N³+4N⁴.
pub fn measurement_plan(mode_count: usize, lattice: &GkpLattice, n_trunc: usize) -> Result<MeasurementPlan> {
    if !(1..=2).contains(&mode_count) {
        return Err(GkpError::validation("plans cover 1 or 2 modes"));
    }
    if n_trunc == 0 {
        return Err(GkpError::validation("plan truncation N must be ≥ 1"));
    }
    lattice.check()?;
    let mut samples = Vec::new();
    for label in PauliLabel::nontrivial(mode_count) {
        samples.extend(plan_samples_for(label, lattice, n_trunc));
    }
    Ok(MeasurementPlan { mode_count, truncation: n_trunc, samples })
}

/// Whether the readout estimates Re⟨D̂⟩ (bare ancilla) or Im⟨D̂⟩ (with the
/// π/2 ancilla rotation applied before the SDF).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutPart {
    Real,
    Imaginary,
}

/// σ̂x-conditioned displacement D̂(γσ̂x/2) on spin ⊗ mode, assembled from
/// the σ̂x projector blocks.
pub fn spin_conditioned_displacement(fock: usize, gamma: C64) -> CMat {
    let dp = displacement_unitary_fock(fock, gamma / 2.0);
    let dm = displacement_unitary_fock(fock, -gamma / 2.0);
    let sum = (&dp + &dm).scale(0.5);
    let diff = (&dp - &dm).scale(0.5);
    let mut u = CMat::zeros(2 * fock, 2 * fock);
    u.view_mut((0, 0), (fock, fock)).copy_from(&sum);
    u.view_mut((0, fock), (fock, fock)).copy_from(&diff);
    u.view_mut((fock, 0), (fock, fock)).copy_from(&diff);
    u.view_mut((fock, fock), (fock, fock)).copy_from(&sum);
    u
}

fn ancilla_ket(part: ReadoutPart) -> [C64; 2] {
    match part {
        ReadoutPart::Real => [cr(1.0), cr(0.0)],
        // R̂x(π/2)|↓⟩ = (|↓⟩ − i|↑⟩)/√2 turns the interference phase by 90°
        ReadoutPart::Imaginary => {
            let r = cr(1.0 / 2.0_f64.sqrt());
            [r, c(0.0, -1.0 / 2.0_f64.sqrt())]
        }
    }
}

/// ⟨σ̂z⟩ from the two spin blocks of a spin⊗anything state vector.
fn sigma_z_of(psi: &CVec) -> f64 {
    let half = psi.len() / 2;
    let mut down = 0.0;
    let mut up = 0.0;
    for i in 0..half {
        down += psi[i].norm_sqr();
    }
    for i in half..psi.len() {
        up += psi[i].norm_sqr();
    }
    down - up
}

/// Constant first-order SDF pulse realizing D̂(γσ̂x/2): φ_s = 0 keeps the
/// spin axis on σ̂x and φ_m steers the displacement direction.
fn readout_pulse(gamma: C64, mode: ModeLabel, params: &IonParams) -> Result<SdfPulse> {
    let phi_m = -gamma.arg() - std::f64::consts::FRAC_PI_2;
    let t = gamma.norm() / params.rabi_rate;
    SdfPulse::constant(mode, params.rabi_rate, t, 1, phi_m, -phi_m, LambDickeOrder::First)
}

/// Simulate the ancilla-interference readout of Fig.-1d type: prepare the
/// spin, apply the spin-conditioned displacement(s), and read ⟨σ̂z⟩, which
/// equals Re⟨D̂(γ)⟩ — or Re⟨D̂(γ)⊗D̂(δ)⟩ — and the imaginary part under the
/// pre-rotation. The single-mode path drives a literal constant SDF pulse;
/// the two-mode path applies the identical per-mode conditioned blocks.
pub fn sdf_readout(
    state: &QuantumState,
    fock: usize,
    gamma: C64,
    delta: Option<C64>,
    part: ReadoutPart,
) -> Result<f64> {
    let spin = ancilla_ket(part);
    match delta {
        None => {
            if state.dim != fock {
                return Err(GkpError::validation(format!(
                    "single-mode readout expects dim {fock}, got {}",
                    state.dim
                )));
            }
            let mut psi = CVec::zeros(2 * fock);
            for (i, a) in state.amplitudes.iter().enumerate() {
                psi[i] = spin[0] * a;
                psi[fock + i] = spin[1] * a;
            }
            let out = if gamma.norm() < 1e-300 {
                psi
            } else {
                let params = IonParams::default();
                let pulse = readout_pulse(gamma, ModeLabel::X, &params)?;
                let cfg = HilbertConfig::spin_mode(fock)?;
                let u = pulse_propagator(&pulse, &params, &cfg)?;
                u.entries * psi
            };
            Ok(sigma_z_of(&out))
        }
        Some(delta) => {
            if state.dim != fock * fock {
                return Err(GkpError::validation(format!(
                    "two-mode readout expects dim {}, got {}",
                    fock * fock,
                    state.dim
                )));
            }
            // Mode vector with index n_y·F + n_x; apply D(γ/2)^{σx} on x and
            // D(δ/2)^{σx} on y inside each σx spin sector, then interfere.
            let dxp = displacement_unitary_fock(fock, gamma / 2.0);
            let dxm = displacement_unitary_fock(fock, -gamma / 2.0);
            let dyp = displacement_unitary_fock(fock, delta / 2.0);
            let dym = displacement_unitary_fock(fock, -delta / 2.0);
            let as_grid = |v: &CVec| -> CMat {
                let mut m = CMat::zeros(fock, fock);
                for ny in 0..fock {
                    for nx in 0..fock {
                        m[(ny, nx)] = v[ny * fock + nx];
                    }
                }
                m
            };
            let grid = as_grid(&state.amplitudes);
            // rows index n_y, columns n_x: (D_y ⊗ D_x)ψ = D_y · Ψ · D_xᵀ
            let plus = &dyp * &grid * dxp.transpose();
            let minus = &dym * &grid * dxm.transpose();
            // spin written in the σx basis: |↓⟩=(|+⟩+|−⟩)/√2, |↑⟩=(|+⟩−|−⟩)/√2
            let inv_sqrt2 = cr(1.0 / 2.0_f64.sqrt());
            let cp = (spin[0] + spin[1]) * inv_sqrt2;
            let cm = (spin[0] - spin[1]) * inv_sqrt2;
            // ⟨σz⟩ = 2Re[c₊* c₋ ⟨ψ₊|ψ₋⟩] with |ψ±⟩ the displaced grids
            let mut ov = cr(0.0);
            for ny in 0..fock {
                for nx in 0..fock {
                    ov += plus[(ny, nx)].conj() * minus[(ny, nx)];
                }
            }
            Ok(2.0 * (cp.conj() * cm * ov).re)
        }
    }
}

/// How sample values are obtained during plan evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementChannel {
    /// Direct operator expectations ⟨D̂(γ)⟩ / ⟨D̂(γ)⊗D̂(δ)⟩.
    Exact,
    /// Values produced by simulating the ancilla readout channel.
    SimulatedSdf,
    /// Binomial ±1 outcomes of the simulated readout, `shots` per sample.
    ShotSampled { shots: u64, seed: u64 },
}

impl MeasurementChannel {
    pub fn tag(&self) -> &'static str {
        match self {
            MeasurementChannel::Exact => "exact",
            MeasurementChannel::SimulatedSdf => "sdf",
            MeasurementChannel::ShotSampled { .. } => "shots",
        }
    }
}

/// One evaluated displacement sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementSample {
    pub gamma: C64,
    pub delta: Option<C64>,
    pub value: C64,
    /// 0 marks a deterministic (exact or simulated) value.
    pub shots: u64,
}

impl DisplacementSample {
    pub fn validate(&self) -> Result<()> {
        if self.value.norm() > 1.0 + 1e-9 && self.shots == 0 {
            return Err(GkpError::validation(format!(
                "|⟨D̂⟩| = {} exceeds 1",
                self.value.norm()
            )));
        }
        Ok(())
    }
}

/// A sample evaluated in the context of a plan, ready for reconstruction
/// and serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub target: PauliLabel,
    pub sample: DisplacementSample,
    pub weight: f64,
    pub kappa: f64,
    pub channel: String,
}

fn exact_sample_value(state: &QuantumState, fock: usize, gamma: C64, delta: Option<C64>) -> C64 {
    match delta {
        None => {
            let d = displacement_unitary_fock(fock, gamma);
            state.expectation(&d)
        }
        Some(delta) => {
            let dx = displacement_unitary_fock(fock, gamma);
            let dy = displacement_unitary_fock(fock, delta);
            // ⟨ψ|(D_y ⊗ D_x)|ψ⟩ without forming the F²×F² product
            let mut grid = CMat::zeros(fock, fock);
            for ny in 0..fock {
                for nx in 0..fock {
                    grid[(ny, nx)] = state.amplitudes[ny * fock + nx];
                }
            }
            let moved = &dy * &grid * dx.transpose();
            let mut ov = cr(0.0);
            for ny in 0..fock {
                for nx in 0..fock {
                    ov += grid[(ny, nx)].conj() * moved[(ny, nx)];
                }
            }
            ov
        }
    }
}

/// Deterministic per-sample RNG stream, independent of evaluation order.
fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mix = (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ChaCha8Rng::seed_from_u64(seed ^ mix)
}

fn binomial_mean(p_up: f64, shots: u64, rng: &mut ChaCha8Rng) -> f64 {
    let p = p_up.clamp(0.0, 1.0);
    let mut acc: i64 = 0;
    for _ in 0..shots {
        if rng.gen::<f64>() < p {
            acc += 1;
        } else {
            acc -= 1;
        }
    }
    acc as f64 / shots as f64
}

/// Evaluate every sample of a plan through the chosen channel.
pub fn evaluate_plan(
    state: &QuantumState,
    fock: usize,
    plan: &MeasurementPlan,
    channel: MeasurementChannel,
) -> Result<Vec<MeasurementRecord>> {
    let expected_dim = fock.pow(plan.mode_count as u32);
    if state.dim != expected_dim {
        return Err(GkpError::validation(format!(
            "state dim {} does not match a {}-mode plan at fock {fock}",
            state.dim, plan.mode_count
        )));
    }
    let mut records = Vec::with_capacity(plan.samples.len());
    for (k, s) in plan.samples.iter().enumerate() {
        let (value, shots) = match channel {
            MeasurementChannel::Exact => {
                (exact_sample_value(state, fock, s.gamma, s.delta), 0)
            }
            MeasurementChannel::SimulatedSdf => {
                let re = sdf_readout(state, fock, s.gamma, s.delta, ReadoutPart::Real)?;
                let im = sdf_readout(state, fock, s.gamma, s.delta, ReadoutPart::Imaginary)?;
                (c(re, im), 0)
            }
            MeasurementChannel::ShotSampled { shots, seed } => {
                if shots == 0 {
                    return Err(GkpError::validation("shot channel needs shots ≥ 1"));
                }
                let re = sdf_readout(state, fock, s.gamma, s.delta, ReadoutPart::Real)?;
                let mut rng = sample_rng(seed, k);
                let est = binomial_mean((1.0 + re) / 2.0, shots, &mut rng);
                (cr(est), shots)
            }
        };
        let sample = DisplacementSample { gamma: s.gamma, delta: s.delta, value, shots };
        sample.validate()?;
        records.push(MeasurementRecord {
            target: s.target,
            sample,
            weight: s.weight,
            kappa: s.kappa,
            channel: channel.tag().to_string(),
        });
    }
    Ok(records)
}

/// Weighted reconstruction ⟨P̂⟩ = Σ κ·w·Re⟨D̂⟩ over each label's samples.
pub fn reconstruct_from_records(
    records: &[MeasurementRecord],
    mode_count: usize,
) -> Result<BTreeMap<PauliLabel, f64>> {
    let mut out: BTreeMap<PauliLabel, f64> = BTreeMap::new();
    for r in records {
        *out.entry(r.target).or_insert(0.0) += r.kappa * r.weight * r.sample.value.re;
    }
    for label in PauliLabel::nontrivial(mode_count) {
        if !out.contains_key(&label) {
            return Err(GkpError::validation(format!(
                "no samples for Pauli label {label}"
            )));
        }
    }
    Ok(out)
}

/// Pauli expectations of a state through a measurement plan.
pub fn pauli_expectations(
    state: &QuantumState,
    fock: usize,
    plan: &MeasurementPlan,
    channel: MeasurementChannel,
) -> Result<BTreeMap<PauliLabel, f64>> {
    let records = evaluate_plan(state, fock, plan, channel)?;
    reconstruct_from_records(&records, plan.mode_count)
}

const RECORD_MAGIC: &str = "gkp-measurements-v1";

/// Serialize measurement records: one row per sample with the target label,
/// γ and δ components (δ blank for single-mode rows), the complex value,
/// shot count (0 = deterministic), and channel tag.
pub fn write_measurement_records(path: &Path, records: &[MeasurementRecord]) -> Result<()> {
    let mut out = String::new();
    out.push_str(RECORD_MAGIC);
    out.push('\n');
    let _ = writeln!(out, "records {}", records.len());
    for r in records {
        let delta = match r.sample.delta {
            Some(d) => format!("{:.11e} {:.11e}", d.re, d.im),
            None => "- -".to_string(),
        };
        let _ = writeln!(
            out,
            "{} {:.11e} {:.11e} {} {:.11e} {:.11e} {} {} {:.11e} {}",
            r.target,
            r.sample.gamma.re,
            r.sample.gamma.im,
            delta,
            r.sample.value.re,
            r.sample.value.im,
            r.sample.shots,
            r.kappa,
            r.weight,
            r.channel,
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_measurement_records(path: &Path) -> Result<Vec<MeasurementRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(RECORD_MAGIC) {
        return Err(GkpError::Format(format!("expected {RECORD_MAGIC} header")));
    }
    let count_line = lines.next().ok_or_else(|| GkpError::Format("missing record count".into()))?;
    let n: usize = count_line
        .strip_prefix("records ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| GkpError::Format(format!("malformed count line {count_line:?}")))?;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let line = lines.next().ok_or_else(|| GkpError::Format("missing record row".into()))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 11 {
            return Err(GkpError::Format(format!("expected 11 columns, got {}", toks.len())));
        }
        let fl = |t: &str| -> Result<f64> {
            t.parse::<f64>()
                .map_err(|_| GkpError::Format(format!("bad number {t:?} in record row")))
        };
        let target: PauliLabel = toks[0].parse()?;
        let gamma = c(fl(toks[1])?, fl(toks[2])?);
        let delta = if toks[3] == "-" && toks[4] == "-" {
            None
        } else {
            Some(c(fl(toks[3])?, fl(toks[4])?))
        };
        let value = c(fl(toks[5])?, fl(toks[6])?);
        let shots: u64 = toks[7]
            .parse()
            .map_err(|_| GkpError::Format(format!("bad shot count {:?}", toks[7])))?;
        let kappa = fl(toks[8])?;
        let weight = fl(toks[9])?;
        records.push(MeasurementRecord {
            target,
            sample: DisplacementSample { gamma, delta, value, shots },
            weight,
            kappa,
            channel: toks[10].to_string(),
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gkp::{synthesize_codewords, LogicalLabel};
    use crate::operators::{hermiticity_residual, max_abs_diff};
    use crate::states::{coherent_state, fock_state};
    use approx::assert_relative_eq;

    fn lattice() -> GkpLattice {
        GkpLattice::square()
    }

    #[test]
    fn logical_paulis_square_to_stabilizers() {
        let f = 40;
        let lat = lattice();
        assert_relative_eq!(lat.ell_s, 2.50663, epsilon = 1e-5);
        let x = logical_pauli_op(f, &lat, PauliAxis::X);
        let sx = displacement_unitary_fock(f, lat.stabilizer_x());
        assert!(max_abs_diff(&(&x.entries * &x.entries), &sx) < 1e-12);
        let z = logical_pauli_op(f, &lat, PauliAxis::Z);
        let sz = displacement_unitary_fock(f, lat.stabilizer_z());
        assert!(max_abs_diff(&(&z.entries * &z.entries), &sz) < 1e-12);
    }

    #[test]
    fn codeword_z_polarization_is_real() {
        let set = synthesize_codewords(50, 5.95).unwrap();
        let z = logical_pauli_op(50, &lattice(), PauliAxis::Z);
        let v = set.state(LogicalLabel::PlusZ).expectation(&z.entries);
        assert!(v.im.abs() < 1e-9);
        assert_relative_eq!(v.re, 0.8896031, epsilon = 1e-4);
    }

    #[test]
    fn plan_counts_match_closed_forms() {
        let lat = lattice();
        for n in 1..=4usize {
            let single = measurement_plan(1, &lat, n).unwrap();
            assert_eq!(single.len(), 2 * n + 2 * n * n, "single-mode N={n}");
            let double = measurement_plan(2, &lat, n).unwrap();
            let want = 4 * n + 8 * n * n + 8 * n * n * n + 4 * n * n * n * n;
            assert_eq!(double.len(), want, "two-mode N={n}");
        }
        assert_eq!(measurement_plan(1, &lat, 2).unwrap().len(), 12);
        assert_eq!(measurement_plan(2, &lat, 2).unwrap().len(), 168);
    }

    #[test]
    fn no_conjugate_pairs_survive_reduction() {
        let lat = lattice();
        for mode_count in [1usize, 2] {
            let plan = measurement_plan(mode_count, &lat, 2).unwrap();
            for label in PauliLabel::nontrivial(mode_count) {
                let samples: Vec<&PlannedSample> = plan.samples_for(label).collect();
                for (i, a) in samples.iter().enumerate() {
                    for b in samples.iter().skip(i + 1) {
                        let mirrored = (a.gamma + b.gamma).norm() < 1e-12
                            && match (a.delta, b.delta) {
                                (None, None) => true,
                                (Some(da), Some(db)) => (da + db).norm() < 1e-12,
                                _ => false,
                            };
                        assert!(!mirrored, "{label}: conjugate pair left in plan");
                    }
                }
            }
        }
    }

    #[test]
    fn x_measurement_n1_expands_by_hand() {
        let f = 30;
        let lat = lattice();
        let (op, plan) =
            pauli_measurement_op(f, &lat, PauliLabel::One(PauliAxis::X), 1).unwrap();
        let half = lat.ell_s / 2.0;
        let d = displacement_unitary_fock(f, cr(half));
        let want = (&d + d.adjoint()).scale(2.0 / std::f64::consts::PI);
        assert!(max_abs_diff(&op.entries, &want) < 1e-12);
        assert_eq!(plan.len(), 1);
        let s = plan.samples[0];
        assert_relative_eq!(s.weight, 2.0 / std::f64::consts::PI, epsilon = 1e-15);
        assert_relative_eq!(s.gamma.re, half, epsilon = 1e-15);
        assert_relative_eq!(s.kappa, 2.0);
    }

    #[test]
    fn measurement_operators_are_hermitian() {
        let f = 30;
        let lat = lattice();
        for axis in PauliAxis::NONTRIVIAL {
            let (op, _) = pauli_measurement_op(f, &lat, PauliLabel::One(axis), 3).unwrap();
            assert!(hermiticity_residual(&op.entries) < 1e-10, "{axis:?}");
        }
        let (op, _) =
            pauli_measurement_op(8, &lat, PauliLabel::Two(PauliAxis::Y, PauliAxis::Z), 2).unwrap();
        assert!(hermiticity_residual(&op.entries) < 1e-10);
    }

    #[test]
    fn sssd_sharpens_logical_readout() {
        let set = synthesize_codewords(50, 5.95).unwrap();
        let zp = set.state(LogicalLabel::PlusZ);
        let lat = lattice();
        let (zm2, _) = pauli_measurement_op(50, &lat, PauliLabel::One(PauliAxis::Z), 2).unwrap();
        let (zm3, _) = pauli_measurement_op(50, &lat, PauliLabel::One(PauliAxis::Z), 3).unwrap();
        let v2 = zp.expectation(&zm2.entries).re;
        let v3 = zp.expectation(&zm3.entries).re;
        assert_relative_eq!(v2, 0.97647, epsilon = 1e-4);
        assert_relative_eq!(v3, 0.99024, epsilon = 1e-4);
        let zl = logical_pauli_op(50, &lat, PauliAxis::Z);
        let bare = zp.expectation(&zl.entries).re;
        assert!(v2 > bare, "SSSD ⟨Ẑ_m⟩ = {v2} should sharpen ⟨Ẑ_L⟩ = {bare}");

        let yp = set.state(LogicalLabel::PlusY);
        let (ym2, _) = pauli_measurement_op(50, &lat, PauliLabel::One(PauliAxis::Y), 2).unwrap();
        assert_relative_eq!(yp.expectation(&ym2.entries).re, 0.95113, epsilon = 1e-4);
    }

    #[test]
    fn plan_reconstruction_equals_operator_expectation() {
        // single mode: the reduction uses only global conjugation, so it is
        // exact for any state, including parity-asymmetric ones
        let f = 40;
        let lat = lattice();
        let st = coherent_state(f, c(0.7, -0.3));
        let plan = measurement_plan(1, &lat, 2).unwrap();
        let exps = pauli_expectations(&st, f, &plan, MeasurementChannel::Exact).unwrap();
        for axis in PauliAxis::NONTRIVIAL {
            let (op, _) = pauli_measurement_op(f, &lat, PauliLabel::One(axis), 2).unwrap();
            let direct = st.expectation(&op.entries).re;
            let rec = exps[&PauliLabel::One(axis)];
            assert_relative_eq!(rec, direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn two_mode_plan_exact_for_parity_even_states() {
        let f = 18;
        let lat = lattice();
        // an even two-mode state: |0,0⟩ + |2,2⟩-ish grid, kept simple
        let mut amp = CVec::zeros(f * f);
        amp[0] = cr(0.8);
        amp[2 * f + 2] = cr(0.5);
        amp[4] = c(0.0, 0.3);
        let st = QuantumState::normalized(amp).unwrap();
        let plan = measurement_plan(2, &lat, 1).unwrap();
        let exps = pauli_expectations(&st, f, &plan, MeasurementChannel::Exact).unwrap();
        for label in PauliLabel::nontrivial(2) {
            let (op, _) = pauli_measurement_op(f, &lat, label, 1).unwrap();
            let direct = st.expectation(&op.entries).re;
            assert_relative_eq!(exps[&label], direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn readout_identities() {
        let f = 30;
        let vac = fock_state(f, 0);
        assert_relative_eq!(
            sdf_readout(&vac, f, cr(0.0), None, ReadoutPart::Real).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let v = sdf_readout(&vac, f, cr(1.0), None, ReadoutPart::Real).unwrap();
        assert_relative_eq!(v, (-0.5_f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn readout_matches_operator_expectation() {
        let f = 24;
        let mut rng = sample_rng(99, 0);
        for _ in 0..20 {
            let amps = CVec::from_iterator(
                f,
                (0..f).map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)),
            );
            let st = QuantumState::normalized(amps).unwrap();
            let gamma = c(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0);
            let d = displacement_unitary_fock(f, gamma);
            let want = st.expectation(&d);
            let re = sdf_readout(&st, f, gamma, None, ReadoutPart::Real).unwrap();
            let im = sdf_readout(&st, f, gamma, None, ReadoutPart::Imaginary).unwrap();
            assert_relative_eq!(re, want.re, epsilon = 1e-8);
            assert_relative_eq!(im, want.im, epsilon = 1e-8);
        }
    }

    #[test]
    fn two_mode_readout_matches_tensor_expectation() {
        let f = 12;
        let mut rng = sample_rng(7, 3);
        let amps = CVec::from_iterator(
            f * f,
            (0..f * f).map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)),
        );
        let st = QuantumState::normalized(amps).unwrap();
        let gamma = c(0.4, -0.2);
        let delta = c(-0.3, 0.6);
        let want = exact_sample_value(&st, f, gamma, Some(delta));
        let re = sdf_readout(&st, f, gamma, Some(delta), ReadoutPart::Real).unwrap();
        let im = sdf_readout(&st, f, gamma, Some(delta), ReadoutPart::Imaginary).unwrap();
        assert_relative_eq!(re, want.re, epsilon = 1e-10);
        assert_relative_eq!(im, want.im, epsilon = 1e-10);
    }

    #[test]
    fn exact_and_simulated_channels_agree() {
        let f = 30;
        let set = synthesize_codewords(f, 3.0).unwrap();
        let st = set.state(LogicalLabel::PlusZ);
        let plan = measurement_plan(1, &lattice(), 2).unwrap();
        let a = pauli_expectations(st, f, &plan, MeasurementChannel::Exact).unwrap();
        let b = pauli_expectations(st, f, &plan, MeasurementChannel::SimulatedSdf).unwrap();
        for (label, va) in &a {
            assert_relative_eq!(*va, b[label], epsilon = 1e-8);
        }
    }

    #[test]
    fn measurement_values_stay_bounded_on_codewords() {
        let set = synthesize_codewords(50, 5.95).unwrap();
        let lat = lattice();
        for label in crate::gkp::LogicalLabel::ALL {
            let st = set.state(label);
            for axis in PauliAxis::NONTRIVIAL {
                let (op, _) = pauli_measurement_op(50, &lat, PauliLabel::One(axis), 2).unwrap();
                let v = st.expectation(&op.entries).re;
                assert!(v.abs() <= 1.05, "{label}/{axis:?}: ⟨P̂_m⟩ = {v}");
            }
        }
    }

    #[test]
    fn shot_noise_shrinks_with_sqrt_shots() {
        let f = 30;
        let set = synthesize_codewords(f, 3.0).unwrap();
        let st = set.state(LogicalLabel::PlusZ);
        let plan = measurement_plan(1, &lattice(), 2).unwrap();
        let exact = pauli_expectations(st, f, &plan, MeasurementChannel::Exact).unwrap();
        // average the reconstruction error over seeds so the 1/√shots
        // scaling shows through the per-draw scatter
        let err_at = |shots: u64| -> f64 {
            let seeds = [3u64, 7, 42, 123, 2024];
            let mut acc = 0.0;
            for &seed in &seeds {
                let est = pauli_expectations(
                    st,
                    f,
                    &plan,
                    MeasurementChannel::ShotSampled { shots, seed },
                )
                .unwrap();
                acc += exact.iter().map(|(l, v)| (est[l] - v).abs()).sum::<f64>()
                    / exact.len() as f64;
            }
            acc / seeds.len() as f64
        };
        let coarse = err_at(100);
        let fine = err_at(10_000);
        assert!(
            fine < 0.5 * coarse,
            "error should fall ~10× from 10² to 10⁴ shots: {coarse:.2e} → {fine:.2e}"
        );
        assert!(fine < 0.05, "mean reconstruction error at 10⁴ shots: {fine:.2e}");
    }

    #[test]
    fn shot_channel_is_deterministic_per_seed() {
        let f = 20;
        let st = coherent_state(f, cr(0.4));
        let plan = measurement_plan(1, &lattice(), 1).unwrap();
        let ch = MeasurementChannel::ShotSampled { shots: 500, seed: 11 };
        let a = pauli_expectations(&st, f, &plan, ch).unwrap();
        let b = pauli_expectations(&st, f, &plan, ch).unwrap();
        assert_eq!(a, b);
        let c2 = pauli_expectations(
            &st,
            f,
            &plan,
            MeasurementChannel::ShotSampled { shots: 500, seed: 12 },
        )
        .unwrap();
        assert_ne!(a, c2, "different seeds must resample");
    }

    #[test]
    fn record_file_round_trips() {
        let f = 20;
        let st = coherent_state(f, c(0.3, 0.2));
        let plan = measurement_plan(1, &lattice(), 1).unwrap();
        let records = evaluate_plan(&st, f, &plan, MeasurementChannel::Exact).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.txt");
        write_measurement_records(&path, &records).unwrap();
        let back = read_measurement_records(&path).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.target, b.target);
            assert!((a.sample.value - b.sample.value).norm() < 1e-10);
            assert_eq!(a.sample.shots, b.sample.shots);
        }
        let rec_a = reconstruct_from_records(&records, 1).unwrap();
        let rec_b = reconstruct_from_records(&back, 1).unwrap();
        for (l, v) in &rec_a {
            assert_relative_eq!(*v, rec_b[l], epsilon = 1e-9);
        }
        std::fs::write(&path, "gkp-measurements-v1\nrecords 1\nX 0 0\n").unwrap();
        assert!(read_measurement_records(&path).is_err());
    }

    #[test]
    fn missing_label_is_an_error() {
        let lat = lattice();
        let (_, partial) = pauli_measurement_op(20, &lat, PauliLabel::One(PauliAxis::X), 1).unwrap();
        let st = coherent_state(20, cr(0.2));
        let records = evaluate_plan(&st, 20, &partial, MeasurementChannel::Exact).unwrap();
        assert!(reconstruct_from_records(&records, 1).is_err());
    }
}
