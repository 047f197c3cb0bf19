//! Phase-modulated state-dependent-force pulses: per-segment Hamiltonians,
//! the sinc-filter resampling chain, hardware-constraint reports, and
//! time-ordered propagators.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{GkpError, Result};
use crate::hilbert::HilbertConfig;
use crate::operators::{annihilation_fock, c, embed, sigma_plus, CMat, OperatorMatrix};
use crate::propagate::{propagate_piecewise, Segment};

/// Which radial mode a pulse drives. The two-mode basis ordering is
/// spin ⊗ mode-y ⊗ mode-x, so `X` is the innermost factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeLabel {
    X,
    Y,
}

impl ModeLabel {
    /// Tensor-factor slot of this mode under the given config.
    pub fn slot(&self, cfg: &HilbertConfig) -> usize {
        match (self, cfg.mode_count) {
            (_, 1) => 0,
            (ModeLabel::Y, _) => 0,
            (ModeLabel::X, _) => 1,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModeLabel::X => "x",
            ModeLabel::Y => "y",
        }
    }
}

impl std::fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModeLabel {
    type Err = GkpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(ModeLabel::X),
            "y" => Ok(ModeLabel::Y),
            other => Err(GkpError::Format(format!("unknown mode label {other:?}"))),
        }
    }
}

/// Truncation order of the Lamb-Dicke expansion of the sideband coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambDickeOrder {
    First,
    Third,
}

impl LambDickeOrder {
    pub fn order(&self) -> u8 {
        match self {
            LambDickeOrder::First => 1,
            LambDickeOrder::Third => 3,
        }
    }

    pub fn from_order(n: u8) -> Result<Self> {
        match n {
            1 => Ok(LambDickeOrder::First),
            3 => Ok(LambDickeOrder::Third),
            other => Err(GkpError::validation(format!(
                "Lamb-Dicke expansion order must be 1 or 3, got {other}"
            ))),
        }
    }
}

/// Trap and laser parameters. Mode frequencies are metadata only: all
/// dynamics live in the rotating frame of the sidebands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonParams {
    pub eta_x: f64,
    pub eta_y: f64,
    /// Default carrier Rabi rate Ω (rad/s) used when constructing pulses.
    pub rabi_rate: f64,
    pub omega_x: f64,
    pub omega_y: f64,
}

impl IonParams {
    pub fn new(eta_x: f64, eta_y: f64, rabi_rate: f64, omega_x: f64, omega_y: f64) -> Result<Self> {
        for (name, v) in [
            ("eta_x", eta_x),
            ("eta_y", eta_y),
            ("rabi_rate", rabi_rate),
            ("omega_x", omega_x),
            ("omega_y", omega_y),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GkpError::validation(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(IonParams { eta_x, eta_y, rabi_rate, omega_x, omega_y })
    }

    pub fn eta_for(&self, mode: ModeLabel) -> f64 {
        match mode {
            ModeLabel::X => self.eta_x,
            ModeLabel::Y => self.eta_y,
        }
    }
}

impl Default for IonParams {
    fn default() -> Self {
        let tau = std::f64::consts::TAU;
        IonParams {
            eta_x: 0.083,
            eta_y: 0.078,
            rabi_rate: tau * 2.4e3,
            omega_x: tau * 1.33e6,
            omega_y: tau * 1.51e6,
        }
    }
}

/// A piecewise-constant SDF waveform on one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfPulse {
    pub mode: ModeLabel,
    /// Carrier Rabi rate Ω (rad/s) of this waveform; overrides the default in
    /// `IonParams` during propagation.
    pub rabi_rate: f64,
    pub segment_duration: f64,
    pub phi_r: Vec<f64>,
    pub phi_b: Vec<f64>,
    pub lamb_dicke_order: LambDickeOrder,
}

impl SdfPulse {
    pub fn new(
        mode: ModeLabel,
        rabi_rate: f64,
        segment_duration: f64,
        phi_r: Vec<f64>,
        phi_b: Vec<f64>,
        lamb_dicke_order: LambDickeOrder,
    ) -> Result<Self> {
        if phi_r.is_empty() || phi_r.len() != phi_b.len() {
            return Err(GkpError::validation(format!(
                "phase trains must be equal-length and non-empty, got {} red / {} blue",
                phi_r.len(),
                phi_b.len()
            )));
        }
        if !(rabi_rate.is_finite() && rabi_rate >= 0.0) {
            return Err(GkpError::validation(format!("Rabi rate must be ≥ 0, got {rabi_rate}")));
        }
        if !(segment_duration.is_finite() && segment_duration > 0.0) {
            return Err(GkpError::validation(format!(
                "segment duration must be positive, got {segment_duration}"
            )));
        }
        if phi_r.iter().chain(&phi_b).any(|p| !p.is_finite()) {
            return Err(GkpError::validation("phases must be finite"));
        }
        Ok(SdfPulse { mode, rabi_rate, segment_duration, phi_r, phi_b, lamb_dicke_order })
    }

    /// Constant-phase pulse split into `n_seg` equal segments.
    pub fn constant(
        mode: ModeLabel,
        rabi_rate: f64,
        total_duration: f64,
        n_seg: usize,
        phi_r: f64,
        phi_b: f64,
        lamb_dicke_order: LambDickeOrder,
    ) -> Result<Self> {
        if n_seg == 0 {
            return Err(GkpError::validation("a pulse needs at least one segment"));
        }
        SdfPulse::new(
            mode,
            rabi_rate,
            total_duration / n_seg as f64,
            vec![phi_r; n_seg],
            vec![phi_b; n_seg],
            lamb_dicke_order,
        )
    }

    pub fn n_segments(&self) -> usize {
        self.phi_r.len()
    }

    pub fn total_duration(&self) -> f64 {
        self.segment_duration * self.n_segments() as f64
    }

    /// Time-reversed pulse with both sideband phases advanced by π, which
    /// negates every segment Hamiltonian: the propagator is the exact inverse
    /// at any Lamb-Dicke order.
    pub fn inverse(&self) -> SdfPulse {
        let flip = |ph: &[f64]| -> Vec<f64> {
            ph.iter().rev().map(|p| p + std::f64::consts::PI).collect()
        };
        SdfPulse {
            mode: self.mode,
            rabi_rate: self.rabi_rate,
            segment_duration: self.segment_duration,
            phi_r: flip(&self.phi_r),
            phi_b: flip(&self.phi_b),
            lamb_dicke_order: self.lamb_dicke_order,
        }
    }
}

/// Hardware-motivated limits a waveform must respect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseConstraints {
    /// Number of optimizable (raw) segments before filtering.
    pub n_opt: usize,
    /// Slew-rate budget expressed as the dimensionless product SR×T (radians).
    pub slew_rate_times_t: f64,
    /// Low-pass cutoff of the sinc filter (rad/s).
    pub sinc_cutoff: f64,
    pub zero_start: bool,
    pub t_max: f64,
}

impl PulseConstraints {
    pub fn new(
        n_opt: usize,
        slew_rate_times_t: f64,
        sinc_cutoff: f64,
        zero_start: bool,
        t_max: f64,
    ) -> Result<Self> {
        if n_opt < 2 {
            return Err(GkpError::validation("need at least two optimizable segments"));
        }
        if !(sinc_cutoff.is_finite() && sinc_cutoff > 0.0) {
            return Err(GkpError::validation(format!("sinc cutoff must be positive, got {sinc_cutoff}")));
        }
        if !(slew_rate_times_t.is_finite() && slew_rate_times_t >= 0.0) {
            return Err(GkpError::validation("SR×T must be ≥ 0"));
        }
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(GkpError::validation("t_max must be positive"));
        }
        Ok(PulseConstraints { n_opt, slew_rate_times_t, sinc_cutoff, zero_start, t_max })
    }
}

/// Per-segment SDF Hamiltonian
/// (Ω/2) σ̂⁺[(â − η²/2 ââ†â) e^{iφ_r} + (â† − η²/2 â†ââ†) e^{iφ_b}] + h.c.,
/// embedded on the pulse's mode. First order drops the η² corrections.
pub fn sdf_hamiltonian(
    pulse: &SdfPulse,
    params: &IonParams,
    cfg: &HilbertConfig,
    segment: usize,
) -> Result<OperatorMatrix> {
    cfg.require_spin()?;
    if segment >= pulse.n_segments() {
        return Err(GkpError::validation(format!(
            "segment {segment} out of range for a {}-segment pulse",
            pulse.n_segments()
        )));
    }
    let eta = params.eta_for(pulse.mode);
    let (lower, raise) = sideband_parts(cfg.fock_truncation, eta, pulse.lamb_dicke_order);
    let m = sideband_drive(&lower, &raise, pulse.phi_r[segment], pulse.phi_b[segment]);
    let slot = pulse.mode.slot(cfg);
    let mut mode_ops: Vec<Option<&CMat>> = vec![None; cfg.mode_count];
    mode_ops[slot] = Some(&m);
    let half = embed(cfg, Some(&sigma_plus()), &mode_ops)?.scale(pulse.rabi_rate / 2.0);
    OperatorMatrix::hermitian(&half + half.adjoint())
}

/// Lowering/raising factors of the SDF drive at the requested Lamb-Dicke
/// order, on the bare mode space.
pub fn sideband_parts(fock: usize, eta: f64, order: LambDickeOrder) -> (CMat, CMat) {
    let a = annihilation_fock(fock);
    let ad = a.adjoint();
    match order {
        LambDickeOrder::First => (a.clone(), ad),
        LambDickeOrder::Third => {
            let corr = eta * eta / 2.0;
            let lower = &a - (&a * &ad * &a).scale(corr);
            let raise = &ad - (&ad * &a * &ad).scale(corr);
            (lower, raise)
        }
    }
}

/// M(φ_r, φ_b) = lower·e^{iφ_r} + raise·e^{iφ_b} on the bare mode space.
pub fn sideband_drive(lower: &CMat, raise: &CMat, phi_r: f64, phi_b: f64) -> CMat {
    lower.map(|x| x * c(0.0, phi_r).exp()) + raise.map(|x| x * c(0.0, phi_b).exp())
}

/// Spin⊗mode Hamiltonian (Ω/2)(σ̂⁺⊗M + h.c.) assembled block-wise for the
/// single-mode case; spin index 0 is |↓⟩.
pub fn spin_mode_hamiltonian(m: &CMat, rabi_rate: f64) -> CMat {
    let f = m.nrows();
    let mut h = CMat::zeros(2 * f, 2 * f);
    let half = m.scale(rabi_rate / 2.0);
    let half_dag = half.adjoint();
    h.view_mut((f, 0), (f, f)).copy_from(&half);
    h.view_mut((0, f), (f, f)).copy_from(&half_dag);
    h
}

/// Row-stochastic resampling matrix of the windowed-sinc filter chain:
/// raw phases are read as a zero-order hold over `total_duration`, smoothed
/// by a Hamming-windowed sinc kernel (half-width 4/f_c, edge replication),
/// and sampled at the `n_seg` segment centers. Rows are normalized so a
/// constant train passes through unchanged.
pub fn filter_matrix(
    n_opt: usize,
    n_seg: usize,
    total_duration: f64,
    cutoff: f64,
) -> Result<DMatrix<f64>> {
    if n_opt < 2 || n_seg == 0 {
        return Err(GkpError::validation("filter needs n_opt ≥ 2 and n_seg ≥ 1"));
    }
    if !(total_duration.is_finite() && total_duration > 0.0) {
        return Err(GkpError::validation("total duration must be positive"));
    }
    if !(cutoff.is_finite() && cutoff > 0.0) {
        return Err(GkpError::validation("cutoff must be positive"));
    }
    let th = 4.0 / cutoff;
    if th > total_duration {
        eprintln!(
            "warning: sinc kernel half-width {th:.3e} s exceeds the pulse duration \
             {total_duration:.3e} s; the filtered train cannot represent any variation"
        );
    }
    let m_fine = 16 * n_seg.max(n_opt);
    let dt_f = total_duration / m_fine as f64;
    let nk = (th / dt_f).ceil() as i64;
    let raw_dt = total_duration / n_opt as f64;
    let seg_dt = total_duration / n_seg as f64;
    let mut w = DMatrix::<f64>::zeros(n_seg, n_opt);
    // kernel taps h(t) = sinc(f_c t / π) · f_c/π · Hamming(t/t_h) · dt_f
    let mut taps = Vec::with_capacity((2 * nk + 1) as usize);
    for k in -nk..=nk {
        let t = k as f64 * dt_f;
        if t.abs() > th {
            taps.push((t, 0.0));
            continue;
        }
        let x = cutoff * t;
        let sinc = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
        let ham = 0.54 + 0.46 * (std::f64::consts::PI * t / th).cos();
        taps.push((t, sinc * cutoff / std::f64::consts::PI * ham * dt_f));
    }
    for i in 0..n_seg {
        let ti = (i as f64 + 0.5) * seg_dt;
        for &(t, hv) in &taps {
            let src = ti - t;
            let ridx = ((src / raw_dt).floor() as i64).clamp(0, n_opt as i64 - 1) as usize;
            w[(i, ridx)] += hv;
        }
    }
    for mut row in w.row_iter_mut() {
        let s: f64 = row.iter().sum();
        row /= s;
    }
    Ok(w)
}

pub fn filter_and_resample(
    raw_phases: &[f64],
    constraints: &PulseConstraints,
    n_seg: usize,
    total_duration: f64,
) -> Result<Vec<f64>> {
    if raw_phases.len() != constraints.n_opt {
        return Err(GkpError::validation(format!(
            "expected {} raw phases, got {}",
            constraints.n_opt,
            raw_phases.len()
        )));
    }
    let w = filter_matrix(constraints.n_opt, n_seg, total_duration, constraints.sinc_cutoff)?;
    let raw = DMatrix::from_column_slice(raw_phases.len(), 1, raw_phases);
    let filtered = w * raw;
    let shift = if constraints.zero_start { filtered[(0, 0)] } else { 0.0 };
    Ok(filtered.column(0).iter().map(|p| p - shift).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintReport {
    /// Largest adjacent-segment phase step over both sideband channels (rad).
    pub max_adjacent_step: f64,
    /// Allowed per-segment step: (SR×T)/N_seg (rad).
    pub step_budget: f64,
    pub slew_compliant: bool,
    pub zero_start_required: bool,
    pub zero_start_compliant: bool,
    pub duration: f64,
    pub t_max: f64,
    pub duration_compliant: bool,
}

impl ConstraintReport {
    pub fn compliant(&self) -> bool {
        self.slew_compliant
            && (!self.zero_start_required || self.zero_start_compliant)
            && self.duration_compliant
    }
}

pub fn validate_constraints(pulse: &SdfPulse, constraints: &PulseConstraints) -> ConstraintReport {
    let max_step = |ph: &[f64]| -> f64 {
        ph.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
    };
    let max_adjacent_step = max_step(&pulse.phi_r).max(max_step(&pulse.phi_b));
    let step_budget = constraints.slew_rate_times_t / pulse.n_segments() as f64;
    let duration = pulse.total_duration();
    let zero_start_compliant = pulse.phi_r[0].abs() < 1e-12 && pulse.phi_b[0].abs() < 1e-12;
    ConstraintReport {
        max_adjacent_step,
        step_budget,
        slew_compliant: max_adjacent_step <= step_budget + 1e-12,
        zero_start_required: constraints.zero_start,
        zero_start_compliant,
        duration,
        t_max: constraints.t_max,
        duration_compliant: duration <= constraints.t_max * (1.0 + 1e-12),
    }
}

pub fn pulse_propagator(
    pulse: &SdfPulse,
    params: &IonParams,
    cfg: &HilbertConfig,
) -> Result<OperatorMatrix> {
    let mut segments: Vec<Segment> = Vec::with_capacity(pulse.n_segments());
    for k in 0..pulse.n_segments() {
        segments.push((sdf_hamiltonian(pulse, params, cfg, k)?, pulse.segment_duration));
    }
    propagate_piecewise(&segments)
}

pub fn sequence_propagator(
    pulses: &[SdfPulse],
    params: &IonParams,
    cfg: &HilbertConfig,
) -> Result<OperatorMatrix> {
    let mut acc = crate::operators::identity(cfg.dim());
    for pulse in pulses {
        let u = pulse_propagator(pulse, params, cfg)?;
        acc = &u.entries * acc;
    }
    OperatorMatrix::new(acc)
}

const WAVEFORM_MAGIC: &str = "gkp-waveform-v1";

/// Serialize a pulse with 12-significant-digit phases. A file read back and
/// rewritten reproduces itself byte for byte; in-memory phases are quantized
/// to the stored precision on the first write.
pub fn write_waveform(path: &Path, pulse: &SdfPulse, params: &IonParams) -> Result<()> {
    let mut out = String::new();
    out.push_str(WAVEFORM_MAGIC);
    out.push('\n');
    let _ = writeln!(out, "mode {}", pulse.mode);
    let _ = writeln!(out, "rabi_rate_rad_s {:.11e}", pulse.rabi_rate);
    let _ = writeln!(out, "segment_duration_s {:.11e}", pulse.segment_duration);
    let _ = writeln!(out, "lamb_dicke_order {}", pulse.lamb_dicke_order.order());
    let _ = writeln!(out, "eta {:.11e}", params.eta_for(pulse.mode));
    let _ = writeln!(out, "segments {}", pulse.n_segments());
    for k in 0..pulse.n_segments() {
        let _ = writeln!(out, "{:.11e} {:.11e}", pulse.phi_r[k], pulse.phi_b[k]);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a waveform file; returns the pulse and the recorded Lamb-Dicke
/// parameter η.
pub fn read_waveform(path: &Path) -> Result<(SdfPulse, f64)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != WAVEFORM_MAGIC {
        return Err(GkpError::Format(format!(
            "unsupported waveform header {magic:?}, expected {WAVEFORM_MAGIC:?}"
        )));
    }
    let mut field = |name: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| GkpError::Format(format!("missing header field {name}")))?;
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| GkpError::Format(format!("malformed header line {line:?}")))?;
        if k != name {
            return Err(GkpError::Format(format!("expected header field {name}, found {k}")));
        }
        Ok(v.to_string())
    };
    let parse_f64 = |name: &str, v: &str| -> Result<f64> {
        v.parse::<f64>()
            .map_err(|_| GkpError::Format(format!("field {name} is not a number: {v:?}")))
    };
    let mode: ModeLabel = field("mode")?.parse()?;
    let rabi = parse_f64("rabi_rate_rad_s", &field("rabi_rate_rad_s")?)?;
    let seg_dur = parse_f64("segment_duration_s", &field("segment_duration_s")?)?;
    let order_raw = field("lamb_dicke_order")?
        .parse::<u8>()
        .map_err(|_| GkpError::Format("lamb_dicke_order is not an integer".into()))?;
    let order = LambDickeOrder::from_order(order_raw)?;
    let eta = parse_f64("eta", &field("eta")?)?;
    let n: usize = field("segments")?
        .parse()
        .map_err(|_| GkpError::Format("segment count is not an integer".into()))?;
    let mut phi_r = Vec::with_capacity(n);
    let mut phi_b = Vec::with_capacity(n);
    for k in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| GkpError::Format(format!("missing segment record {k}")))?;
        let mut it = line.split_whitespace();
        let (r, b) = (it.next(), it.next());
        match (r, b, it.next()) {
            (Some(r), Some(b), None) => {
                phi_r.push(parse_f64("phi_r", r)?);
                phi_b.push(parse_f64("phi_b", b)?);
            }
            _ => return Err(GkpError::Format(format!("malformed segment record {line:?}"))),
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(GkpError::Format("trailing content after segment records".into()));
    }
    Ok((SdfPulse::new(mode, rabi, seg_dur, phi_r, phi_b, order)?, eta))
}
