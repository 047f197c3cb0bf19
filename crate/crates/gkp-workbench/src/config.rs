use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use gkp_sim::sdf::ModeLabel;
use gkp_sim::noise::{
    DephasingModel, GammaConvention, PipelineKind, PostSelectionPolicy, ReadoutKind, Scenario,
};
use gkp_sim::optimize::{GateLabel, OptimizationProblem, PrepTarget, ProblemKind};
use gkp_sim::gkp::LogicalLabel;
use gkp_sim::sdf::{IonParams, LambDickeOrder, PulseConstraints};

use crate::error::{Result, WorkbenchError};

pub const FORMAT_VERSION: u32 = 1;

fn default_format_version() -> u32 {
    FORMAT_VERSION
}

fn default_threads() -> usize {
    1
}

/// Fully resolved record of one workbench run. Doubles as the config file
/// format: a config is a manifest with only the sections it cares about.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    #[serde(default)]
    pub command: String,
    #[serde(default)]
    pub preset: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub output_dir: String,
    /// Input file paths keyed by role, e.g. "prep_x.+Z" or "gate.1".
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codewords: Option<CodewordParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wigner: Option<WignerParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tomography: Option<TomographyParams>,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            format_version: FORMAT_VERSION,
            command: String::new(),
            preset: String::new(),
            seed: 0,
            threads: 1,
            output_dir: String::new(),
            inputs: BTreeMap::new(),
            codewords: None,
            wigner: None,
            problem: None,
            pipeline: None,
            tomography: None,
        }
    }
}

impl RunManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let manifest: RunManifest = toml::from_str(text)
            .map_err(|e| WorkbenchError::validation(format!("bad manifest/config TOML: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(WorkbenchError::validation(format!(
                "unsupported format_version {} (this build reads version {})",
                manifest.format_version, FORMAT_VERSION
            )));
        }
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| WorkbenchError::io(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| WorkbenchError::validation(format!("serializing manifest: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodewordParams {
    pub fock: usize,
    pub j_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WignerParams {
    pub half_range: f64,
    pub points_per_axis: usize,
}

/// Mirror of `OptimizationProblem` in plain serializable fields with units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemParams {
    /// "state_prep" | "sq_gate" | "cz_gate" | "bell_prep"
    pub kind: String,
    /// For state_prep: "vacuum" or a logical label such as "+Z".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// For sq_gate: "rx" | "rz" | "t".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<String>,
    pub fock: usize,
    pub j_ratio: f64,
    pub eta_x: f64,
    pub eta_y: f64,
    pub rabi_rate_rad_per_s: f64,
    pub omega_x_rad_per_s: f64,
    pub omega_y_rad_per_s: f64,
    pub n_opt: Vec<usize>,
    pub n_seg: Vec<usize>,
    pub slew_rate_times_t_rad: Vec<f64>,
    pub t_pulse_max_s: Vec<f64>,
    pub sinc_cutoff_rad_per_s: f64,
    pub zero_start: bool,
    pub epsilon: f64,
    pub t_total_max_s: f64,
    /// "first" | "third"
    pub lamb_dicke_order: String,
    pub max_iters: usize,
    pub restarts: usize,
    pub init_duration_fraction: f64,
}

impl ProblemParams {
    pub fn from_problem(p: &OptimizationProblem) -> Self {
        let (kind, target, gate) = match p.kind {
            ProblemKind::StatePrep(PrepTarget::Vacuum) => {
                ("state_prep", Some("vacuum".to_string()), None)
            }
            ProblemKind::StatePrep(PrepTarget::Codeword(label)) => {
                ("state_prep", Some(label.as_str().to_string()), None)
            }
            ProblemKind::SqGate(g) => ("sq_gate", None, Some(gate_to_str(g).to_string())),
            ProblemKind::CzGate => ("cz_gate", None, None),
            ProblemKind::BellPrep => ("bell_prep", None, None),
        };
        ProblemParams {
            kind: kind.to_string(),
            target,
            gate,
            fock: p.fock,
            j_ratio: p.j_ratio,
            eta_x: p.ion.eta_x,
            eta_y: p.ion.eta_y,
            rabi_rate_rad_per_s: p.ion.rabi_rate,
            omega_x_rad_per_s: p.ion.omega_x,
            omega_y_rad_per_s: p.ion.omega_y,
            n_opt: p.constraints.iter().map(|c| c.n_opt).collect(),
            n_seg: p.n_segs.clone(),
            slew_rate_times_t_rad: p.constraints.iter().map(|c| c.slew_rate_times_t).collect(),
            t_pulse_max_s: p.constraints.iter().map(|c| c.t_max).collect(),
            sinc_cutoff_rad_per_s: p.constraints.first().map(|c| c.sinc_cutoff).unwrap_or(0.0),
            zero_start: p.constraints.first().map(|c| c.zero_start).unwrap_or(true),
            epsilon: p.epsilon,
            t_total_max_s: p.t_max,
            lamb_dicke_order: match p.lamb_dicke_order {
                LambDickeOrder::First => "first".to_string(),
                LambDickeOrder::Third => "third".to_string(),
            },
            max_iters: p.max_iters,
            restarts: p.restarts,
            init_duration_fraction: p.init_duration_fraction,
        }
    }

    pub fn to_problem(&self) -> Result<OptimizationProblem> {
        let kind = match self.kind.as_str() {
            "state_prep" => {
                let t = self.target.as_deref().unwrap_or("+Z");
                ProblemKind::StatePrep(parse_prep_target(t)?)
            }
            "sq_gate" => {
                let g = self.gate.as_deref().ok_or_else(|| {
                    WorkbenchError::validation("sq_gate problems need a `gate` field (rx|rz|t)")
                })?;
                ProblemKind::SqGate(parse_gate(g)?)
            }
            "cz_gate" => ProblemKind::CzGate,
            "bell_prep" => ProblemKind::BellPrep,
            other => {
                return Err(WorkbenchError::validation(format!(
                    "unknown problem kind {other:?} (state_prep|sq_gate|cz_gate|bell_prep)"
                )))
            }
        };
        let slots = self.n_opt.len();
        if self.n_seg.len() != slots
            || self.slew_rate_times_t_rad.len() != slots
            || self.t_pulse_max_s.len() != slots
        {
            return Err(WorkbenchError::validation(
                "n_opt, n_seg, slew_rate_times_t_rad, t_pulse_max_s must have equal lengths",
            ));
        }
        let ion = IonParams::new(
            self.eta_x,
            self.eta_y,
            self.rabi_rate_rad_per_s,
            self.omega_x_rad_per_s,
            self.omega_y_rad_per_s,
        )?;
        let mut constraints = Vec::with_capacity(slots);
        for i in 0..slots {
            constraints.push(PulseConstraints::new(
                self.n_opt[i],
                self.slew_rate_times_t_rad[i],
                self.sinc_cutoff_rad_per_s,
                self.zero_start,
                self.t_pulse_max_s[i],
            )?);
        }
        let problem = OptimizationProblem {
            kind,
            fock: self.fock,
            j_ratio: self.j_ratio,
            ion,
            constraints,
            n_segs: self.n_seg.clone(),
            epsilon: self.epsilon,
            t_max: self.t_total_max_s,
            lamb_dicke_order: parse_ld_order(&self.lamb_dicke_order)?,
            max_iters: self.max_iters,
            restarts: self.restarts,
            init_duration_fraction: self.init_duration_fraction,
        };
        problem.validate()?;
        Ok(problem)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub name: String,
    pub gamma_per_s: f64,
    /// "angular" | "cyclic"
    pub gamma_convention: String,
    pub nbar: f64,
    pub trajectories: usize,
}

impl ScenarioParams {
    pub fn to_scenario(&self) -> Result<Scenario> {
        Ok(Scenario {
            name: self.name.clone(),
            model: DephasingModel::new(self.gamma_per_s, parse_convention(&self.gamma_convention)?)?,
            nbar: self.nbar,
            trajectories: self.trajectories,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineParams {
    /// "sq_gate_qpt" | "cz_qpt" | "bell_qst"
    pub kind: String,
    pub fock: usize,
    pub j_ratio: f64,
    pub eta_x: f64,
    pub eta_y: f64,
    pub rabi_rate_rad_per_s: f64,
    pub omega_x_rad_per_s: f64,
    pub omega_y_rad_per_s: f64,
    pub gamma_per_s: f64,
    /// "angular" | "cyclic"
    pub gamma_convention: String,
    pub nbar: f64,
    pub trajectories: usize,
    /// "sssd" | "logical_pauli"
    pub readout: String,
    pub sssd_truncation: usize,
    /// "mid_circuit" | "final_only"
    pub post_selection: String,
    /// Ideal gate for process fidelity: "rx" | "rz" | "t" | "cz".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ideal_gate: Option<String>,
    /// Row key used when comparing this run against the curated reference
    /// table in `report`, e.g. "process_fidelity.dephased.rx".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_key: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<ScenarioParams>,
}

impl PipelineParams {
    pub fn kind_enum(&self) -> Result<PipelineKind> {
        match self.kind.as_str() {
            "sq_gate_qpt" => Ok(PipelineKind::SqGateQpt),
            "cz_qpt" => Ok(PipelineKind::CzQpt),
            "bell_qst" => Ok(PipelineKind::BellQst),
            other => Err(WorkbenchError::validation(format!(
                "unknown pipeline kind {other:?} (sq_gate_qpt|cz_qpt|bell_qst)"
            ))),
        }
    }

    pub fn ion(&self) -> Result<IonParams> {
        Ok(IonParams::new(
            self.eta_x,
            self.eta_y,
            self.rabi_rate_rad_per_s,
            self.omega_x_rad_per_s,
            self.omega_y_rad_per_s,
        )?)
    }

    pub fn model(&self) -> Result<DephasingModel> {
        Ok(DephasingModel::new(self.gamma_per_s, parse_convention(&self.gamma_convention)?)?)
    }

    pub fn readout_enum(&self) -> Result<ReadoutKind> {
        match self.readout.as_str() {
            "sssd" => Ok(ReadoutKind::Sssd { n_trunc: self.sssd_truncation }),
            "logical_pauli" => Ok(ReadoutKind::LogicalPauli),
            other => Err(WorkbenchError::validation(format!(
                "unknown readout {other:?} (sssd|logical_pauli)"
            ))),
        }
    }

    pub fn post_selection_enum(&self) -> Result<PostSelectionPolicy> {
        match self.post_selection.as_str() {
            "mid_circuit" => Ok(PostSelectionPolicy::MidCircuitSpinDown),
            "final_only" => Ok(PostSelectionPolicy::FinalOnly),
            other => Err(WorkbenchError::validation(format!(
                "unknown post_selection {other:?} (mid_circuit|final_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TomographyParams {
    pub qubits: usize,
    /// "qst" | "qpt"
    pub kind: String,
    /// Ideal gate for QPT process fidelity: "rx" | "rz" | "t" | "cz".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ideal_gate: Option<String>,
}

pub fn parse_prep_target(s: &str) -> Result<PrepTarget> {
    if s.eq_ignore_ascii_case("vacuum") {
        return Ok(PrepTarget::Vacuum);
    }
    let label: LogicalLabel = s
        .parse()
        .map_err(|_| WorkbenchError::validation(format!("unknown prep target {s:?}")))?;
    Ok(PrepTarget::Codeword(label))
}

pub fn parse_gate(s: &str) -> Result<GateLabel> {
    match s.to_ascii_lowercase().as_str() {
        "rx" => Ok(GateLabel::RxMinusHalf),
        "rz" => Ok(GateLabel::RzMinusHalf),
        "t" => Ok(GateLabel::TGate),
        other => Err(WorkbenchError::validation(format!("unknown gate {other:?} (rx|rz|t)"))),
    }
}

pub fn gate_to_str(g: GateLabel) -> &'static str {
    match g {
        GateLabel::RxMinusHalf => "rx",
        GateLabel::RzMinusHalf => "rz",
        GateLabel::TGate => "t",
    }
}

pub fn parse_ld_order(s: &str) -> Result<LambDickeOrder> {
    match s.to_ascii_lowercase().as_str() {
        "first" => Ok(LambDickeOrder::First),
        "third" => Ok(LambDickeOrder::Third),
        other => {
            Err(WorkbenchError::validation(format!("unknown Lamb-Dicke order {other:?} (first|third)")))
        }
    }
}

pub fn parse_convention(s: &str) -> Result<GammaConvention> {
    match s.to_ascii_lowercase().as_str() {
        "angular" => Ok(GammaConvention::Angular),
        "cyclic" => Ok(GammaConvention::Cyclic),
        other => Err(WorkbenchError::validation(format!(
            "unknown gamma convention {other:?} (angular|cyclic)"
        ))),
    }
}

pub fn parse_mode(s: &str) -> Result<ModeLabel> {
    s.parse()
        .map_err(|_| WorkbenchError::validation(format!("unknown mode {s:?} (x|y)")))
}

/// Preset problem matching the named scale; `kind`/`target`/`gate` select the
/// task within the scale.
pub fn preset_problem(
    preset: &str,
    kind: &str,
    target: Option<&str>,
    gate: Option<&str>,
) -> Result<OptimizationProblem> {
    let prep = || parse_prep_target(target.unwrap_or("+Z"));
    let sq = || parse_gate(gate.unwrap_or("rx"));
    let p = match (preset, kind) {
        ("desk", "state_prep") => OptimizationProblem::desk_state_prep(prep()?)?,
        ("desk", "sq_gate") => OptimizationProblem::desk_sq_gate(sq()?)?,
        ("desk", "cz_gate") => OptimizationProblem::desk_cz()?,
        ("desk", "bell_prep") => OptimizationProblem::desk_bell()?,
        ("paper", "state_prep") => OptimizationProblem::paper_state_prep(prep()?)?,
        ("paper", "sq_gate") => OptimizationProblem::paper_sq_gate(sq()?)?,
        ("paper", "cz_gate") => OptimizationProblem::paper_cz()?,
        ("paper", "bell_prep") => OptimizationProblem::paper_bell()?,
        (p, k) => {
            return Err(WorkbenchError::validation(format!(
                "no preset for preset={p:?} kind={k:?} (presets: desk|paper; kinds: state_prep|sq_gate|cz_gate|bell_prep)"
            )))
        }
    };
    Ok(p)
}

pub fn preset_codewords(preset: &str) -> Result<CodewordParams> {
    match preset {
        "desk" => Ok(CodewordParams { fock: 20, j_ratio: 3.0 }),
        "paper" => Ok(CodewordParams { fock: 50, j_ratio: 5.95 }),
        other => Err(WorkbenchError::validation(format!("unknown preset {other:?} (desk|paper)"))),
    }
}

pub fn preset_wigner(preset: &str) -> Result<WignerParams> {
    match preset {
        "desk" => Ok(WignerParams { half_range: 3.5, points_per_axis: 61 }),
        "paper" => Ok(WignerParams { half_range: 4.5, points_per_axis: 81 }),
        other => Err(WorkbenchError::validation(format!("unknown preset {other:?} (desk|paper)"))),
    }
}

pub fn preset_pipeline(preset: &str, kind: &str) -> Result<PipelineParams> {
    let ion = IonParams::default();
    let (fock, j_ratio, trajectories) = match preset {
        "desk" => (12, 2.0, 20),
        "paper" => (50, 5.95, 1000),
        other => {
            return Err(WorkbenchError::validation(format!("unknown preset {other:?} (desk|paper)")))
        }
    };
    let ideal_gate = match kind {
        "sq_gate_qpt" => Some("rx".to_string()),
        "cz_qpt" => Some("cz".to_string()),
        "bell_qst" => None,
        other => {
            return Err(WorkbenchError::validation(format!(
                "unknown pipeline kind {other:?} (sq_gate_qpt|cz_qpt|bell_qst)"
            )))
        }
    };
    Ok(PipelineParams {
        kind: kind.to_string(),
        fock,
        j_ratio,
        eta_x: ion.eta_x,
        eta_y: ion.eta_y,
        rabi_rate_rad_per_s: ion.rabi_rate,
        omega_x_rad_per_s: ion.omega_x,
        omega_y_rad_per_s: ion.omega_y,
        gamma_per_s: 18.0,
        gamma_convention: "angular".to_string(),
        nbar: 0.0,
        trajectories,
        readout: "sssd".to_string(),
        sssd_truncation: 2,
        post_selection: "mid_circuit".to_string(),
        ideal_gate,
        reference_key: None,
        scenarios: Vec::new(),
    })
}

pub fn preset_tomography(preset: &str) -> Result<TomographyParams> {
    match preset {
        "desk" | "paper" => {
            Ok(TomographyParams { qubits: 1, kind: "qst".to_string(), ideal_gate: None })
        }
        other => Err(WorkbenchError::validation(format!("unknown preset {other:?} (desk|paper)"))),
    }
}
