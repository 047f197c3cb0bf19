use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex;

use gkp_sim::gkp::{synthesize_codewords, LogicalLabel};
use gkp_sim::noise::{error_budget, run_pipeline, ExperimentPipeline, PipelineKind, Scenario};
use gkp_sim::optimize::{logical_coefficients, optimize};
use gkp_sim::sdf::SdfPulse;
use gkp_sim::tomography::{
    fit_chi, process_fidelity, project_physical_state, reconstruct_logical_state,
    LogicalDensityMatrix,
};
use gkp_sim::wigner::{square_grid, wigner_state};

use crate::artifacts::{
    label_slug, parse_fidelity_table, parse_squeezing, read_waveform, render_chi_bars,
    render_codewords, render_expectations, render_fidelity_table, render_matrix,
    render_pauli_bars, render_squeezing, render_waveform, render_wigner, Bundle,
};
use crate::config::{parse_gate, RunManifest};
use crate::error::{Result, WorkbenchError};

type C64 = Complex<f64>;
type CMat = DMatrix<C64>;

/// QPT probe preparations, in the order probe files are keyed.
pub const QPT_PROBES: [LogicalLabel; 4] =
    [LogicalLabel::PlusZ, LogicalLabel::MinusZ, LogicalLabel::PlusX, LogicalLabel::PlusY];

#[derive(Debug)]
pub struct CmdOutcome {
    pub bundle_dir: PathBuf,
    pub converged: bool,
    pub summary: String,
}

struct Timing {
    start: Instant,
    phases: Vec<(String, f64)>,
}

impl Timing {
    fn new() -> Self {
        Timing { start: Instant::now(), phases: Vec::new() }
    }

    fn lap(&mut self, phase: &str) {
        let t = self.start.elapsed().as_secs_f64();
        let done: f64 = self.phases.iter().map(|(_, s)| s).sum();
        self.phases.push((phase.to_string(), t - done));
    }

    fn render(&self) -> String {
        let mut out = String::from("gkp-timing v1\nphase\twall_seconds\n");
        for (p, s) in &self.phases {
            out.push_str(&format!("{p}\t{s:.3}\n"));
        }
        out.push_str(&format!("total\t{:.3}\n", self.start.elapsed().as_secs_f64()));
        out
    }
}

fn open_bundle(manifest: &RunManifest) -> Result<Bundle> {
    if manifest.output_dir.is_empty() {
        return Err(WorkbenchError::validation("output directory not resolved"));
    }
    let mut bundle = Bundle::create(Path::new(&manifest.output_dir))?;
    bundle.write("manifest.toml", &manifest.to_toml()?)?;
    Ok(bundle)
}

fn input_path<'a>(manifest: &'a RunManifest, key: &str) -> Result<&'a str> {
    manifest
        .inputs
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| WorkbenchError::validation(format!("missing input {key:?} (use --input {key}=PATH)")))
}

pub fn cmd_synthesize(manifest: &RunManifest) -> Result<CmdOutcome> {
    let params = manifest
        .codewords
        .as_ref()
        .ok_or_else(|| WorkbenchError::validation("synthesize-codewords needs a [codewords] section"))?;
    let mut timing = Timing::new();
    let set = synthesize_codewords(params.fock, params.j_ratio)?;
    timing.lap("synthesize");

    let mut bundle = open_bundle(manifest)?;
    bundle.write("codewords.txt", &render_codewords(&set, params.fock, params.j_ratio))?;
    bundle.write("squeezing.txt", &render_squeezing(&set))?;

    if let Some(w) = &manifest.wigner {
        let grid = square_grid(w.half_range, w.points_per_axis);
        for label in QPT_PROBES {
            let values = wigner_state(set.state(label), &grid)?;
            let name = format!("wigner_{}.txt", label_slug(label));
            bundle.write(&name, &render_wigner(label.as_str(), &grid, &values))?;
        }
        timing.lap("wigner");
    }

    bundle.write("timing.txt", &timing.render())?;
    bundle.finalize()?;
    let d = set.diagnostics;
    Ok(CmdOutcome {
        bundle_dir: bundle.dir().to_path_buf(),
        converged: true,
        summary: format!(
            "synthesized {} codewords (splitting {:.4}, gap {:.4}, confidence {:.3})",
            set.entries.len(),
            d.splitting,
            d.gap,
            d.label_confidence
        ),
    })
}

pub fn cmd_optimize(manifest: &RunManifest, dry_run: bool) -> Result<CmdOutcome> {
    let params = manifest
        .problem
        .as_ref()
        .ok_or_else(|| WorkbenchError::validation("optimize needs a [problem] section"))?;
    let problem = params.to_problem()?;

    if dry_run {
        let mut bundle = open_bundle(manifest)?;
        bundle.finalize()?;
        return Ok(CmdOutcome {
            bundle_dir: bundle.dir().to_path_buf(),
            converged: true,
            summary: "dry run: wrote resolved manifest only".to_string(),
        });
    }

    let mut timing = Timing::new();
    let (pulses, report) = optimize(&problem, manifest.seed)?;
    timing.lap("optimize");

    let mut bundle = open_bundle(manifest)?;
    for (i, pulse) in pulses.iter().enumerate() {
        bundle.write(&format!("waveform_{}.txt", i + 1), &render_waveform(pulse))?;
    }
    let mut history = String::from("gkp-history v1\niter\tbest_cost\n");
    for (it, cost) in &report.iterations {
        history.push_str(&format!("{it}\t{}\n", crate::artifacts::fmt_f64(*cost)));
    }
    bundle.write("history.txt", &history)?;
    bundle.write(
        "fidelity_table.txt",
        &render_fidelity_table(&[
            ("fidelity".to_string(), report.fidelity),
            ("total_duration_s".to_string(), report.duration),
            ("cost".to_string(), report.cost),
            ("converged".to_string(), if report.converged { 1.0 } else { 0.0 }),
        ]),
    )?;
    bundle.write("timing.txt", &timing.render())?;
    bundle.finalize()?;
    Ok(CmdOutcome {
        bundle_dir: bundle.dir().to_path_buf(),
        converged: report.converged,
        summary: format!(
            "fidelity {:.6}, duration {:.4e} s, cost {:.4e}, {} ({} restarts)",
            report.fidelity,
            report.duration,
            report.cost,
            if report.converged { "converged" } else { "iteration budget exhausted" },
            report.restarts_run
        ),
    })
}

fn ideal_gate_matrix(name: &str) -> Result<CMat> {
    if name == "cz" {
        let mut m = CMat::identity(4, 4);
        m[(3, 3)] = Complex::new(-1.0, 0.0);
        return Ok(m);
    }
    Ok(parse_gate(name)?.two_level())
}

fn load_prep_set(manifest: &RunManifest, prefix: &str) -> Result<Vec<(LogicalLabel, SdfPulse)>> {
    let mut out = Vec::with_capacity(QPT_PROBES.len());
    for label in QPT_PROBES {
        let key = format!("{prefix}.{}", label.as_str());
        let pulse = read_waveform(Path::new(input_path(manifest, &key)?))?;
        out.push((label, pulse));
    }
    Ok(out)
}

fn load_gate_pulses(manifest: &RunManifest, count: usize) -> Result<Vec<SdfPulse>> {
    let mut out = Vec::with_capacity(count);
    for i in 1..=count {
        let key = format!("gate.{i}");
        out.push(read_waveform(Path::new(input_path(manifest, &key)?))?);
    }
    Ok(out)
}

pub fn cmd_simulate(manifest: &RunManifest) -> Result<CmdOutcome> {
    let params = manifest
        .pipeline
        .as_ref()
        .ok_or_else(|| WorkbenchError::validation("simulate needs a [pipeline] section"))?;
    let kind = params.kind_enum()?;
    let mut timing = Timing::new();

    let codewords = synthesize_codewords(params.fock, params.j_ratio)?;
    timing.lap("synthesize");

    let (prep_x, prep_y, gate_pulses) = match kind {
        PipelineKind::SqGateQpt => {
            (load_prep_set(manifest, "prep_x")?, Vec::new(), load_gate_pulses(manifest, 1)?)
        }
        PipelineKind::CzQpt => (
            load_prep_set(manifest, "prep_x")?,
            load_prep_set(manifest, "prep_y")?,
            load_gate_pulses(manifest, 2)?,
        ),
        PipelineKind::BellQst => (Vec::new(), Vec::new(), load_gate_pulses(manifest, 3)?),
    };
    let ideal_gate = params.ideal_gate.as_deref().map(ideal_gate_matrix).transpose()?;

    let pipeline = ExperimentPipeline {
        kind,
        fock: params.fock,
        ion: params.ion()?,
        codewords,
        prep_x,
        prep_y,
        gate_pulses,
        ideal_gate,
        readout: params.readout_enum()?,
        post_selection: params.post_selection_enum()?,
        trajectories: params.trajectories,
        nbar: params.nbar,
    };
    let model = params.model()?;
    let result = run_pipeline(&pipeline, &model, manifest.seed)?;
    timing.lap("pipeline");

    let mut bundle = open_bundle(manifest)?;
    let headline_key = params.reference_key.clone().unwrap_or_else(|| {
        match kind {
            PipelineKind::BellQst => "state_fidelity",
            _ => "process_fidelity",
        }
        .to_string()
    });
    let mut rows = Vec::new();
    if let Some(f) = result.headline_fidelity() {
        rows.push((headline_key, f));
    }
    rows.push(("post_selection_probability".to_string(), result.post_selection_probability));

    if let Some(chi) = &result.chi {
        bundle.write("chi_matrix.txt", &render_matrix("chi", &chi.matrix))?;
        bundle.write("chi_bars.txt", &render_chi_bars(chi))?;
    }
    if let Some(bars) = &result.pauli_bars {
        bundle.write("pauli_bars.txt", &render_pauli_bars(bars))?;
    }
    match kind {
        PipelineKind::BellQst => {
            bundle.write("rho_bell.txt", &render_matrix("rho_bell", &result.probe_rhos[0].matrix))?;
        }
        _ => {
            for (i, rho) in result.probe_rhos.iter().enumerate() {
                bundle.write(
                    &format!("rho_probe_{i:02}.txt"),
                    &render_matrix(&format!("rho_probe_{i}"), &rho.matrix),
                )?;
            }
        }
    }

    if !params.scenarios.is_empty() {
        let scenarios: Vec<Scenario> =
            params.scenarios.iter().map(|s| s.to_scenario()).collect::<Result<_>>()?;
        let budget = error_budget(&pipeline, &scenarios, manifest.seed)?;
        timing.lap("error_budget");
        let mut table = String::from("gkp-budget v1\nscenario\tfidelity\tstd_error\ttrajectories\n");
        for row in &budget {
            table.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                row.name,
                crate::artifacts::fmt_f64(row.fidelity),
                crate::artifacts::fmt_f64(row.std_error),
                row.trajectories
            ));
            rows.push((format!("scenario.{}", row.name), row.fidelity));
        }
        bundle.write("budget.tsv", &table)?;
    }

    bundle.write("fidelity_table.txt", &render_fidelity_table(&rows))?;
    bundle.write("timing.txt", &timing.render())?;
    bundle.finalize()?;

    let headline = result
        .headline_fidelity()
        .map(|f| format!("{f:.6}"))
        .unwrap_or_else(|| "n/a".to_string());
    Ok(CmdOutcome {
        bundle_dir: bundle.dir().to_path_buf(),
        converged: true,
        summary: format!(
            "fidelity {headline}, post-selection probability {:.4}, {} trajectories",
            result.post_selection_probability, result.trajectories
        ),
    })
}

fn parse_probe_block_name(name: &str) -> Result<Vec<LogicalLabel>> {
    let spec = name.strip_prefix("probe").map(str::trim).ok_or_else(|| {
        WorkbenchError::validation(format!("expected [probe ...] block, got [{name}]"))
    })?;
    spec.split(',')
        .map(|s| {
            s.trim().parse::<LogicalLabel>().map_err(|_| {
                WorkbenchError::validation(format!("bad probe label {s:?} in [{name}]"))
            })
        })
        .collect()
}

fn probe_density(labels: &[LogicalLabel]) -> Result<LogicalDensityMatrix> {
    let single = |label: LogicalLabel| {
        let (c0, c1) = logical_coefficients(label);
        vec![c0, c1]
    };
    let amps: Vec<C64> = match labels {
        [a] => single(*a),
        [a, b] => {
            let (u, v) = (single(*a), single(*b));
            u.iter().flat_map(|x| v.iter().map(move |y| x * y)).collect()
        }
        _ => {
            return Err(WorkbenchError::validation(
                "probe blocks must name one or two logical labels",
            ))
        }
    };
    let psi = nalgebra::DVector::from_vec(amps);
    let rho = &psi * psi.adjoint();
    Ok(LogicalDensityMatrix::new(labels.len(), rho)?)
}

pub fn cmd_tomography(manifest: &RunManifest) -> Result<CmdOutcome> {
    let params = manifest
        .tomography
        .as_ref()
        .ok_or_else(|| WorkbenchError::validation("tomography needs a [tomography] section"))?;
    let path = input_path(manifest, "expectations")?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| WorkbenchError::io(format!("reading {path}: {e}")))?;
    let file = crate::artifacts::parse_expectations(&text)?;
    if file.qubits != params.qubits {
        return Err(WorkbenchError::validation(format!(
            "expectations file holds {} qubit(s), manifest says {}",
            file.qubits, params.qubits
        )));
    }
    if file.kind != params.kind {
        return Err(WorkbenchError::validation(format!(
            "expectations file kind {:?} does not match manifest kind {:?}",
            file.kind, params.kind
        )));
    }

    let mut timing = Timing::new();
    let mut bundle = open_bundle(manifest)?;
    let mut rows = Vec::new();
    let summary;

    match params.kind.as_str() {
        "qst" => {
            if file.blocks.len() != 1 {
                return Err(WorkbenchError::validation(format!(
                    "qst expects exactly one [state] block, found {}",
                    file.blocks.len()
                )));
            }
            let rho = project_physical_state(&reconstruct_logical_state(
                &file.blocks[0].1,
                params.qubits,
            )?);
            let purity = (&rho.matrix * &rho.matrix).trace().re;
            rows.push(("purity".to_string(), purity));
            bundle.write("rho_matrix.txt", &render_matrix("rho", &rho.matrix))?;
            bundle.write("pauli_bars.txt", &render_pauli_bars(&rho.pauli_readback()))?;
            summary = format!("reconstructed {}-qubit state, purity {purity:.6}", params.qubits);
        }
        "qpt" => {
            let mut inputs = Vec::with_capacity(file.blocks.len());
            let mut outputs = Vec::with_capacity(file.blocks.len());
            for (name, map) in &file.blocks {
                let labels = parse_probe_block_name(name)?;
                if labels.len() != params.qubits {
                    return Err(WorkbenchError::validation(format!(
                        "[{name}] names {} label(s), manifest says {} qubit(s)",
                        labels.len(),
                        params.qubits
                    )));
                }
                inputs.push(probe_density(&labels)?);
                outputs.push(project_physical_state(&reconstruct_logical_state(
                    map,
                    params.qubits,
                )?));
            }
            let chi = fit_chi(&inputs, &outputs)?;
            chi.validate()?;
            bundle.write("chi_matrix.txt", &render_matrix("chi", &chi.matrix))?;
            bundle.write("chi_bars.txt", &render_chi_bars(&chi))?;
            let mut headline = String::new();
            if let Some(gate) = &params.ideal_gate {
                let f = process_fidelity(&chi, &ideal_gate_matrix(gate)?)?;
                rows.push(("process_fidelity".to_string(), f));
                headline = format!(", process fidelity {f:.6} vs {gate}");
            }
            summary =
                format!("fitted CPTP χ from {} probe(s){headline}", file.blocks.len());
        }
        other => {
            return Err(WorkbenchError::validation(format!(
                "unknown tomography kind {other:?} (qst|qpt)"
            )))
        }
    }
    timing.lap("tomography");

    bundle.write("fidelity_table.txt", &render_fidelity_table(&rows))?;
    bundle.write("timing.txt", &timing.render())?;
    bundle.finalize()?;
    Ok(CmdOutcome { bundle_dir: bundle.dir().to_path_buf(), converged: true, summary })
}

fn reference_lookup() -> BTreeMap<&'static str, (f64, f64, &'static str)> {
    gkp_sim::reference::reference_rows()
        .into_iter()
        .map(|r| (r.key, (r.value, r.tolerance, r.context)))
        .collect()
}

pub fn cmd_report(bundles: &[PathBuf], output: Option<&Path>) -> Result<CmdOutcome> {
    if bundles.is_empty() {
        return Err(WorkbenchError::validation("report needs at least one bundle directory"));
    }
    let mut manifests = Vec::with_capacity(bundles.len());
    for dir in bundles {
        let manifest = RunManifest::load(&dir.join("manifest.toml"))?;
        manifests.push((dir.clone(), manifest));
    }
    let v0 = manifests[0].1.format_version;
    if let Some((dir, m)) = manifests.iter().find(|(_, m)| m.format_version != v0) {
        return Err(WorkbenchError::validation(format!(
            "mixed format_version inputs: {} has {}, {} has {}",
            manifests[0].0.display(),
            v0,
            dir.display(),
            m.format_version
        )));
    }

    let reference = reference_lookup();
    let mut out = String::from("gkp-report v1\n");
    for (dir, manifest) in &manifests {
        out.push_str(&format!(
            "\nbundle {}\n  command = {}, preset = {}, seed = {}, format_version = {}\n",
            dir.display(),
            if manifest.command.is_empty() { "?" } else { &manifest.command },
            if manifest.preset.is_empty() { "-" } else { &manifest.preset },
            manifest.seed,
            manifest.format_version
        ));

        let fid_path = dir.join("fidelity_table.txt");
        if fid_path.is_file() {
            let text = std::fs::read_to_string(&fid_path)
                .map_err(|e| WorkbenchError::io(format!("reading {}: {e}", fid_path.display())))?;
            out.push_str("  key\tvalue\treference\ttolerance\tstatus\n");
            for (key, value) in parse_fidelity_table(&text)? {
                match reference.get(key.as_str()) {
                    Some((rv, tol, ctx)) => {
                        let status =
                            if (value - rv).abs() <= *tol { "within" } else { "OUTSIDE" };
                        out.push_str(&format!(
                            "  {key}\t{value:.6}\t{rv:.6}\t{tol:.3}\t{status}  ({ctx})\n"
                        ));
                    }
                    None => out.push_str(&format!("  {key}\t{value:.6}\t-\t-\t-\n")),
                }
            }
        }

        let sq_path = dir.join("squeezing.txt");
        if sq_path.is_file() {
            let text = std::fs::read_to_string(&sq_path)
                .map_err(|e| WorkbenchError::io(format!("reading {}: {e}", sq_path.display())))?;
            out.push_str("  state\tdx_db\tdx_ref\tdz_db\tdz_ref\tstatus\n");
            for (state, dx, dz) in parse_squeezing(&text)? {
                match gkp_sim::reference::CODEWORD_SQUEEZING_DB
                    .iter()
                    .find(|r| r.state == state)
                {
                    Some(r) => {
                        let tol = gkp_sim::reference::SQUEEZING_TOL_DB;
                        let ok = (dx - r.delta_x_db).abs() <= tol
                            && (dz - r.delta_z_db).abs() <= tol;
                        out.push_str(&format!(
                            "  {state}\t{dx:.3}\t{:.2}\t{dz:.3}\t{:.2}\t{}\n",
                            r.delta_x_db,
                            r.delta_z_db,
                            if ok { "within" } else { "OUTSIDE" }
                        ));
                    }
                    None => {
                        out.push_str(&format!("  {state}\t{dx:.3}\t-\t{dz:.3}\t-\t-\n"));
                    }
                }
            }
        }

        let budget_path = dir.join("budget.tsv");
        if budget_path.is_file() {
            let text = std::fs::read_to_string(&budget_path)
                .map_err(|e| WorkbenchError::io(format!("reading {}: {e}", budget_path.display())))?;
            for line in text.lines().skip(1) {
                out.push_str(&format!("  {line}\n"));
            }
        }
    }

    print!("{out}");
    let dir = if let Some(dir) = output {
        std::fs::create_dir_all(dir)
            .map_err(|e| WorkbenchError::io(format!("creating {}: {e}", dir.display())))?;
        let path = dir.join("report.txt");
        std::fs::write(&path, &out)
            .map_err(|e| WorkbenchError::io(format!("writing {}: {e}", path.display())))?;
        dir.to_path_buf()
    } else {
        PathBuf::new()
    };
    Ok(CmdOutcome {
        bundle_dir: dir,
        converged: true,
        summary: format!("compared {} bundle(s) against the reference table", manifests.len()),
    })
}

/// Test helper: writes a QPT/QST expectations file for given blocks.
pub fn write_expectations_file(
    path: &Path,
    qubits: usize,
    kind: &str,
    blocks: &[(String, BTreeMap<gkp_sim::measure::PauliLabel, f64>)],
) -> Result<()> {
    std::fs::write(path, render_expectations(qubits, kind, blocks))
        .map_err(|e| WorkbenchError::io(format!("writing {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use gkp_sim::measure::{PauliAxis, PauliLabel};

    #[test]
    fn probe_density_matches_logical_projectors() {
        let rho = probe_density(&[LogicalLabel::PlusX]).unwrap();
        assert!((rho.matrix[(0, 1)].re - 0.5).abs() < 1e-15);
        let rho2 = probe_density(&[LogicalLabel::PlusZ, LogicalLabel::MinusZ]).unwrap();
        assert_eq!(rho2.matrix.nrows(), 4);
        assert!((rho2.matrix[(1, 1)].re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn probe_block_names_parse() {
        assert_eq!(parse_probe_block_name("probe +Z").unwrap(), vec![LogicalLabel::PlusZ]);
        assert_eq!(
            parse_probe_block_name("probe +X, -Z").unwrap(),
            vec![LogicalLabel::PlusX, LogicalLabel::MinusZ]
        );
        assert!(parse_probe_block_name("state").is_err());
        assert!(parse_probe_block_name("probe +Q").is_err());
    }

    #[test]
    fn qst_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = BTreeMap::new();
        m.insert(PauliLabel::One(PauliAxis::X), 1.0);
        m.insert(PauliLabel::One(PauliAxis::Y), 0.0);
        m.insert(PauliLabel::One(PauliAxis::Z), 0.0);
        let exp_path = dir.path().join("expectations.txt");
        write_expectations_file(&exp_path, 1, "qst", &[("state".to_string(), m)]).unwrap();

        let mut manifest = RunManifest::default();
        manifest.command = "tomography".to_string();
        manifest.output_dir = dir.path().join("out").to_string_lossy().into_owned();
        manifest
            .inputs
            .insert("expectations".to_string(), exp_path.to_string_lossy().into_owned());
        manifest.tomography = Some(crate::config::TomographyParams {
            qubits: 1,
            kind: "qst".to_string(),
            ideal_gate: None,
        });
        let outcome = cmd_tomography(&manifest).unwrap();
        let rho_text =
            std::fs::read_to_string(outcome.bundle_dir.join("rho_matrix.txt")).unwrap();
        let (_, rho) = crate::artifacts::parse_matrix(&rho_text).unwrap();
        assert!((rho[(0, 1)].re - 0.5).abs() < 1e-12);
        assert!(outcome.bundle_dir.join("checksums.txt").is_file());
    }

    #[test]
    fn report_rejects_mixed_format_versions() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        std::fs::create_dir_all(&a).unwrap();
        std::fs::create_dir_all(&b).unwrap();
        std::fs::write(a.join("manifest.toml"), "format_version = 1\ncommand = \"x\"\n").unwrap();
        std::fs::write(b.join("manifest.toml"), "format_version = 2\ncommand = \"x\"\n").unwrap();
        let err = cmd_report(&[a, b], None).unwrap_err();
        assert!(err.to_string().contains("format_version"), "{err}");
    }
}
