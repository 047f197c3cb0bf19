use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use gkp_sim::measure::{PauliAxis, PauliLabel};
use gkp_sim::optimize::logical_coefficients;
use gkp_sim::sdf::{LambDickeOrder, ModeLabel, SdfPulse};
use gkp_workbench::artifacts::{parse_fidelity_table, render_expectations, render_waveform};
use gkp_workbench::config::RunManifest;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gkp-workbench"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn gkp-workbench");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_zero_rabi_waveform(path: &Path, mode: ModeLabel) {
    let pulse =
        SdfPulse::constant(mode, 0.0, 3e-5, 3, 0.0, 0.0, LambDickeOrder::First).unwrap();
    std::fs::write(path, render_waveform(&pulse)).unwrap();
}

#[test]
fn small_fock_synthesis_fails_with_truncation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["synthesize-codewords", "--fock", "6", "--output"])
        .arg(dir.path().join("bundle"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Fock truncation"), "stderr: {stderr}");
    assert!(stderr.contains("gap"), "stderr: {stderr}");
}

#[test]
fn paper_two_mode_dry_runs_echo_settings_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cz_dir = dir.path().join("cz");
    run_ok(bin()
        .args(["optimize", "--preset", "paper", "--kind", "cz_gate", "--dry-run", "--output"])
        .arg(&cz_dir));
    let manifest = RunManifest::load(&cz_dir.join("manifest.toml")).unwrap();
    let p = manifest.problem.unwrap();
    assert_eq!(p.n_opt, vec![30, 270]);
    assert_eq!(p.n_seg, vec![120, 720]);
    assert_eq!(manifest.command, "optimize");
    assert_eq!(manifest.preset, "paper");

    let bell_dir = dir.path().join("bell");
    run_ok(bin()
        .args(["optimize", "--preset", "paper", "--kind", "bell_prep", "--dry-run", "--output"])
        .arg(&bell_dir));
    let manifest = RunManifest::load(&bell_dir.join("manifest.toml")).unwrap();
    let p = manifest.problem.unwrap();
    assert_eq!(p.n_opt, vec![45, 90, 45]);
    assert_eq!(p.n_seg, vec![400, 800, 400]);
}

#[test]
fn synthesize_twice_gives_identical_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle");
    let args = |out: &Path| {
        let mut c = bin();
        c.args(["synthesize-codewords", "--fock", "16", "--j-ratio", "3.0", "--output"]);
        c.arg(out);
        c
    };
    run_ok(&mut args(&bundle));
    let first = std::fs::read(bundle.join("checksums.txt")).unwrap();
    run_ok(&mut args(&bundle));
    let second = std::fs::read(bundle.join("checksums.txt")).unwrap();
    assert_eq!(first, second);
    assert!(bundle.join("wigner_plus_z.txt").is_file());
    assert!(bundle.join("squeezing.txt").is_file());
}

#[test]
fn simulate_runs_from_waveform_inputs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for label in ["+Z", "-Z", "+X", "+Y"] {
        write_zero_rabi_waveform(&dir.path().join(format!("prep_{label}.txt")), ModeLabel::X);
    }
    write_zero_rabi_waveform(&dir.path().join("gate.txt"), ModeLabel::X);

    let bundle = dir.path().join("bundle");
    let mut checksums = Vec::new();
    for _ in 0..2 {
        let mut c = bin();
        c.args([
            "simulate",
            "--kind",
            "sq_gate_qpt",
            "--trajectories",
            "4",
            "--gamma",
            "25.0",
            "--seed",
            "9",
            "--readout",
            "logical_pauli",
            "--ideal-gate",
            "rx",
        ]);
        for label in ["+Z", "-Z", "+X", "+Y"] {
            c.arg("--input");
            c.arg(format!(
                "prep_x.{label}={}",
                dir.path().join(format!("prep_{label}.txt")).display()
            ));
        }
        c.arg("--input");
        c.arg(format!("gate.1={}", dir.path().join("gate.txt").display()));
        c.arg("--output");
        c.arg(&bundle);
        run_ok(&mut c);
        checksums.push(std::fs::read(bundle.join("checksums.txt")).unwrap());
    }
    assert_eq!(checksums[0], checksums[1]);
    assert!(bundle.join("chi_matrix.txt").is_file());
    assert!(bundle.join("chi_bars.txt").is_file());

    let table =
        parse_fidelity_table(&std::fs::read_to_string(bundle.join("fidelity_table.txt")).unwrap())
            .unwrap();
    let rows: BTreeMap<String, f64> = table.into_iter().collect();
    // zero-Rabi pulses leave the oscillator alone: identity process, perfect
    // post-selection, and the rx comparison far from 1
    assert_eq!(rows["post_selection_probability"], 1.0);
    assert!(rows["process_fidelity"] < 0.9);
}

#[test]
fn missing_waveform_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["simulate", "--kind", "bell_qst", "--trajectories", "1"])
        .args(["--input", "gate.1=/nonexistent/wave.txt"])
        .args(["--input", "gate.2=/nonexistent/wave.txt"])
        .args(["--input", "gate.3=/nonexistent/wave.txt"])
        .arg("--output")
        .arg(dir.path().join("bundle"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // before any file is touched, an unknown input key is a validation error
    let out = bin()
        .args(["simulate", "--kind", "bell_qst"])
        .args(["--input", "notakeyvalue"])
        .arg("--output")
        .arg(dir.path().join("bundle2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_trajectories_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    for label in ["+Z", "-Z", "+X", "+Y"] {
        write_zero_rabi_waveform(&dir.path().join(format!("prep_{label}.txt")), ModeLabel::X);
    }
    write_zero_rabi_waveform(&dir.path().join("gate.txt"), ModeLabel::X);
    let mut c = bin();
    c.args(["simulate", "--kind", "sq_gate_qpt", "--trajectories", "0"]);
    for label in ["+Z", "-Z", "+X", "+Y"] {
        c.arg("--input");
        c.arg(format!(
            "prep_x.{label}={}",
            dir.path().join(format!("prep_{label}.txt")).display()
        ));
    }
    c.arg("--input");
    c.arg(format!("gate.1={}", dir.path().join("gate.txt").display()));
    c.arg("--output");
    c.arg(dir.path().join("bundle"));
    let out = c.output().unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn optimize_budget_exhaustion_exits_with_convergence_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "optimize",
            "--kind",
            "state_prep",
            "--target",
            "+Z",
            "--max-iters",
            "1",
            "--restarts",
            "1",
            "--seed",
            "3",
            "--output",
        ])
        .arg(dir.path().join("bundle"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // artifacts are still written for a budget-exhausted run
    assert!(dir.path().join("bundle/waveform_1.txt").is_file());
    assert!(dir.path().join("bundle/checksums.txt").is_file());
}

#[test]
fn tomography_qpt_recovers_an_ideal_rx_process() {
    let dir = tempfile::tempdir().unwrap();
    // expectations of U|probe⟩ for the ideal rx gate, computed from the
    // two-level coefficients
    let u = gkp_sim::optimize::GateLabel::RxMinusHalf.two_level();
    let paulis = [
        (PauliAxis::X, gkp_sim::operators::sigma_x()),
        (PauliAxis::Y, gkp_sim::operators::sigma_y()),
        (PauliAxis::Z, gkp_sim::operators::sigma_z()),
    ];
    let mut blocks = Vec::new();
    for label in [
        gkp_sim::gkp::LogicalLabel::PlusZ,
        gkp_sim::gkp::LogicalLabel::MinusZ,
        gkp_sim::gkp::LogicalLabel::PlusX,
        gkp_sim::gkp::LogicalLabel::PlusY,
    ] {
        let (c0, c1) = logical_coefficients(label);
        let psi = nalgebra::DVector::from_vec(vec![c0, c1]);
        let out = &u * &psi;
        let mut map = BTreeMap::new();
        for (axis, sigma) in &paulis {
            let v = out.dotc(&(sigma * &out)).re;
            map.insert(PauliLabel::One(*axis), v);
        }
        blocks.push((format!("probe {}", label.as_str()), map));
    }
    let exp_path = dir.path().join("expectations.txt");
    std::fs::write(&exp_path, render_expectations(1, "qpt", &blocks)).unwrap();

    let bundle = dir.path().join("bundle");
    run_ok(bin()
        .args(["tomography", "--kind", "qpt", "--qubits", "1", "--ideal-gate", "rx"])
        .arg("--expectations")
        .arg(&exp_path)
        .arg("--output")
        .arg(&bundle));
    let table =
        parse_fidelity_table(&std::fs::read_to_string(bundle.join("fidelity_table.txt")).unwrap())
            .unwrap();
    let rows: BTreeMap<String, f64> = table.into_iter().collect();
    assert!(
        (rows["process_fidelity"] - 1.0).abs() < 1e-6,
        "process fidelity {}",
        rows["process_fidelity"]
    );
}

#[test]
fn report_summarizes_bundles_and_rejects_missing_ones() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle");
    run_ok(bin()
        .args(["synthesize-codewords", "--fock", "16", "--j-ratio", "3.0", "--output"])
        .arg(&bundle));
    let out = run_ok(bin().arg("report").arg(&bundle));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gkp-report v1"));
    assert!(stdout.contains("+Z"), "report should list squeezing rows: {stdout}");

    let out = bin().arg("report").arg(dir.path().join("nope")).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn output_root_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin()
        .env("GKP_WORKBENCH_OUTPUT", dir.path())
        .args(["optimize", "--preset", "paper", "--kind", "cz_gate", "--dry-run", "--seed", "5"]));
    let expected = dir.path().join("optimize-paper-seed5");
    assert!(expected.join("manifest.toml").is_file(), "bundle at {}", expected.display());
}
