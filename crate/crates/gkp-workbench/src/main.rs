use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use gkp_workbench::commands::{
    cmd_optimize, cmd_report, cmd_simulate, cmd_synthesize, cmd_tomography, CmdOutcome,
};
use gkp_workbench::config::{
    preset_codewords, preset_pipeline, preset_problem, preset_tomography, preset_wigner,
    ProblemParams, RunManifest, FORMAT_VERSION,
};
use gkp_workbench::error::{Result, WorkbenchError, EXIT_CONVERGENCE};

pub const OUTPUT_ROOT_ENV: &str = "GKP_WORKBENCH_OUTPUT";

#[derive(Parser)]
#[command(
    name = "gkp-workbench",
    version,
    about = "Finite-energy GKP codeword synthesis, SDF pulse optimization, noisy pipeline simulation, and logical tomography"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Config file: a run manifest TOML. Sections present in the config win
    /// over the preset; command-line overrides win over both.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parameter scale when no config section is given (default: desk).
    #[arg(long, value_parser = ["desk", "paper"])]
    preset: Option<String>,
    /// Bundle directory. Defaults to <output root>/<command>-<preset>-seed<seed>,
    /// where the output root comes from $GKP_WORKBENCH_OUTPUT or "runs".
    #[arg(long)]
    output: Option<PathBuf>,
    /// Master seed for all stochastic stages.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap, recorded in the manifest. Current kernels run on
    /// one thread, so any value leaves results bit-identical.
    #[arg(long)]
    threads: Option<usize>,
    /// Input file as KEY=PATH, e.g. --input gate.1=wave.txt. Repeatable.
    #[arg(long = "input", value_name = "KEY=PATH")]
    inputs: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize finite-energy codewords; export amplitudes, squeezing, and
    /// Wigner grids.
    SynthesizeCodewords {
        #[command(flatten)]
        common: CommonArgs,
        /// Fock-space dimension override.
        #[arg(long)]
        fock: Option<usize>,
        /// Grid-Hamiltonian J/ω₀ override.
        #[arg(long)]
        j_ratio: Option<f64>,
    },
    /// Optimize SDF pulse trains for a preparation or gate problem.
    Optimize {
        #[command(flatten)]
        common: CommonArgs,
        /// Problem kind when no [problem] section is given.
        #[arg(long, default_value = "state_prep",
              value_parser = ["state_prep", "sq_gate", "cz_gate", "bell_prep"])]
        kind: String,
        /// state_prep target: "vacuum" or a logical label such as "+Z".
        #[arg(long)]
        target: Option<String>,
        /// sq_gate gate: rx | rz | t.
        #[arg(long)]
        gate: Option<String>,
        /// Iteration budget override.
        #[arg(long)]
        max_iters: Option<usize>,
        /// Restart count override.
        #[arg(long)]
        restarts: Option<usize>,
        /// Resolve and write the manifest without running the optimizer.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run a noisy experiment pipeline on previously optimized waveforms.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Pipeline kind when no [pipeline] section is given.
        #[arg(long, default_value = "sq_gate_qpt",
              value_parser = ["sq_gate_qpt", "cz_qpt", "bell_qst"])]
        kind: String,
        #[arg(long)]
        trajectories: Option<usize>,
        /// Dephasing rate γ (s⁻¹, interpreted per the gamma convention).
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        nbar: Option<f64>,
        /// sssd | logical_pauli
        #[arg(long)]
        readout: Option<String>,
        /// Ideal gate for process fidelity: rx | rz | t | cz.
        #[arg(long)]
        ideal_gate: Option<String>,
        /// Reference-table key this run should be compared against by report.
        #[arg(long)]
        reference_key: Option<String>,
    },
    /// Reconstruct a logical state or process from Pauli expectations.
    Tomography {
        #[command(flatten)]
        common: CommonArgs,
        /// Expectations file (shorthand for --input expectations=PATH).
        #[arg(long)]
        expectations: Option<PathBuf>,
        #[arg(long)]
        qubits: Option<usize>,
        /// qst | qpt
        #[arg(long)]
        kind: Option<String>,
        /// Ideal gate for QPT process fidelity: rx | rz | t | cz.
        #[arg(long)]
        ideal_gate: Option<String>,
    },
    /// Summarize result bundles against the built-in reference table.
    Report {
        /// Result bundle directories.
        bundles: Vec<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn resolve_manifest(common: &CommonArgs, command: &str) -> Result<RunManifest> {
    let mut manifest = match &common.config {
        Some(path) => RunManifest::load(path)?,
        None => RunManifest::default(),
    };
    manifest.format_version = FORMAT_VERSION;
    manifest.command = command.to_string();
    if let Some(preset) = &common.preset {
        manifest.preset = preset.clone();
    } else if manifest.preset.is_empty() {
        manifest.preset = "desk".to_string();
    }
    if let Some(seed) = common.seed {
        manifest.seed = seed;
    }
    if let Some(threads) = common.threads {
        if threads == 0 {
            return Err(WorkbenchError::validation("--threads must be at least 1"));
        }
        manifest.threads = threads;
    }
    for kv in &common.inputs {
        let (key, path) = kv.split_once('=').ok_or_else(|| {
            WorkbenchError::validation(format!("--input expects KEY=PATH, got {kv:?}"))
        })?;
        manifest.inputs.insert(key.trim().to_string(), path.trim().to_string());
    }
    let out_dir = match &common.output {
        Some(dir) => dir.clone(),
        None if !manifest.output_dir.is_empty() => PathBuf::from(&manifest.output_dir),
        None => {
            let root = std::env::var(OUTPUT_ROOT_ENV).unwrap_or_else(|_| "runs".to_string());
            Path::new(&root).join(format!(
                "{command}-{}-seed{}",
                manifest.preset, manifest.seed
            ))
        }
    };
    manifest.output_dir = out_dir.to_string_lossy().into_owned();
    Ok(manifest)
}

fn run(cli: Cli) -> Result<CmdOutcome> {
    match cli.command {
        Command::SynthesizeCodewords { common, fock, j_ratio } => {
            let mut manifest = resolve_manifest(&common, "synthesize-codewords")?;
            if manifest.codewords.is_none() {
                manifest.codewords = Some(preset_codewords(&manifest.preset)?);
            }
            if manifest.wigner.is_none() {
                manifest.wigner = Some(preset_wigner(&manifest.preset)?);
            }
            let params = manifest.codewords.as_mut().unwrap();
            if let Some(f) = fock {
                params.fock = f;
            }
            if let Some(j) = j_ratio {
                params.j_ratio = j;
            }
            cmd_synthesize(&manifest)
        }
        Command::Optimize { common, kind, target, gate, max_iters, restarts, dry_run } => {
            let mut manifest = resolve_manifest(&common, "optimize")?;
            if manifest.problem.is_none() {
                let problem = preset_problem(
                    &manifest.preset,
                    &kind,
                    target.as_deref(),
                    gate.as_deref(),
                )?;
                manifest.problem = Some(ProblemParams::from_problem(&problem));
            }
            let params = manifest.problem.as_mut().unwrap();
            if let Some(n) = max_iters {
                params.max_iters = n;
            }
            if let Some(r) = restarts {
                params.restarts = r;
            }
            cmd_optimize(&manifest, dry_run)
        }
        Command::Simulate {
            common,
            kind,
            trajectories,
            gamma,
            nbar,
            readout,
            ideal_gate,
            reference_key,
        } => {
            let mut manifest = resolve_manifest(&common, "simulate")?;
            if manifest.pipeline.is_none() {
                manifest.pipeline = Some(preset_pipeline(&manifest.preset, &kind)?);
            }
            let params = manifest.pipeline.as_mut().unwrap();
            if let Some(t) = trajectories {
                params.trajectories = t;
            }
            if let Some(g) = gamma {
                params.gamma_per_s = g;
            }
            if let Some(n) = nbar {
                params.nbar = n;
            }
            if let Some(r) = readout {
                params.readout = r;
            }
            if let Some(g) = ideal_gate {
                params.ideal_gate = Some(g);
            }
            if let Some(k) = reference_key {
                params.reference_key = Some(k);
            }
            cmd_simulate(&manifest)
        }
        Command::Tomography { common, expectations, qubits, kind, ideal_gate } => {
            let mut manifest = resolve_manifest(&common, "tomography")?;
            if let Some(path) = expectations {
                manifest
                    .inputs
                    .insert("expectations".to_string(), path.to_string_lossy().into_owned());
            }
            if manifest.tomography.is_none() {
                manifest.tomography = Some(preset_tomography(&manifest.preset)?);
            }
            let params = manifest.tomography.as_mut().unwrap();
            if let Some(q) = qubits {
                params.qubits = q;
            }
            if let Some(k) = kind {
                params.kind = k;
            }
            if let Some(g) = ideal_gate {
                params.ideal_gate = Some(g);
            }
            cmd_tomography(&manifest)
        }
        Command::Report { bundles, output } => cmd_report(&bundles, output.as_deref()),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            if outcome.bundle_dir.as_os_str().is_empty() {
                println!("{}", outcome.summary);
            } else {
                println!("{} -> {}", outcome.summary, outcome.bundle_dir.display());
            }
            if !outcome.converged {
                eprintln!("optimizer stopped on its iteration budget before converging");
                std::process::exit(EXIT_CONVERGENCE);
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
