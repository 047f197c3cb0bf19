//! Long-running desk-scale optimization baselines. Run explicitly with
//! `cargo test -p gkp-sim --release --test desk_baselines -- --ignored --nocapture`.

use gkp_sim::gkp::LogicalLabel;
use gkp_sim::optimize::{
    average_gate_fidelity, optimize, GateLabel, OptimizationProblem, PrepTarget,
};
use gkp_sim::sdf::{pulse_propagator, validate_constraints, IonParams};
use gkp_sim::hilbert::HilbertConfig;
use std::time::Instant;

#[test]
#[ignore = "minutes-long optimization; run with --ignored"]
fn desk_state_prep_reaches_high_fidelity() {
    let t0 = Instant::now();
    let problem =
        OptimizationProblem::desk_state_prep(PrepTarget::Codeword(LogicalLabel::PlusZ)).unwrap();
    let (pulses, report) = optimize(&problem, 0).unwrap();
    println!(
        "desk prep seed0: F={:.7} T={:.4e} cost={:.6e} iters={} converged={} wall={:?}",
        report.fidelity,
        report.duration,
        report.cost,
        report.iterations.len(),
        report.converged,
        t0.elapsed()
    );
    let rep = validate_constraints(&pulses[0], &problem.constraints[0]);
    println!(
        "  constraints: compliant={} max_step={:.4} budget={:.4}",
        rep.compliant(),
        rep.max_adjacent_step,
        rep.step_budget
    );
    assert!(rep.compliant());
    assert!(report.fidelity >= 0.98, "prep fidelity {:.5}", report.fidelity);
}

#[test]
#[ignore = "minutes-long optimization; run with --ignored"]
fn desk_sq_gate_reaches_high_average_fidelity() {
    let t0 = Instant::now();
    let problem = OptimizationProblem::desk_sq_gate(GateLabel::RxMinusHalf).unwrap();
    let (pulses, report) = optimize(&problem, 0).unwrap();
    println!(
        "desk rx seed0: F(6-col)={:.7} T={:.4e} iters={} converged={} wall={:?}",
        report.fidelity,
        report.duration,
        report.iterations.len(),
        report.converged,
        t0.elapsed()
    );
    let set = gkp_sim::gkp::synthesize_codewords(problem.fock, problem.j_ratio).unwrap();
    let cfg = HilbertConfig::spin_mode(problem.fock).unwrap();
    let u = pulse_propagator(&pulses[0], &IonParams::default(), &cfg).unwrap();
    let f_avg =
        average_gate_fidelity(&u, &GateLabel::RxMinusHalf.two_level(), &set, problem.fock)
            .unwrap();
    println!("  average gate fidelity = {f_avg:.7}");
    let rep = validate_constraints(&pulses[0], &problem.constraints[0]);
    println!("  constraints: compliant={}", rep.compliant());
    assert!(rep.compliant());
    assert!(f_avg >= 0.99, "average gate fidelity {f_avg:.5}");
}
