use formation_mpc::engine::{
    self, formation_error, states_csv, telemetry_csv, theorem2_report, write_outputs, RunInfo, Scenario,
    Theorem2Inputs,
};
use formation_mpc::scenario::{bundled, ObserverInit};
use nalgebra::DVector;

fn example1(t_final: f64) -> Scenario {
    let mut doc = bundled("example1").unwrap();
    doc.meta.t_final = t_final;
    doc.build().unwrap()
}

#[test]
fn zero_length_run_has_only_the_initial_row() {
    let log = engine::run(&example1(0.0)).unwrap();
    assert_eq!(log.states.len(), 1);
    assert!(log.telemetry.is_empty());
    let row = &log.states[0];
    assert_eq!(row.t, 0.0);
    assert!(row.u.iter().all(|u| u.iter().all(|v| *v == 0.0)));
    assert_eq!(telemetry_csv(&log).lines().count(), 1);
    assert_eq!(states_csv(&log).lines().count(), 2);
}

#[test]
fn initial_formation_error() {
    let log = engine::run(&example1(0.0)).unwrap();
    let fe = &log.states[0].formation;
    assert!((fe.per_agent[0] - 0.3).abs() < 1e-15);
    let rss = fe.per_agent.iter().map(|e| e * e).sum::<f64>().sqrt();
    assert_eq!(fe.stacked, rss);

    let sc = example1(0.0);
    let on_target: Vec<DVector<f64>> = sc
        .formation
        .displacements()
        .iter()
        .map(|d| sc.leader.xi0() + d)
        .collect();
    let zero = formation_error(&on_target, sc.leader.xi0(), &sc.formation);
    assert!(zero.per_agent.iter().all(|e| *e < 1e-15));
}

#[test]
fn theorem2_floor_by_hand() {
    // C = 2I, δ = 0.2: floor = (κ₁ + 2κ₂)·0.2 / (2·2)
    let mut log = engine::run(&example1(0.0)).unwrap();
    let inputs = Theorem2Inputs {
        kappa1: 1.0,
        kappa2: 0.5,
        rho_s: Some(0.1),
    };
    let report = theorem2_report(&log, &inputs);
    assert!((report.rho_floor - 0.1).abs() < 1e-15);
    assert!(report.holds);
    let below = theorem2_report(&log, &Theorem2Inputs { rho_s: Some(0.0999), ..inputs });
    assert!(!below.holds);

    let ideal = Theorem2Inputs {
        kappa1: 0.0,
        kappa2: 0.0,
        rho_s: Some(1e-12),
    };
    assert!(theorem2_report(&log, &ideal).holds);

    let mut last = 0.0;
    for period in [0.05, 0.1, 0.2, 0.4] {
        log.header.period = period;
        let floor = theorem2_report(&log, &inputs).rho_floor;
        assert!(floor >= last);
        last = floor;
    }
}

#[test]
fn identical_runs_are_bit_identical() {
    let sc = example1(2.0);
    let a = engine::run(&sc).unwrap();
    let b = engine::run(&sc).unwrap();
    assert_eq!(states_csv(&a), states_csv(&b));
    assert_eq!(telemetry_csv(&a), telemetry_csv(&b));
}

#[test]
fn inputs_are_held_between_control_instants() {
    let sc = example1(2.0);
    let log = engine::run(&sc).unwrap();
    let m = sc.agent_count();
    let periods = 10;
    assert_eq!(log.telemetry.len(), periods * m);
    for k in 0..periods {
        let rows = &log.telemetry[k * m..(k + 1) * m];
        for (i, r) in rows.iter().enumerate() {
            assert_eq!((r.k, r.agent), (k, i));
            for step in 0..sc.substeps {
                assert_eq!(log.states[k * sc.substeps + step].u[i], r.u);
            }
        }
    }
    assert_eq!(log.states.len(), periods * sc.substeps + 1);
    assert!(log.states.iter().all(|r| r.total_lyapunov().is_finite()));
}

#[test]
fn fault_signals_are_logged() {
    let log = engine::run(&example1(1.0)).unwrap();
    assert_eq!(log.fault_labels, ["a_21", "b_1"]);
    assert!(log.states.iter().any(|r| r.thetas[0] != 0.0));
    assert!(log.states.iter().all(|r| r.thetas[1].abs() <= 0.3));
}

/// With neighbour data frozen over a substep, an unpinned agent's first
/// solve and first observer step cannot see the leader.
#[test]
fn unpinned_agents_never_see_the_leader() {
    let build = |xi0: [f64; 3]| {
        let mut doc = bundled("example1").unwrap();
        doc.meta.t_final = doc.meta.h;
        doc.meta.snapshot_mode = true;
        doc.observers.init = ObserverInit::Zero;
        doc.leader.xi0 = xi0.to_vec();
        engine::run(&doc.build().unwrap()).unwrap()
    };
    let a = build([1.0, 0.0, 0.0]);
    let b = build([1.05, -0.02, 0.01]);
    for i in 0..3 {
        assert_eq!(a.telemetry[i], b.telemetry[i], "agent {} first solve", i + 1);
    }
    let after = |log: &engine::SimLog, i: usize| log.states[1].observers[i].clone();
    assert_ne!(after(&a, 0), after(&b, 0), "the pinned agent reads the leader");
    assert_eq!(after(&a, 1), after(&b, 1));
    assert_eq!(after(&a, 2), after(&b, 2));
}

#[test]
fn outputs_are_written_and_hashed() {
    let dir = tempfile::tempdir().unwrap();
    let log = engine::run(&example1(0.4)).unwrap();
    let info = RunInfo::default();
    let (files, summary) = write_outputs(&log, dir.path(), &info).unwrap();
    for f in [&files.states, &files.telemetry, &files.diagnostics, &files.summary] {
        assert!(f.is_file(), "{}", f.display());
    }
    assert_eq!(summary.control_steps, 2);
    assert_eq!(summary.constraint_violations, 0);
    assert_eq!(summary.sha256.len(), 64);
    let diag = std::fs::read_to_string(&files.diagnostics).unwrap();
    assert!(diag.contains("graph.kappa5,not evaluated"), "{diag}");

    let again = tempfile::tempdir().unwrap();
    let (_, second) = write_outputs(&log, again.path(), &info).unwrap();
    assert_eq!(summary.sha256, second.sha256);
}

#[test]
fn invalid_scenarios_are_refused_before_running() {
    let mut sc = example1(1.0);
    sc.t_final = -1.0;
    assert!(engine::run(&sc).is_err());
    let mut sc = example1(1.0);
    sc.agents[1].c_xi = 0.0;
    assert!(engine::run(&sc).is_err());
}
