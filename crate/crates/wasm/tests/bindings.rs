use dcgrid_browser::{certify_gains, simulate_load_step, solve_references, tuned_gains};

#[test]
fn load_step_run_recovers() {
    let run = simulate_load_step(10.0, 8.0, 0.05, 0.25, true, true);
    assert_eq!(run.error(), "");
    let t = run.t();
    let x9 = run.x9();
    assert_eq!(t.len(), 501);
    assert_eq!(run.duty(3).len(), t.len());
    assert!(run.duty(4).is_empty());
    assert!((x9[x9.len() - 1] - 1000.0).abs() < 0.05, "{}", x9[x9.len() - 1]);
}

#[test]
fn load_step_reports_bad_input() {
    assert!(!simulate_load_step(10.0, -1.0, 0.05, 0.1, false, true).error().is_empty());
}

#[test]
fn reference_solution_matches_worked_case() {
    let s = solve_references(780.0, 1000.0, 800.0, 600.0, 1500.0, 10.0);
    assert_eq!(s.error(), "");
    assert!((s.x4_star() - 608.73).abs() < 0.01, "{}", s.x4_star());
    let u = s.duties();
    assert!((u[2] - 2.0 / 3.0).abs() < 1e-9);

    let bad = solve_references(780.0, 1000.0, 800.0, 600.0, 1500.0, 0.01);
    assert!(bad.error().contains("R_L outside Ω_RL"), "{}", bad.error());
}

#[test]
fn gain_certificates() {
    let c = certify_gains(&tuned_gains());
    assert!(c.certified(), "{} / {}", c.verdict(0), c.verdict(1));
    assert!(c.spectral_abscissa(0) < 0.0 && c.spectral_abscissa(1) < 0.0);

    let mut g = tuned_gains();
    g[0] = 300.0;
    g[3] = 0.0;
    let c = certify_gains(&g);
    assert_eq!(c.verdict(0), "unstable");
    assert!(c.spectral_abscissa(0) > 50.0);
    assert!(!c.certified());

    assert!(!certify_gains(&[1.0; 3]).error().is_empty());
}
