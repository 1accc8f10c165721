use dcgrid_core::control::{grid_voltage_target, integral_rates, u1_law, u2_law};
use dcgrid_core::engine::{rk4_step, DisturbanceSchedule, InitialCondition, ReferencePlan, Signal};
use dcgrid_core::model::{equilibrium, plant_rhs, rhs_masked};
use dcgrid_core::references::solve_x4_star;
use dcgrid_core::stability::{build_a13, build_a46, lyapunov_monitor, lyapunov_sample, LyapunovWeights, MonitorConfig, MonitorPoint};
use dcgrid_core::{
    simulate, AugmentedState, BusLaw, Disturbance, DutyTriple, GainSet, GridError, GridParameters, PhysicalState,
    ReferenceSet, Scenario, Setpoint,
};

fn setpoint(d: &Disturbance, law: BusLaw) -> Setpoint {
    let p = GridParameters::table();
    let x4 = solve_x4_star(780.0, 1000.0, d, &p).unwrap().x4_star;
    Setpoint::resolve(ReferenceSet::new(780.0, x4, 1000.0), d, &p)
        .unwrap()
        .with_bus_law(law)
}

fn bus_dip(law: BusLaw, factor: f64, t_end: f64) -> Scenario {
    let mut sc = Scenario::constant(GainSet::tuned(), Disturbance::default(), 780.0, 1000.0, t_end);
    let mut f = [1.0; 9];
    f[8] = factor;
    sc.initial = InitialCondition::ScaledEquilibrium(f);
    sc.bus_law = law;
    sc.warm_start = true;
    sc
}

#[test]
fn centred_law_recovers_from_bus_dip() {
    let tr = simulate(&bus_dip(BusLaw::Centred, 0.95, 0.3)).unwrap();
    let x = tr.final_state.phys;
    assert!((x.x9 - 1000.0).abs() < 0.1, "x9 = {}", x.x9);
    assert!((x.x1 - 780.0).abs() < 0.1, "x1 = {}", x.x1);
}

#[test]
fn printed_law_runs_away_below_reference() {
    match simulate(&bus_dip(BusLaw::Printed, 0.95, 0.3)) {
        Err(GridError::Diverged { t }) => assert!(t < 0.3),
        Err(GridError::AtTime { t, .. }) => assert!(t < 0.3),
        Err(e) => panic!("unexpected error {e}"),
        Ok(tr) => {
            let x9 = tr.final_state.phys.x9;
            assert!((x9 - 1000.0).abs() > 50.0, "x9 = {x9}");
        }
    }
}

#[test]
fn load_step_with_resolved_references() {
    let p = GridParameters::table();
    let mut sc = Scenario::constant(GainSet::tuned(), Disturbance::default(), 780.0, 1000.0, 0.4);
    sc.schedule.r_load = Signal::knots(vec![(0.0, 10.0), (0.1, 10.0), (0.1, 8.0)]);
    sc.plan = ReferencePlan::periodic(0.1, 0.4, 1000.0, &[780.0], None);
    sc.bus_law = BusLaw::Centred;
    sc.warm_start = true;
    let tr = simulate(&sc).unwrap();
    assert_eq!(tr.setpoints.len(), 4);
    let d = Disturbance::new(800.0, 600.0, 1500.0, 8.0);
    let x4 = solve_x4_star(780.0, 1000.0, &d, &p).unwrap().x4_star;
    assert_eq!(tr.setpoints[1].refs.x4_star, x4);
    let x = tr.final_state.phys;
    assert!((x.x9 - 1000.0).abs() < 1e-2, "x9 = {}", x.x9);
    // The slowest battery pole is about −16 s⁻¹.
    assert!((x.x4 - x4).abs() < 0.1, "x4 = {} vs {x4}", x.x4);
}

/// Off-equilibrium state with warm integrals, inside the unsaturated region.
fn perturbed(sp: &Setpoint, d: &Disturbance) -> AugmentedState {
    let p = GridParameters::table();
    let xe = equilibrium(&sp.refs, d, &p).unwrap().state.to_array();
    let f = [1.01, 0.995, 1.02, 0.99, 1.003, 0.98, 1.002, 1.0, 0.998];
    let mut a = [0.0; 9];
    for i in 0..9 {
        a[i] = xe[i] * f[i];
    }
    a[7] = 1.5;
    let mut s = AugmentedState::cold(PhysicalState::from_array(a));
    s.alpha1 = 0.01;
    s.alpha3 = -0.02;
    s.alpha4 = 0.005;
    s.alpha6 = 0.01;
    s
}

#[test]
fn analytic_z7_rate_matches_directional_difference() {
    let p = GridParameters::table();
    let g = GainSet::tuned();
    let d = Disturbance::default();
    for law in [BusLaw::Printed, BusLaw::Centred] {
        let sp = setpoint(&d, law);
        let s = perturbed(&sp, &d);
        let duties = |s: &AugmentedState| {
            let u1 = u1_law(s, &sp.refs, &g, &p, &d).unwrap().raw;
            let u2 = u2_law(s, &sp.refs, &g, &p, &d).unwrap().raw;
            DutyTriple::from_raw([u1, u2, 0.5])
        };
        let u = duties(&s);
        assert!(!u.any_saturated(), "{u:?}");
        let (_, z7_dot) = grid_voltage_target(&s, &sp, &g, &p, &d, &u).unwrap();

        let xd = plant_rhs(&s.phys, u.applied, &d, &p).to_array();
        let ad = integral_rates(&s, &sp.refs, &g, &p, &d);
        let mut dir = [0.0; 13];
        dir[..9].copy_from_slice(&xd);
        dir[9..].copy_from_slice(&ad);
        let z7_at = |eps: f64| {
            let mut y = s.to_array();
            for i in 0..13 {
                y[i] += eps * dir[i];
            }
            let sy = AugmentedState::from_array(y);
            grid_voltage_target(&sy, &sp, &g, &p, &d, &duties(&sy)).unwrap().0
        };
        let eps = 1e-7;
        let fd = (z7_at(eps) - z7_at(-eps)) / (2.0 * eps);
        assert!(
            (fd - z7_dot).abs() < 1e-5 * z7_dot.abs().max(1.0),
            "{law:?}: analytic {z7_dot}, difference {fd}"
        );
    }
}

#[test]
fn branch_matrices_match_closed_loop_jacobian() {
    let p = GridParameters::table();
    let g = GainSet::tuned();
    let d = Disturbance::default();
    let sp = setpoint(&d, BusLaw::Centred);
    let xe = equilibrium(&sp.refs, &d, &p).unwrap().state;
    let f = |y: [f64; 13]| {
        let s = AugmentedState::from_array(y);
        let u1 = u1_law(&s, &sp.refs, &g, &p, &d).unwrap().raw;
        let u2 = u2_law(&s, &sp.refs, &g, &p, &d).unwrap().raw;
        rhs_masked(&s, [u1, u2, 0.5], &d, &p, &sp.refs, &g, [true; 4]).unwrap().to_array()
    };
    let y0 = AugmentedState::cold(xe).to_array();
    // Error coordinates [v, α_outer, i, α_inner] in the augmented state.
    for (idx, a) in [([0usize, 9, 2, 10], build_a13(&g, &p)), ([3, 11, 5, 12], build_a46(&g, &p))] {
        for i in 0..4 {
            for j in 0..4 {
                let eps = 1e-4;
                let mut yp = y0;
                yp[idx[j]] += eps;
                let mut ym = y0;
                ym[idx[j]] -= eps;
                let num = (f(yp)[idx[i]] - f(ym)[idx[i]]) / (2.0 * eps);
                assert!(
                    (num - a[(i, j)]).abs() < 1e-6 * a.amax(),
                    "entry ({i},{j}): jacobian {num}, matrix {}",
                    a[(i, j)]
                );
            }
        }
    }
}

#[test]
fn monitor_catches_a_disabled_supercapacitor_loop() {
    let p = GridParameters::table();
    let g = GainSet::tuned();
    let d = Disturbance::default();
    let sp = setpoint(&d, BusLaw::Centred);
    let w = LyapunovWeights::certify(&g, &p).unwrap();
    let mut s = perturbed(&sp, &d);
    let h = 1e-6;
    let every = 100;
    let mut points = Vec::new();
    for k in 0..=20_000usize {
        let t = k as f64 * h;
        let u1 = u1_law(&s, &sp.refs, &g, &p, &d).unwrap().raw;
        let u2 = u2_law(&s, &sp.refs, &g, &p, &d).unwrap().raw;
        // u3 held at zero instead of following its law.
        let u = DutyTriple::from_raw([u1, u2, 0.0]);
        if k % every == 0 {
            let (z7, z7_dot) = grid_voltage_target(&s, &sp, &g, &p, &d, &u).unwrap();
            let z8 = p.c7 * g.k7 * (s.phys.x7 - z7) - (s.phys.x7 - s.phys.x9) / p.r7 - p.c7 * z7_dot;
            points.push(MonitorPoint {
                v: lyapunov_sample(t, &s, &sp, &d, z7, z8, &w, &p),
                interval: 0,
                saturated_steps: 0,
                disturbed: false,
            });
        }
        let y = rk4_step(
            |_, y: &[f64; 13]| {
                rhs_masked(&AugmentedState::from_array(*y), u.applied, &d, &p, &sp.refs, &g, [true; 4])
                    .map(|r| r.to_array())
            },
            t,
            &s.to_array(),
            h,
        )
        .unwrap();
        s = AugmentedState::from_array(y);
    }
    let rep = lyapunov_monitor(&points, every, MonitorConfig::default());
    assert!(rep.violation_count() > 0, "{}", rep.summary());

    // The same start with the full law is clean.
    let mut sc = Scenario::constant(g, d, 780.0, 1000.0, 0.02);
    sc.initial = InitialCondition::Explicit(perturbed(&sp, &d));
    sc.bus_law = BusLaw::Centred;
    sc.warm_start = true;
    sc.record_every = every;
    sc.schedule = DisturbanceSchedule::constant(d);
    let tr = simulate(&sc).unwrap();
    assert_eq!(tr.monitor(MonitorConfig::default()).unwrap().violation_count(), 0);
}
