use std::sync::Arc;

use heislab::contact::*;
use heislab::flow::*;
use heislab::grid::BoxRegion;
use heislab::*;
use proptest::prelude::*;

fn psi_field(name: &str) -> Arc<dyn VectorField<f64>> {
    Arc::new(contact_from_psi(GeneratingFunction::preset(name, 1).unwrap()))
}

fn constant_psi(kappa: f64) -> Arc<dyn VectorField<f64>> {
    Arc::new(contact_from_psi(GeneratingFunction::from_closed(ClosedForm::constant(1, kappa))))
}

/// b = X + xT, not contact.
fn noncontact_control() -> Arc<dyn VectorField<f64>> {
    Arc::new(
        FrameField::new(vec![
            ClosedForm::constant(1, 1.0).into_arc(),
            ClosedForm::zero(1).into_arc(),
            ClosedForm::coordinate(1, 0).into_arc(),
        ])
        .unwrap(),
    )
}

fn seeds() -> Vec<HPoint<f64>> {
    vec![
        HPoint::h1(0.1, 0.2, -0.3),
        HPoint::h1(-0.4, 0.05, 0.2),
        HPoint::h1(0.3, -0.35, 0.1),
        HPoint::h1(0.0, 0.0, 0.0),
    ]
}

#[test]
fn constant_psi_translates_vertically() {
    let kappa = 0.7;
    let f = integrate_flow(constant_psi(kappa).as_ref(), &seeds(), 1.0, 0.1).unwrap();
    for (p, tr) in seeds().iter().zip(&f.trajectories) {
        assert_eq!(&tr.states[0], p);
        for (tau, q) in f.times.iter().zip(&tr.states) {
            assert!((q.x(0) - p.x(0)).abs() < 1e-10);
            assert!((q.y(0) - p.y(0)).abs() < 1e-10);
            assert!((q.t() - (p.t() - 4.0 * kappa * tau)).abs() < 1e-10);
        }
    }
}

#[test]
fn linear_psi_jacobian_carries_frame() {
    let f = integrate_flow(psi_field("linear-x").as_ref(), &seeds(), 1.0, 0.1).unwrap();
    for (k, p) in seeds().iter().enumerate() {
        let jac = f.trajectories[k].jacobians.last().unwrap();
        let x0 = [1.0, 0.0, 2.0 * p.y(0)];
        let pushed: Vec<f64> = (0..3).map(|r| (0..3).map(|c| jac[r * 3 + c] * x0[c]).sum()).collect();
        let end = f.trajectories[k].states.last().unwrap();
        let expect = [1.0, 0.0, 2.0 * end.y(0)];
        for i in 0..3 {
            assert!((pushed[i] - expect[i]).abs() < 1e-10);
        }
        assert!((f.det(k, 10).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn bump_flow_is_horizontal_and_consistent() {
    let b = psi_field("bump");
    let f = integrate_flow(b.as_ref(), &seeds(), 1.0, 1e-3).unwrap();
    assert!(horizontality_defect(&f).unwrap() <= 1e-6);
    assert!(f.logdet_gap() < 1e-8);
    assert!(f.min_det().unwrap() > 0.0);
}

#[test]
fn noncontact_control_tilts_the_distribution() {
    let f = integrate_flow(noncontact_control().as_ref(), &seeds(), 1.0, 1e-3).unwrap();
    assert!(horizontality_defect(&f).unwrap() >= 0.1);
}

#[test]
fn noncontact_defect_matches_hand_variational_system() {
    // velocity (1, 0, 2y + x): D_pΦ = [[1,0,0],[0,1,0],[τ,2τ,1]]
    let f = integrate_flow(noncontact_control().as_ref(), &[HPoint::h1(0.0, 0.0, 0.0)], 1.0, 0.01).unwrap();
    let jac = f.trajectories[0].jacobians.last().unwrap();
    let expect = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 2.0, 1.0];
    for (a, b) in jac.iter().zip(expect) {
        assert!((a - b).abs() < 1e-10);
    }
    // Y(0) = (0,1,0) ↦ (0,1,2) = Y + 4T at Φ = (1,0,0.5)
    assert!((horizontality_defect(&f).unwrap() - 4.0).abs() < 1e-10);
}

#[test]
fn zero_field_flow() {
    let b: Arc<dyn VectorField<f64>> = Arc::new(FrameField::zero(1));
    let f = integrate_flow(b.as_ref(), &seeds(), 1.0, 0.25).unwrap();
    assert_eq!(horizontality_defect(&f).unwrap(), 0.0);
    let region = BoxRegion::cube(1, -1.0, 1.0).unwrap();
    let pb = pushforward_bound(&f, b.as_ref(), &region, 6);
    assert_eq!(pb.measured, 1.0);
    assert_eq!(pb.theory, 1.0);
}

#[test]
fn pushforward_density_bounded() {
    let b = psi_field("bump");
    let region = BoxRegion::cube(1, -1.2, 1.2).unwrap();
    let f = integrate_flow(b.as_ref(), &seeds(), 1.0, 0.01).unwrap();
    let pb = pushforward_bound(&f, b.as_ref(), &region, 16);
    assert!(pb.theory > 1.0);
    assert!(pb.holds(0.05), "{pb:?}");

    let lin = psi_field("linear-x");
    let f = integrate_flow(lin.as_ref(), &seeds(), 1.0, 0.1).unwrap();
    let pb = pushforward_bound(&f, lin.as_ref(), &region, 4);
    assert!((pb.measured - 1.0).abs() < 1e-12);
}

#[test]
fn semigroup_property() {
    let b = psi_field("bump");
    let whole = integrate_flow(b.as_ref(), &seeds(), 1.0, 1e-3).unwrap();
    let first = integrate_flow(b.as_ref(), &seeds(), 0.4, 1e-3).unwrap();
    let mids: Vec<HPoint<f64>> = first.trajectories.iter().map(|t| t.states.last().unwrap().clone()).collect();
    let second = integrate_flow(b.as_ref(), &mids, 0.6, 1e-3).unwrap();
    for (a, b) in whole.trajectories.iter().zip(&second.trajectories) {
        let (p, q) = (a.states.last().unwrap(), b.states.last().unwrap());
        for i in 0..3 {
            assert!((p.coord(i) - q.coord(i)).abs() < 1e-10);
        }
    }
}

#[test]
fn escape_is_reported() {
    let opts = FlowOptions { jacobian: false, bounds: Some(BoxRegion::cube(1, -1.0, 1.0).unwrap()), reaction: None };
    let err = integrate_flow_with(psi_field("linear-x").as_ref(), &[HPoint::h1(0.0, 0.0, 0.0)], 0.0, 2.0, 20, &opts);
    assert!(matches!(err, Err(LabError::CharacteristicEscape(_))));
}

fn hand_problem(h: f64, dt: f64) -> TransportProblem<f64> {
    TransportProblem {
        b: psi_field("linear-x"),
        c: Reaction::zero(),
        u0: ClosedForm::coordinate(1, 1).into_arc(),
        form: TransportForm::Plus,
        mode: ReactionMode::Multiplicative,
        horizon: 1.0,
        dt,
        out_box: BoxRegion::cube(1, -0.6, 0.6).unwrap(),
        h,
        bounds: None,
    }
}

fn test_function() -> TestFunction<f64> {
    TestFunction { horizon: 0.8, chi: ClosedForm::poly_bump(1, vec![0.05, 0.1, 0.0], vec![0.45; 3], 6).into_arc() }
}

fn oscillating_problem(h: f64) -> TransportProblem<f64> {
    let phase = ClosedForm::polynomial(1, vec![(2.0, vec![1, 0, 0]), (3.0, vec![0, 1, 0]), (1.0, vec![0, 0, 1])]);
    TransportProblem { u0: phase.then(&Smooth1D::sin()).into_arc(), ..hand_problem(h, h) }
}

#[test]
fn hand_transport_solution_is_exact() {
    let u = solve_transport(&hand_problem(0.1, 0.1)).unwrap();
    for (tau, g) in u.times().iter().zip(u.snapshots()) {
        for k in 0..g.values().len() {
            let p = g.node_point(k);
            assert!((g.values()[k] - (p.y(0) + tau)).abs() < 1e-12);
        }
    }
}

#[test]
fn minus_form_reverses_characteristics() {
    let mut pr = hand_problem(0.25, 0.25);
    pr.form = TransportForm::Minus;
    let u = solve_transport(&pr).unwrap();
    let p = HPoint::h1(0.25, 0.25, 0.0);
    assert!((u.value(1.0, &p).unwrap() - (0.25 - 1.0)).abs() < 1e-12);
}

#[test]
fn residuals_shrink_under_refinement() {
    let rep = transport_study(&oscillating_problem(0.05), &test_function(), &Smooth1D::square(), 2).unwrap();
    assert!(rep.all_passed(), "{}\n{:?}", rep.to_csv(), rep.checks);
}

#[test]
fn identity_renormalization_is_distributional() {
    let pr = hand_problem(0.1, 0.1);
    let u = solve_transport(&pr).unwrap();
    let phi = test_function();
    let d = distributional_residual(&u, pr.u0.as_ref(), pr.b.as_ref(), &pr.c, &phi, pr.form, pr.mode).unwrap();
    let r = renormalization_residual(&u, &Smooth1D::identity(), pr.u0.as_ref(), pr.b.as_ref(), &pr.c, &phi, pr.form, pr.mode)
        .unwrap();
    assert_eq!(d, r);
}

#[test]
fn zero_solution_has_zero_residual() {
    let mut pr = hand_problem(0.1, 0.1);
    pr.u0 = ClosedForm::zero(1).into_arc();
    let u = solve_transport(&pr).unwrap();
    let d = distributional_residual(&u, pr.u0.as_ref(), pr.b.as_ref(), &pr.c, &test_function(), pr.form, pr.mode).unwrap();
    assert_eq!(d, 0.0);
}

#[test]
fn test_function_support_is_checked() {
    let u = solve_transport(&hand_problem(0.1, 0.1)).unwrap();
    let pr = hand_problem(0.1, 0.1);
    let wide = TestFunction { horizon: 0.5, chi: ClosedForm::bump(1, vec![0.0; 3], vec![0.9; 3]).into_arc() };
    let err = distributional_residual(&u, pr.u0.as_ref(), pr.b.as_ref(), &pr.c, &wide, pr.form, pr.mode);
    assert!(matches!(err, Err(LabError::SupportViolation(_))));
}

#[test]
fn transport_respects_maximum_principle() {
    let mut pr = hand_problem(0.1, 0.05);
    pr.b = psi_field("bump");
    pr.u0 = ClosedForm::bump(1, vec![0.1, 0.0, 0.0], vec![0.6; 3]).into_arc();
    let u = solve_transport(&pr).unwrap();
    let (lo, hi) = u.range();
    assert!(lo >= 0.0 && hi <= 1.0 + 1e-15);
}

#[test]
fn reaction_modes_along_characteristics() {
    let mut pr = hand_problem(0.25, 0.05);
    pr.b = Arc::new(FrameField::zero(1));
    pr.u0 = ClosedForm::constant(1, 2.0).into_arc();
    pr.c = Reaction::preset("constant(0.5)", 1).unwrap();
    let p = HPoint::h1(0.0, 0.0, 0.0);
    let u = solve_transport(&pr).unwrap();
    assert!((u.value(1.0, &p).unwrap() - 2.0 * (-0.5f64).exp()).abs() < 1e-12);
    pr.mode = ReactionMode::Additive;
    let u = solve_transport(&pr).unwrap();
    assert!((u.value(1.0, &p).unwrap() - 1.5).abs() < 1e-12);
}

#[test]
fn continuity_conserves_mass_for_divergence_free_field() {
    let b = psi_field("linear-x");
    let u0 = ClosedForm::bump(1, vec![0.0; 3], vec![0.5; 3]).into_arc();
    let out = BoxRegion::cube(1, -1.2, 1.2).unwrap();
    let u = solve_continuity(&b, &u0, 0.5, 0.1, &out, 0.05, None).unwrap();
    let m = snapshot_masses(&u);
    for v in &m {
        assert!((v - m[0]).abs() < 1e-6, "{m:?}");
    }
    // u(s, ·) = u₀ ∘ Φ(−s, ·): Φ(−s) sends (x, y, t) to (x, y + s, t + 2xs)
    let p = HPoint::h1(0.1, -0.3, 0.05);
    let back = HPoint::h1(0.1, -0.3 + 0.5, 0.05 + 2.0 * 0.1 * 0.5);
    assert!((u.snapshots()[5].interp(&p).unwrap() - u0.value(&back)).abs() < 1e-3);
}

#[test]
fn continuity_vertical_translation() {
    let kappa = 0.3;
    let b = constant_psi(kappa);
    let u0 = ClosedForm::bump(1, vec![0.0; 3], vec![0.5; 3]).into_arc();
    let out = BoxRegion::cube(1, -1.0, 1.0).unwrap();
    let u = solve_continuity(&b, &u0, 0.5, 0.1, &out, 0.25, None).unwrap();
    let g = u.snapshots().last().unwrap();
    for k in 0..g.values().len() {
        let p = g.node_point(k);
        let shifted = HPoint::h1(p.x(0), p.y(0), p.t() + 4.0 * kappa * 0.5);
        assert!((g.values()[k] - u0.value(&shifted)).abs() < 1e-12);
        assert!(g.values()[k] >= 0.0);
    }
}

proptest! {
    #[test]
    fn linear_flow_matches_closed_form(x in -1.0f64..1.0, y in -1.0f64..1.0, t in -1.0f64..1.0, s in 0.1f64..2.0) {
        let f = integrate_flow(psi_field("linear-x").as_ref(), &[HPoint::h1(x, y, t)], s, 0.1).unwrap();
        let q = f.trajectories[0].states.last().unwrap();
        prop_assert!((q.x(0) - x).abs() < 1e-10);
        prop_assert!((q.y(0) - (y - s)).abs() < 1e-10);
        prop_assert!((q.t() - (t - 2.0 * x * s)).abs() < 1e-10);
    }

    #[test]
    fn determinant_stays_positive(x in -0.8f64..0.8, y in -0.8f64..0.8, t in -0.8f64..0.8) {
        let f = integrate_flow(psi_field("bump").as_ref(), &[HPoint::h1(x, y, t)], 0.5, 0.01).unwrap();
        prop_assert!(f.min_det().unwrap() > 0.0);
        prop_assert!(f.logdet_gap() < 1e-6, "{}", f.logdet_gap());
    }
}
