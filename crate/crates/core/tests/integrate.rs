use diffpos::integrate::*;
use diffpos::{make_model, ModelName, ModelSpec, SystemDef};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::{FRAC_PI_2, TAU};

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn linear(a: [[f64; 2]; 2]) -> SystemDef {
    make_model(&ModelSpec::positive_linear(a)).unwrap()
}

fn oscillator() -> SystemDef {
    make_model(&ModelSpec::new(ModelName::HarmonicOscillatorRotatingCone)).unwrap()
}

fn none() -> Input {
    Input::none()
}

#[test]
fn equilibrium_stays_put() {
    let sys = make_model(&ModelSpec::pendulum(3.0, 0.0)).unwrap();
    let traj = flow(&sys, &v(&[0.0, 0.0]), &vec![0.0].into(), (0.0, 10.0), 1e-3).unwrap();
    assert!(traj.states.iter().all(|s| s[0] == 0.0 && s[1] == 0.0));
    assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn oscillator_returns_after_a_full_turn() {
    let traj = flow(&oscillator(), &v(&[1.0, 0.0]), &none(), (0.0, TAU), 1e-3).unwrap();
    assert!((traj.last_state() - v(&[1.0, 0.0])).norm() < 1e-6);
}

#[test]
fn diagonal_flow_matches_exponential() {
    let sys = linear([[-1.0, 0.0], [0.0, -2.0]]);
    let traj = flow(&sys, &v(&[1.0, 1.0]), &none(), (0.0, 1.0), 1e-3).unwrap();
    let x = traj.last_state();
    assert!((x[0] - (-1f64).exp()).abs() < 1e-8 && (x[1] - (-2f64).exp()).abs() < 1e-8);
    let psi = fundamental_matrix(&sys, &v(&[1.0, 1.0]), &[], 0.0, 1.0, 1e-3).unwrap().psi;
    let expect = DMatrix::from_diagonal(&v(&[(-1f64).exp(), (-2f64).exp()]));
    assert!((psi - expect).amax() < 1e-8);
}

#[test]
fn variational_flow_matches_matrix_exponential() {
    let sys = linear([[2.0, 1.0], [1.0, 2.0]]);
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let dx0 = v(&[0.3, -0.8]);
    let run = variational_flow(&sys, &v(&[0.5, 0.1]), &dx0, &none(), (0.0, 0.5), 1e-3, false).unwrap();
    let expect = (a * 0.5).exp() * &dx0;
    assert!((run.tangents.last().unwrap() - expect).norm() < 1e-7);

    let zero = variational_flow(&sys, &v(&[0.5, 0.1]), &v(&[0.0, 0.0]), &none(), (0.0, 1.0), 1e-3, false).unwrap();
    assert!(zero.tangents.iter().all(|t| t.norm() == 0.0));
}

#[test]
fn oscillator_tangent_rotates_back() {
    let run = variational_flow(&oscillator(), &v(&[1.0, 0.0]), &v(&[1.0, 0.0]), &none(), (0.0, TAU), 1e-3, false)
        .unwrap();
    assert!((run.tangents.last().unwrap() - v(&[1.0, 0.0])).norm() < 1e-6);
    let psi = fundamental_matrix(&oscillator(), &v(&[1.0, 0.0]), &[], 0.0, FRAC_PI_2, 1e-3).unwrap().psi;
    let expect = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    assert!((psi - expect).amax() < 1e-9);
}

#[test]
fn renormalized_growth_matches_the_plain_run() {
    let sys = linear([[2.0, 1.0], [1.0, 2.0]]);
    let x0 = v(&[0.2, 0.4]);
    let dx0 = v(&[1.0, 0.5]);
    let plain = variational_flow(&sys, &x0, &dx0, &none(), (0.0, 2.0), 1e-3, false).unwrap();
    let renorm = variational_flow(&sys, &x0, &dx0, &none(), (0.0, 2.0), 1e-3, true).unwrap();
    let big = plain.tangents.last().unwrap();
    let unit = renorm.tangents.last().unwrap();
    assert!((unit.norm() - 1.0).abs() < 1e-12);
    assert!((big.normalize() - unit).norm() < 1e-10);
    // rescaling the renormalized tangent by the accumulated growth recovers the plain one
    assert!((unit * renorm.log_growth.exp() - big).norm() / big.norm() < 1e-10);
}

#[test]
fn fundamental_matrix_semigroup() {
    let sys = make_model(&ModelSpec::pendulum(3.0, 1.2)).unwrap();
    let x0 = v(&[0.3, 0.2]);
    let u = [1.2];
    let p20 = fundamental_matrix(&sys, &x0, &u, 0.0, 2.0, 1e-3).unwrap().psi;
    let p10 = fundamental_matrix(&sys, &x0, &u, 0.0, 1.0, 1e-3).unwrap().psi;
    let x1 = flow(&sys, &x0, &vec![1.2].into(), (0.0, 1.0), 1e-3).unwrap().last_state();
    let p21 = fundamental_matrix(&sys, &x1, &u, 1.0, 2.0, 1e-3).unwrap().psi;
    assert!((p20 - p21 * p10).amax() < 1e-6);
    let id = fundamental_matrix(&sys, &x0, &u, 0.5, 0.5, 1e-3).unwrap().psi;
    assert_eq!(id, DMatrix::identity(2, 2));
}

#[test]
fn vector_field_is_transported_by_the_linearization() {
    for (sys, x0, u) in [
        (make_model(&ModelSpec::pendulum(3.0, 1.2)).unwrap(), v(&[0.1, 0.2]), vec![1.2]),
        (make_model(&ModelSpec::new(ModelName::MonotoneBistable)).unwrap(), v(&[0.5, -1.0]), vec![]),
        (make_model(&ModelSpec::new(ModelName::PolarDecoupled)).unwrap(), v(&[0.5, 0.4]), vec![]),
    ] {
        let f0 = sys.eval(&x0, &u).unwrap();
        let run = variational_flow(&sys, &x0, &f0, &Input::Constant(u.clone()), (0.0, 5.0), 1e-3, false).unwrap();
        for i in (0..run.tangents.len()).step_by(250) {
            let f = sys.eval(&run.trajectory.state(i), &u).unwrap();
            assert!((&run.tangents[i] - f).norm() < 1e-6, "{} at t = {}", sys.name(), run.trajectory.times[i]);
        }
    }
}

#[test]
fn step_halving_shows_fourth_order() {
    let sys = oscillator();
    let err = |h: f64| {
        let x = flow(&sys, &v(&[1.0, 0.0]), &none(), (0.0, 2.0), h).unwrap().last_state();
        (x - v(&[2f64.cos(), -(2f64.sin())])).norm()
    };
    let ratio = err(0.1) / err(0.05);
    assert!((12.0..=20.0).contains(&ratio), "{ratio}");
}

#[test]
fn divergence_and_domain_errors() {
    let sys = linear([[5.0, 0.0], [0.0, 5.0]]);
    assert!(matches!(
        flow(&sys, &v(&[1.0, 1.0]), &none(), (0.0, 10.0), 1e-2),
        Err(diffpos::Error::Diverged { .. })
    ));
    let polar = make_model(&ModelSpec::new(ModelName::PolarDecoupled)).unwrap();
    assert!(matches!(
        flow(&polar, &v(&[0.0, -0.5]), &none(), (0.0, 1.0), 1e-3),
        Err(diffpos::Error::LeftDomain { .. })
    ));
}

#[test]
fn trajectory_csv_layout() {
    let sys = make_model(&ModelSpec::pendulum(3.0, 1.2)).unwrap();
    let traj = flow(&sys, &v(&[6.2, 1.0]), &vec![1.2].into(), (0.0, 0.1), 1e-2).unwrap();
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,x_1,x_2,wrap_1,wrap_2");
    assert_eq!(lines.len(), traj.len() + 1);
    assert!(lines.last().unwrap().ends_with(",1,0"));
    assert!(!text.contains('\r'));
    let back: Trajectory = serde_json::from_str(&serde_json::to_string(&traj).unwrap()).unwrap();
    assert_eq!(back, traj);
}
