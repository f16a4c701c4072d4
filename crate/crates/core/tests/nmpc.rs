mod common;

use common::{integrator_qp_minimizer, naive_cost, Affine, Weights};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnnmpc_core::data::{Channel, Scaler, StateVariant};
use rnnmpc_core::nmpc::{
    mpc_step, ocp_cost, ocp_gradient, ocp_solve, Dynamics, FrozenRnn, LinearStub, MpcState,
    OcpContext, OcpSpec, PhysicalBounds, ReferenceWindow,
};
use rnnmpc_core::rnn::{CellKind, HiddenState, RnnArch, RnnModel};

fn weights(spec: &OcpSpec) -> Weights {
    Weights {
        q_s: spec.q_s,
        q_d: spec.q_d,
        q_t: spec.q_t,
        r_d: spec.r_d,
        r_m: spec.r_m,
        u_mean: spec.u_mean,
        x_max: spec.x_max,
        w_pen: spec.penalty_weight(),
    }
}

fn random_vecs(rng: &mut ChaCha8Rng, rows: usize, cols: usize, r: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-r..r)).collect())
        .collect()
}

fn random_spec(rng: &mut ChaCha8Rng) -> OcpSpec {
    OcpSpec {
        horizon: rng.random_range(2..=6),
        q_s: rng.random_range(0.0..6.0),
        q_d: rng.random_range(0.0..2.0),
        q_t: rng.random_range(0.0..10.0),
        r_d: rng.random_range(0.1..5.0),
        r_m: rng.random_range(0.0..5.0),
        u_mean: rng.random_range(-0.2..0.2),
        x_max: rng.random_range(0.3..0.9),
        state_penalty: Some(rng.random_range(0.0..50.0)),
        ..OcpSpec::default()
    }
}

fn random_stub(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LinearStub {
    let mut s = LinearStub::identity(n, m);
    for v in &mut s.a {
        *v += rng.random_range(-0.3..0.3);
    }
    for v in &mut s.b {
        *v = rng.random_range(-0.5..0.5);
    }
    for v in &mut s.c {
        *v = rng.random_range(-0.1..0.1);
    }
    s
}

fn affine(s: &LinearStub) -> Affine {
    Affine {
        n: s.n,
        m: s.m,
        a: s.a.clone(),
        b: s.b.clone(),
        c: s.c.clone(),
    }
}

fn rnn(kind: CellKind, hidden: usize, layers: usize, seed: u64) -> (RnnModel, HiddenState) {
    let arch = RnnArch::new(kind, 2, 4, hidden, layers);
    let m = RnnModel::init(arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut h = HiddenState::zeros(&m.arch);
    for v in h.h.iter_mut().chain(h.c.iter_mut()).flatten() {
        *v = rng.random_range(-0.5..0.5);
    }
    (m, h)
}

#[test]
fn cost_matches_term_by_term_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let spec = random_spec(&mut rng);
        let (n, m) = (rng.random_range(1..=3), 2 * rng.random_range(1..=3));
        let stub = random_stub(&mut rng, n, m);
        let x0 = random_vecs(&mut rng, 1, n, 1.0).remove(0);
        let u_prev = random_vecs(&mut rng, 1, m, 1.0).remove(0);
        let reference = ReferenceWindow {
            x_des: random_vecs(&mut rng, spec.horizon, n, 0.9),
        };
        let u = random_vecs(&mut rng, spec.horizon - 1, m, 1.0);
        let ctx = OcpContext {
            x0: &x0,
            u_prev: &u_prev,
            reference: &reference,
            spec: &spec,
        };
        let (c, xs) = ocp_cost(&u, &ctx, &stub).unwrap();
        let want = naive_cost(
            &affine(&stub),
            &weights(&spec),
            &x0,
            &u_prev,
            &reference.x_des,
            &u,
        );
        assert!(
            (c - want).abs() <= 1e-10 * want.abs().max(1.0),
            "{c} vs {want}"
        );
        assert_eq!(xs.len(), spec.horizon + 1);
    }
}

fn fd_check<D: Dynamics>(u: &[Vec<f64>], ctx: &OcpContext<'_>, model: &D) {
    let (_, g) = ocp_gradient(u, ctx, model).unwrap();
    let h = 1e-6;
    for k in 0..u.len() {
        for i in 0..u[k].len() {
            let mut up = u.to_vec();
            up[k][i] += h;
            let mut dn = u.to_vec();
            dn[k][i] -= h;
            let fd = (ocp_cost(&up, ctx, model).unwrap().0 - ocp_cost(&dn, ctx, model).unwrap().0)
                / (2.0 * h);
            let scale = fd.abs().max(g[k][i].abs()).max(1e-3);
            assert!(
                (fd - g[k][i]).abs() <= 1e-5 * scale,
                "step {k} channel {i}: analytic {} vs numeric {fd}",
                g[k][i]
            );
        }
    }
}

#[test]
fn gradient_matches_differences_on_linear_stubs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let spec = random_spec(&mut rng);
        let stub = random_stub(&mut rng, 2, 4);
        let x0 = random_vecs(&mut rng, 1, 2, 0.9).remove(0);
        let u_prev = random_vecs(&mut rng, 1, 4, 1.0).remove(0);
        let reference = ReferenceWindow {
            x_des: random_vecs(&mut rng, spec.horizon, 2, 0.9),
        };
        let u = random_vecs(&mut rng, spec.horizon - 1, 4, 1.0);
        let ctx = OcpContext {
            x0: &x0,
            u_prev: &u_prev,
            reference: &reference,
            spec: &spec,
        };
        fd_check(&u, &ctx, &stub);
    }
}

#[test]
fn gradient_matches_differences_through_frozen_rnn() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (i, (kind, hidden, layers)) in [
        (CellKind::Gru, 6, 1),
        (CellKind::Gru, 5, 2),
        (CellKind::Lstm, 6, 1),
        (CellKind::Lstm, 4, 2),
    ]
    .into_iter()
    .enumerate()
    {
        let (model, h) = rnn(kind, hidden, layers, 10 + i as u64);
        let dynamics = FrozenRnn {
            model: &model,
            h: &h,
        };
        let spec = OcpSpec {
            x_max: 0.2,
            state_penalty: Some(20.0),
            q_d: 1.0,
            ..OcpSpec::default()
        };
        let x0 = random_vecs(&mut rng, 1, 2, 0.5).remove(0);
        let reference = ReferenceWindow {
            x_des: random_vecs(&mut rng, spec.horizon, 2, 0.2),
        };
        let u = random_vecs(&mut rng, 3, 4, 0.9);
        let ctx = OcpContext {
            x0: &x0,
            u_prev: &[0.1, -0.2, 0.3, 0.0],
            reference: &reference,
            spec: &spec,
        };
        let before = h.clone();
        fd_check(&u, &ctx, &dynamics);
        assert_eq!(h, before);
    }
}

#[test]
fn input_difference_gradient_has_closed_form() {
    let spec = OcpSpec {
        horizon: 5,
        q_s: 0.0,
        q_t: 0.0,
        r_m: 0.0,
        r_d: 1.7,
        state_penalty: Some(0.0),
        ..OcpSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u = random_vecs(&mut rng, 4, 2, 1.0);
    let u_prev = [0.3, -0.4];
    let reference = ReferenceWindow::constant(&[0.0], 5);
    let ctx = OcpContext {
        x0: &[0.0],
        u_prev: &u_prev,
        reference: &reference,
        spec: &spec,
    };
    let (_, g) = ocp_gradient(&u, &ctx, &LinearStub::antagonistic(1, 0.8, 0.3)).unwrap();
    for k in 0..4 {
        for i in 0..2 {
            let prev = if k == 0 { u_prev[i] } else { u[k - 1][i] };
            let mut want = 2.0 * spec.r_d * (u[k][i] - prev);
            if k + 1 < 4 {
                want -= 2.0 * spec.r_d * (u[k + 1][i] - u[k][i]);
            }
            assert!((g[k][i] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn solver_matches_closed_form_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (n, m) = (2, 4);
        let spec = OcpSpec {
            horizon: rng.random_range(2..=5),
            q_s: rng.random_range(0.5..6.0),
            q_d: rng.random_range(0.0..1.0),
            q_t: rng.random_range(0.5..10.0),
            r_d: rng.random_range(0.5..5.0),
            r_m: rng.random_range(0.5..5.0),
            u_min: -50.0,
            u_max: 50.0,
            x_max: 100.0,
            state_penalty: Some(0.0),
            tol: 1e-11,
            max_iter: 2000,
            ..OcpSpec::default()
        };
        let b: Vec<f64> = (0..n * m).map(|_| rng.random_range(-0.5..0.5)).collect();
        let stub = LinearStub::integrator(b.clone(), n, m);
        let x0 = random_vecs(&mut rng, 1, n, 0.8).remove(0);
        let u_prev = random_vecs(&mut rng, 1, m, 0.8).remove(0);
        let reference = ReferenceWindow {
            x_des: random_vecs(&mut rng, spec.horizon, n, 0.8),
        };
        let ctx = OcpContext {
            x0: &x0,
            u_prev: &u_prev,
            reference: &reference,
            spec: &spec,
        };
        let want =
            integrator_qp_minimizer(&b, n, m, &weights(&spec), &x0, &u_prev, &reference.x_des);
        assert!(want.iter().flatten().all(|v| v.abs() < 50.0));
        let sol = ocp_solve(&vec![vec![0.0; m]; spec.horizon - 1], &ctx, &stub).unwrap();
        for (a, b) in sol.u_seq.iter().flatten().zip(want.iter().flatten()) {
            assert!((a - b).abs() <= 1e-6, "solver {a} vs oracle {b}");
        }
    }
}

#[test]
fn zero_cost_instance_is_found() {
    let spec = OcpSpec {
        u_mean: 0.1,
        ..OcpSpec::default()
    };
    let x0 = [0.0, 0.0];
    let reference = ReferenceWindow::constant(&x0, spec.horizon);
    let u_prev = [0.1; 4];
    let ctx = OcpContext {
        x0: &x0,
        u_prev: &u_prev,
        reference: &reference,
        spec: &spec,
    };
    let stub = LinearStub::antagonistic(2, 0.9, 0.4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let warm = random_vecs(&mut rng, 3, 4, 0.9);
    let sol = ocp_solve(&warm, &ctx, &stub).unwrap();
    assert!(sol.report.cost < 1e-8, "cost {}", sol.report.cost);
}

#[test]
fn optimal_warm_start_is_returned_unchanged() {
    let spec = OcpSpec {
        tol: 1e-9,
        max_iter: 500,
        ..OcpSpec::default()
    };
    let x0 = [0.2];
    let reference = ReferenceWindow::constant(&[0.5], spec.horizon);
    let ctx = OcpContext {
        x0: &x0,
        u_prev: &[0.0, 0.0],
        reference: &reference,
        spec: &spec,
    };
    let stub = LinearStub::antagonistic(1, 0.9, 0.3);
    let first = ocp_solve(&vec![vec![0.0; 2]; 3], &ctx, &stub).unwrap();
    let again = ocp_solve(&first.u_seq, &ctx, &stub).unwrap();
    assert!(again.report.iterations <= 1);
    for (a, b) in again
        .u_seq
        .iter()
        .flatten()
        .zip(first.u_seq.iter().flatten())
    {
        assert!((a - b).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solve_descends_and_stays_in_box(seed in 0u64..1_000_000, rnn_model in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = random_spec(&mut rng);
        spec.u_min = rng.random_range(-1.0..0.0);
        spec.u_max = spec.u_min + rng.random_range(0.01..1.5);
        spec.max_iter = 20;
        let x0 = random_vecs(&mut rng, 1, 2, 1.0).remove(0);
        let u_prev = random_vecs(&mut rng, 1, 4, 1.0).remove(0);
        let reference = ReferenceWindow { x_des: random_vecs(&mut rng, spec.horizon, 2, 0.9) };
        let warm: Vec<Vec<f64>> = (0..spec.horizon - 1)
            .map(|_| (0..4).map(|_| rng.random_range(spec.u_min..=spec.u_max)).collect())
            .collect();
        let ctx = OcpContext { x0: &x0, u_prev: &u_prev, reference: &reference, spec: &spec };
        let (model, h) = rnn(CellKind::Gru, 5, 1, seed);
        let stub = random_stub(&mut rng, 2, 4);
        let (warm_cost, sol) = if rnn_model {
            let d = FrozenRnn { model: &model, h: &h };
            (ocp_cost(&warm, &ctx, &d).unwrap().0, ocp_solve(&warm, &ctx, &d).unwrap())
        } else {
            (ocp_cost(&warm, &ctx, &stub).unwrap().0, ocp_solve(&warm, &ctx, &stub).unwrap())
        };
        prop_assert!(sol.report.cost <= warm_cost + 1e-12);
        for v in sol.u_seq.iter().flatten() {
            prop_assert!(*v >= spec.u_min && *v <= spec.u_max);
        }
    }
}

fn unit_scaler(n_joints: usize) -> Scaler {
    let mut channels: Vec<Channel> = (0..n_joints)
        .map(|j| Channel {
            name: format!("q{}", j + 1),
            min: -22.0,
            max: 22.0,
        })
        .collect();
    for j in 0..n_joints {
        for b in 1..=2 {
            channels.push(Channel {
                name: format!("pdes{}{b}", j + 1),
                min: 0.0,
                max: 0.7,
            });
        }
    }
    Scaler::new(StateVariant::Position, n_joints, channels).unwrap()
}

#[test]
fn physical_bounds_scale_to_expected_values() {
    let s = unit_scaler(2);
    let spec = OcpSpec::default()
        .with_physical(&PhysicalBounds::default(), &s)
        .unwrap();
    assert_eq!(spec.u_mean, 0.0);
    assert_eq!((spec.u_min, spec.u_max), (-1.0, 1.0));
    assert!((spec.x_max - 20.0 / 22.0).abs() < 1e-15);
}

#[test]
fn physical_solution_round_trips_through_scaler() {
    let s = unit_scaler(1);
    let spec = OcpSpec::default()
        .with_physical(&PhysicalBounds::default(), &s)
        .unwrap();
    let x0 = s.scale_state(&[4.0]);
    let reference = ReferenceWindow::constant(&s.scale_state(&[10.0]), spec.horizon);
    let ctx = OcpContext {
        x0: &x0,
        u_prev: &[0.0, 0.0],
        reference: &reference,
        spec: &spec,
    };
    let sol = ocp_solve(
        &vec![vec![0.0; 2]; 3],
        &ctx,
        &LinearStub::antagonistic(1, 0.9, 0.2),
    )
    .unwrap();
    for u in &sol.u_seq {
        let bar = s.unscale_input(u);
        assert!(bar.iter().all(|p| (0.0..=0.7).contains(p)));
        let back = s.scale_input(&bar);
        for (a, b) in back.iter().zip(u) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

/// Residual model with zero weights: `x̂_{k+1} = x̂_k` for any input.
fn holding_model(n_joints: usize) -> RnnModel {
    let mut arch = RnnArch::new(CellKind::Gru, n_joints, 2 * n_joints, 4, 1);
    arch.residual = true;
    RnnModel::zeros(arch)
        .unwrap()
        .with_scaler(unit_scaler(n_joints))
}

#[test]
fn held_state_keeps_mean_pressure() {
    let model = holding_model(2);
    let spec = OcpSpec::default()
        .with_physical(&PhysicalBounds::default(), model.scaler.as_ref().unwrap())
        .unwrap();
    let mut mpc = MpcState::new(&model, &spec);
    let x = [0.3, -0.4];
    let reference = ReferenceWindow::constant(&x, spec.horizon);
    for _ in 0..3 {
        let out = mpc_step(&mut mpc, &x, &reference, &spec, &model).unwrap();
        for p in &out.u_bar {
            assert!((p - 0.35).abs() < 1e-9, "{p}");
        }
        assert!(out.telemetry.cost < 1e-12);
    }
    assert_eq!(mpc.cycle, 3);
}

#[test]
fn identical_state_gives_identical_output() {
    let (model, _) = rnn(CellKind::Lstm, 6, 2, 21);
    let spec = OcpSpec::default();
    let mut a = MpcState::new(&model, &spec);
    let reference = ReferenceWindow::constant(&[0.2, -0.1], spec.horizon);
    mpc_step(&mut a, &[0.0, 0.1], &reference, &spec, &model).unwrap();
    let mut b = a.clone();
    let oa = mpc_step(&mut a, &[0.05, 0.1], &reference, &spec, &model).unwrap();
    let ob = mpc_step(&mut b, &[0.05, 0.1], &reference, &spec, &model).unwrap();
    assert_eq!(oa.u, ob.u);
    assert_eq!(oa.predicted, ob.predicted);
    assert_eq!(a, b);
}

#[test]
fn hidden_state_moves_only_in_the_cycle_update() {
    let (model, _) = rnn(CellKind::Gru, 6, 1, 22);
    let spec = OcpSpec::default();
    let mut mpc = MpcState::new(&model, &spec);
    let reference = ReferenceWindow::constant(&[0.2, -0.1], spec.horizon);
    let h0 = mpc.h.clone();
    mpc_step(&mut mpc, &[0.0, 0.1], &reference, &spec, &model).unwrap();
    assert_eq!(mpc.h, h0);
    let applied = mpc.u_prev.clone();
    let mut expect = MpcState::with_hidden(h0, applied.clone(), &spec);
    expect.observe(&model, &[0.0, 0.1], &applied);
    mpc_step(&mut mpc, &[0.1, 0.1], &reference, &spec, &model).unwrap();
    assert_eq!(mpc.h, expect.h);
}

#[test]
fn blown_up_model_holds_last_input() {
    let mut model = holding_model(1);
    model.params.iter_mut().for_each(|p| *p = f64::NAN);
    let spec = OcpSpec::default();
    let mut mpc = MpcState::new(&model, &spec);
    mpc.u_prev = vec![0.2, -0.2];
    let reference = ReferenceWindow::constant(&[0.0], spec.horizon);
    let out = mpc_step(&mut mpc, &[0.1], &reference, &spec, &model).unwrap();
    assert!(out.telemetry.fallback);
    assert_eq!(out.u, vec![0.2, -0.2]);
}
