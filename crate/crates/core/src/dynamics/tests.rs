use proptest::prelude::*;

use super::*;
use crate::diffcore::{ParamStore, Tape, Tensor, Var};
use crate::Result;

fn zero_map() -> FnBlock<impl Fn(&mut Tape, Var) -> Result<Var>> {
    FnBlock::new(1, |t: &mut Tape, h| t.scale(h, 0.0))
}

fn identity() -> FnBlock<impl Fn(&mut Tape, Var) -> Result<Var>> {
    FnBlock::new(1, |_: &mut Tape, h| Ok(h))
}

fn doubling() -> FnBlock<impl Fn(&mut Tape, Var) -> Result<Var>> {
    FnBlock::new(1, |t: &mut Tape, h| t.scale(h, 2.0))
}

fn one_step<B: Block>(kind: IntegratorKind, block: &B, h: &[f64], dt: f64) -> Vec<f64> {
    let store = ParamStore::new();
    let mut tape = Tape::new();
    let x = tape.input(Tensor::vector(h.to_vec()));
    let y = kind.step(block, &mut tape, &store, x, StepSize::Fixed(dt), &StepContext::None).unwrap();
    tape.value(y).data().to_vec()
}

#[test]
fn velocity_examples() {
    let store = ParamStore::new();
    let mut tape = Tape::new();
    let h = tape.input(Tensor::vector(vec![1.0, -1.0]));
    let v = velocity(&identity(), &mut tape, &store, h, &StepContext::None).unwrap();
    assert_eq!(tape.value(v).data(), &[0.0, 0.0]);
    let v = velocity(&doubling(), &mut tape, &store, h, &StepContext::None).unwrap();
    assert_eq!(tape.value(v).data(), &[1.0, -1.0]);
    let h = tape.input(Tensor::vector(vec![3.0]));
    let v = velocity(&zero_map(), &mut tape, &store, h, &StepContext::None).unwrap();
    assert_eq!(tape.value(v).data(), &[-3.0]);
}

#[test]
fn width_change_is_rejected() {
    let widen = FnBlock::new(1, |t: &mut Tape, h| t.concat(&[h, h]));
    let store = ParamStore::new();
    let mut tape = Tape::new();
    let h = tape.input(Tensor::vector(vec![1.0]));
    for kind in IntegratorKind::ALL {
        let err = kind.step(&widen, &mut tape, &store, h, StepSize::Fixed(0.5), &StepContext::None).unwrap_err();
        assert!(err.to_string().contains("identical widths"), "{err}");
    }
}

#[test]
fn dt_outside_unit_interval_is_rejected() {
    let store = ParamStore::new();
    let mut tape = Tape::new();
    let h = tape.input(Tensor::vector(vec![1.0]));
    for kind in IntegratorKind::ALL {
        for dt in [-0.1, 1.5, f64::NAN] {
            assert!(kind.step(&identity(), &mut tape, &store, h, StepSize::Fixed(dt), &StepContext::None).is_err());
        }
    }
}

#[test]
fn single_step_examples() {
    assert_eq!(one_step(IntegratorKind::Euler, &doubling(), &[1.0], 0.5), vec![1.5]);
    let dt: f64 = 0.5;
    let expect = [
        (IntegratorKind::Euler, 1.0 - dt),
        (IntegratorKind::Heun, 1.0 - dt + dt * dt / 2.0),
        (IntegratorKind::Midpoint, 1.0 - dt + dt * dt / 2.0),
        (IntegratorKind::Rk4, 1.0 - dt + dt.powi(2) / 2.0 - dt.powi(3) / 6.0 + dt.powi(4) / 24.0),
    ];
    for (kind, want) in expect {
        let got = one_step(kind, &zero_map(), &[1.0], dt)[0];
        assert!((got - want).abs() < 1e-12, "{kind:?}: {got} vs {want}");
    }
    assert!((one_step(IntegratorKind::Heun, &zero_map(), &[1.0], 0.5)[0] - 0.625).abs() < 1e-12);
    assert!((one_step(IntegratorKind::Rk4, &zero_map(), &[1.0], 0.5)[0] - 0.606_770_833_333_333_3).abs() < 1e-12);
}

#[test]
fn fixed_points_and_boundaries() {
    let h = [0.3, -1.7, 4.0];
    let double3 = FnBlock::new(3, |t: &mut Tape, h| t.scale(h, 2.0));
    let ident3 = FnBlock::new(3, |_: &mut Tape, h| Ok(h));
    for kind in IntegratorKind::ALL {
        assert_eq!(one_step(kind, &ident3, &h, 0.37), h.to_vec());
        assert_eq!(one_step(kind, &double3, &h, 0.0), h.to_vec());
    }
    assert_eq!(one_step(IntegratorKind::Euler, &double3, &h, 1.0), vec![0.6, -3.4, 8.0]);
}

#[test]
fn evaluation_counts() {
    for kind in IntegratorKind::ALL {
        let block = CountingBlock::new(zero_map());
        one_step(kind, &block, &[1.0], 0.25);
        assert_eq!(block.calls(), kind.evaluations());
    }
    assert_eq!(IntegratorKind::ALL.map(IntegratorKind::evaluations), [1, 2, 2, 4]);
}

fn global_error(kind: IntegratorKind, n: usize) -> f64 {
    let mut h = vec![1.0];
    for _ in 0..n {
        h = one_step(kind, &zero_map(), &h, 1.0 / n as f64);
    }
    (h[0] - (-1.0f64).exp()).abs()
}

/// Least-squares slope of log(error) against log(h).
fn order_slope(kind: IntegratorKind) -> f64 {
    let pts: Vec<(f64, f64)> = [4usize, 8, 16, 32, 64]
        .iter()
        .map(|&n| ((1.0 / n as f64).ln(), global_error(kind, n).ln()))
        .collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    num / den
}

#[test]
fn integrator_order() {
    for (kind, want, tol) in [
        (IntegratorKind::Euler, 1.0, 0.2),
        (IntegratorKind::Heun, 2.0, 0.2),
        (IntegratorKind::Midpoint, 2.0, 0.2),
        (IntegratorKind::Rk4, 4.0, 0.3),
    ] {
        let s = order_slope(kind);
        assert!((s - want).abs() <= tol, "{kind:?} slope {s}");
    }
}

fn run_fn_stack<B: Block>(config: DepthConfig, blocks: Vec<B>, h0: &[f64]) -> Result<Vec<Vec<f64>>> {
    let store = ParamStore::new();
    let stack = DepthStack::new(config, blocks, Vec::new(), None)?;
    let mut tape = Tape::new();
    let x = tape.input(Tensor::vector(h0.to_vec()));
    let traj = stack.run(&mut tape, &store, x, &StepContext::None)?;
    assert_eq!(traj.states.len(), config.steps + 1);
    assert_eq!(traj.dt_used.len(), config.steps);
    Ok(traj.states.iter().map(|&s| tape.value(s).data().to_vec()).collect())
}

#[test]
fn recurrence_examples() {
    let cfg = DepthConfig::new(Wiring::Score, 2, IntegratorKind::Euler, Schedule::HALF).unwrap();
    let states = run_fn_stack(cfg, vec![zero_map()], &[1.0]).unwrap();
    assert_eq!(states, vec![vec![1.0], vec![0.5], vec![0.25]]);

    for kind in IntegratorKind::ALL {
        for k in 1..6 {
            let cfg = DepthConfig::new(Wiring::Score, k, kind, Schedule::InverseK).unwrap();
            let states = run_fn_stack(cfg, vec![identity()], &[2.5]).unwrap();
            assert!(states.iter().all(|s| s == &[2.5]));
        }
    }

    let cfg = DepthConfig::new(Wiring::Base, 2, IntegratorKind::Euler, Schedule::InverseK).unwrap();
    let plus_one = FnBlock::new(1, |t: &mut Tape, h| t.shift(h, 1.0));
    let times_two = FnBlock::new(1, |t: &mut Tape, h| t.scale(h, 2.0));
    let blocks: Vec<&dyn Block> = vec![&plus_one, &times_two];
    let states = run_fn_stack(cfg, blocks, &[0.0]).unwrap();
    assert_eq!(states, vec![vec![0.0], vec![1.0], vec![2.0]]);
}

#[test]
fn block_count_mismatch_is_rejected() {
    let cfg = DepthConfig::new(Wiring::Score, 3, IntegratorKind::Euler, Schedule::InverseK).unwrap();
    assert!(DepthStack::new(cfg, vec![identity(), identity()], Vec::new(), None).is_err());
    let cfg = DepthConfig::new(Wiring::Skip05, 3, IntegratorKind::Euler, Schedule::InverseK).unwrap();
    assert!(DepthStack::new(cfg, vec![identity()], Vec::new(), None).is_err());
}

#[test]
fn skip_variants_force_half() {
    for wiring in [Wiring::Skip05, Wiring::ScoreSkip05] {
        let cfg = DepthConfig::new(wiring, 4, IntegratorKind::Euler, Schedule::InverseK).unwrap();
        assert_eq!(cfg.schedule, Schedule::HALF);
        assert_eq!(cfg.dt(), 0.5);
    }
    assert!(DepthConfig::new(Wiring::Score, 0, IntegratorKind::Euler, Schedule::InverseK).is_err());
    assert!(DepthConfig::new(Wiring::Score, 2, IntegratorKind::Euler, Schedule::Fixed { value: 1.5 }).is_err());
}

#[test]
fn skip05_matches_half_averaging() {
    let cfg = DepthConfig::new(Wiring::Skip05, 2, IntegratorKind::Euler, Schedule::InverseK).unwrap();
    let (double, zero) = (doubling(), zero_map());
    let blocks: Vec<&dyn Block> = vec![&double, &zero];
    let states = run_fn_stack(cfg, blocks, &[4.0]).unwrap();
    assert_eq!(states, vec![vec![4.0], vec![6.0], vec![3.0]]);
}

/// Dense linear block `h W` with a parameter, for tying checks.
struct Linear {
    w: crate::diffcore::ParamId,
    width: usize,
}

impl Block for Linear {
    fn width(&self) -> usize {
        self.width
    }

    fn param_ids(&self) -> Vec<crate::diffcore::ParamId> {
        vec![self.w]
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, h: Var, _ctx: &StepContext) -> Result<Var> {
        let w = tape.param(store, self.w);
        let y = tape.matmul(h, w)?;
        tape.tanh(y)
    }
}

fn linear_stack(wiring: Wiring, k: usize, schedule: Schedule) -> (ParamStore, DepthStack<Linear>) {
    let mut store = ParamStore::new();
    let cfg = DepthConfig::new(wiring, k, IntegratorKind::Euler, schedule).unwrap();
    let mut seed = 0.1;
    let stack = DepthStack::build(cfg, &mut store, "blocks", |store, name| {
        seed += 0.05;
        let data = (0..9).map(|i| ((i as f64 + seed) * 0.7).sin() * 0.6).collect();
        let w = store.add(format!("{name}.w"), Tensor::new(vec![3, 3], data)?)?;
        Ok(Linear { w, width: 3 })
    })
    .unwrap();
    (store, stack)
}

#[test]
fn parameter_tying() {
    for k in 1..8 {
        let (store, stack) = linear_stack(Wiring::Score, k, Schedule::InverseK);
        assert_eq!(stack.param_ids().len(), 1);
        assert_eq!(store.count(), 9);
        let (store, stack) = linear_stack(Wiring::Base, k, Schedule::InverseK);
        assert_eq!(stack.param_ids().len(), k);
        assert_eq!(store.count(), 9 * k);
    }
    let (store, stack) = linear_stack(Wiring::Classic, 3, Schedule::InverseK);
    assert_eq!(stack.param_ids().len(), 3 + 6);
    assert_eq!(store.count(), 27 + 18);
    let (store, stack) = linear_stack(Wiring::Score, 4, Schedule::Learnable { alpha_init: 0.0 });
    assert_eq!(stack.param_ids().len(), 2);
    assert_eq!(store.count(), 10);
}

#[test]
fn learnable_dt_is_differentiated() {
    let (store, stack) = linear_stack(Wiring::Score, 4, Schedule::Learnable { alpha_init: 0.2 });
    let x = Tensor::matrix(2, 3, vec![0.5, -0.3, 0.9, 1.1, 0.2, -0.7]).unwrap();
    let check = crate::diffcore::grad_check_params(
        &store,
        |tape, store| {
            let h = tape.input(x.clone());
            let traj = stack.run(tape, store, h, &StepContext::None)?;
            let sq = tape.mul(traj.last(), traj.last())?;
            tape.sum(sq)
        },
        1e-5,
    )
    .unwrap();
    assert!(check.max_rel_error < 1e-7, "{check:?}");
    let mut tape = Tape::new();
    let h = tape.input(x);
    let traj = stack.run(&mut tape, &store, h, &StepContext::None).unwrap();
    assert!(traj.dt_used.iter().all(|&d| (d - learnable_dt(0.2)).abs() < 1e-15));
}

#[test]
fn plain_recurrence_equivalence() {
    let (store, stack) = linear_stack(Wiring::Score, 5, Schedule::Fixed { value: 1.0 });
    let block = &stack.blocks()[0];
    let x = Tensor::matrix(1, 3, vec![0.4, -1.2, 0.8]).unwrap();
    let mut tape = Tape::new();
    let h0 = tape.input(x);
    let traj = stack.run(&mut tape, &store, h0, &StepContext::None).unwrap();
    let mut h = h0;
    for i in 1..=5 {
        h = block.apply(&mut tape, &store, h, &StepContext::None).unwrap();
        assert!(tape.value(traj.states[i]).max_abs_diff(tape.value(h)) <= 1e-12);
    }
}

#[test]
fn stacked_wirings_count_one_evaluation_per_step() {
    for wiring in Wiring::ALL.into_iter().filter(|&w| w != Wiring::Classic) {
        for kind in IntegratorKind::ALL {
            let store = ParamStore::new();
            let cfg = DepthConfig::new(wiring, 3, kind, Schedule::InverseK).unwrap();
            let blocks: Vec<_> = (0..cfg.block_count()).map(|_| FnBlock::new(2, |t: &mut Tape, h| t.tanh(h))).collect();
            let stack = DepthStack::new(cfg, blocks, Vec::new(), None).unwrap();
            let mut tape = Tape::new();
            let h = tape.input(Tensor::vector(vec![0.1, 0.2]));
            let traj = stack.run(&mut tape, &store, h, &StepContext::None).unwrap();
            assert_eq!(traj.evaluations, cfg.evaluations());
        }
    }
}

proptest! {
    #[test]
    fn euler_output_lies_between_h_and_f(
        h in prop::collection::vec(-10.0f64..10.0, 1..6),
        a in -3.0f64..3.0,
        c in -2.0f64..2.0,
        dt in 0.0f64..=1.0,
    ) {
        let n = h.len();
        let block = FnBlock::new(n, move |t: &mut Tape, x| {
            let y = t.scale(x, a)?;
            let y = t.shift(y, c)?;
            t.tanh(y)
        });
        let out = one_step(IntegratorKind::Euler, &block, &h, dt);
        for i in 0..n {
            let f = (a * h[i] + c).tanh();
            let lo = h[i].min(f) - 1e-12;
            let hi = h[i].max(f) + 1e-12;
            prop_assert!(out[i] >= lo && out[i] <= hi);
        }
    }

    #[test]
    fn euler_dt_zero_and_one(h in prop::collection::vec(-5.0f64..5.0, 1..6)) {
        let n = h.len();
        let block = FnBlock::new(n, |t: &mut Tape, x| {
            let y = t.mul(x, x)?;
            t.shift(y, -0.5)
        });
        prop_assert_eq!(one_step(IntegratorKind::Euler, &block, &h, 0.0), h.clone());
        let f: Vec<f64> = h.iter().map(|x| x * x - 0.5).collect();
        prop_assert_eq!(one_step(IntegratorKind::Euler, &block, &h, 1.0), f);
    }
}
