mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use quadcam::analysis::{normalized_angular_jerk, normalized_jerk};
use quadcam::dynamics::{keyframe_index_map, sx, Input, State};
use quadcam::keyframes::unwrap_angles;
use quadcam::planner::prepare_plan;
use quadcam::scene::{parse_scene, SceneSpec};
use quadcam::time_opt::{TimeOptConfig, TimeOptMode};
use quadcam::traj_io::format_number;
use quadcam::{plan_trajectory, Grid, Keyframe, KeyframeList, PlanningContext, Trajectory, Weights};

fn context(dt: f64) -> PlanningContext {
    PlanningContext::new(Default::default(), Default::default(), Default::default(), dt)
}

fn trajectory(samples: &[(f64, f64, f64, f64, f64)], dt: f64) -> Trajectory {
    let states: Vec<State> = samples
        .iter()
        .map(|&(x, y, z, yaw, pitch)| {
            let mut s = State::zeros();
            s[0] = x;
            s[1] = y;
            s[2] = z;
            s[sx::YAW_Q] = yaw;
            s[sx::PITCH_G] = pitch;
            s
        })
        .collect();
    let n = states.len() - 1;
    Trajectory {
        grid: Grid::new(dt, n).unwrap(),
        states,
        inputs: vec![Input::zeros(); n],
    }
}

fn samples() -> impl Strategy<Value = Vec<(f64, f64, f64, f64, f64)>> {
    prop::collection::vec(
        (-50.0..50.0f64, -50.0..50.0f64, 0.0..30.0f64, -3.0..3.0f64, -1.5..0.0f64),
        4..40,
    )
}

fn differences(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[1] - w[0]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jerk_matches_repeated_differencing(s in samples(), dt in 0.02..0.5f64) {
        let traj = trajectory(&s, dt);
        let n = s.len() - 1;
        let channels: Vec<Vec<f64>> = (0..3)
            .map(|k| s.iter().map(|p| [p.0, p.1, p.2][k]).collect())
            .collect();
        let third: Vec<Vec<f64>> = channels
            .iter()
            .map(|c| differences(&differences(&differences(c))).iter().map(|d| d / dt.powi(3)).collect())
            .collect();
        let integral: f64 = (0..third[0].len())
            .map(|i| (third[0][i].powi(2) + third[1][i].powi(2) + third[2][i].powi(2)).sqrt() * dt)
            .sum();
        let expected = integral / (n as f64 * dt);
        let got = normalized_jerk(&traj).unwrap();
        prop_assert!((got - expected).abs() <= 1e-9 * expected.max(1.0), "{got} vs {expected}");
    }

    #[test]
    fn jerk_ignores_quadratic_offsets(
        s in samples(),
        dt in 0.05..0.5f64,
        c in prop::array::uniform3(-10.0..10.0f64),
        v in prop::array::uniform3(-5.0..5.0f64),
        a in prop::array::uniform3(-2.0..2.0f64),
    ) {
        let shifted: Vec<_> = s
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let t = i as f64 * dt;
                let q = |k: usize| c[k] + v[k] * t + a[k] * t * t;
                (p.0 + q(0), p.1 + q(1), p.2 + q(2), p.3, p.4)
            })
            .collect();
        let base = normalized_jerk(&trajectory(&s, dt)).unwrap();
        let moved = normalized_jerk(&trajectory(&shifted, dt)).unwrap();
        prop_assert!((base - moved).abs() <= 1e-6 * base.max(1.0) / dt.powi(3), "{base} vs {moved}");
    }

    #[test]
    fn jerk_scales_linearly(s in samples(), dt in 0.05..0.5f64, k in -5.0..5.0f64) {
        let scaled: Vec<_> = s.iter().map(|p| (k * p.0, k * p.1, k * p.2, p.3, p.4)).collect();
        let base = normalized_jerk(&trajectory(&s, dt)).unwrap();
        let got = normalized_jerk(&trajectory(&scaled, dt)).unwrap();
        prop_assert!((got - k.abs() * base).abs() <= 1e-9 * base.max(1.0) * k.abs().max(1.0));
    }

    #[test]
    fn angular_jerk_ignores_constant_yaw(s in samples(), dt in 0.05..0.5f64, offset in -10.0..10.0f64) {
        let turned: Vec<_> = s.iter().map(|p| (p.0, p.1, p.2, p.3 + offset, p.4)).collect();
        let base = normalized_angular_jerk(&trajectory(&s, dt)).unwrap();
        let got = normalized_angular_jerk(&trajectory(&turned, dt)).unwrap();
        prop_assert!((got - base).abs() <= 1e-6 * base.max(1.0) / dt.powi(3));
    }

    #[test]
    fn formatted_numbers_read_back(v in prop::num::f64::NORMAL | prop::num::f64::ZERO) {
        let text = format_number(v);
        let back: f64 = text.parse().unwrap();
        prop_assert!((back - v).abs() <= 5e-9 * v.abs(), "{v} -> {text}");
        let digits = text
            .split('e')
            .next()
            .unwrap()
            .chars()
            .filter(char::is_ascii_digit)
            .collect::<String>();
        prop_assert!(digits.trim_start_matches('0').len() <= 9, "{text}");
    }

    #[test]
    fn unwrapped_angles_stay_close(angles in prop::collection::vec(-20.0..20.0f64, 1..30)) {
        let out = unwrap_angles(angles.iter().copied());
        prop_assert_eq!(out[0], angles[0]);
        for i in 1..out.len() {
            prop_assert!((out[i] - out[i - 1]).abs() <= std::f64::consts::PI + 1e-12);
            let turns = (out[i] - angles[i]) / std::f64::consts::TAU;
            prop_assert!((turns - turns.round()).abs() <= 1e-9);
        }
    }

    #[test]
    fn grid_times_map_to_their_index(steps in prop::collection::btree_set(0usize..5000, 1..20), dt in prop::sample::select(vec![0.01, 0.05, 0.1, 0.2, 0.25])) {
        let steps: Vec<usize> = steps.into_iter().collect();
        let times: Vec<f64> = steps.iter().map(|&k| k as f64 * dt).collect();
        prop_assert_eq!(keyframe_index_map(&times, dt).unwrap(), steps);
    }

    #[test]
    fn scenes_round_trip(
        seed in any::<u64>(),
        keyframe_w in 1.0..1e5f64,
        jerk_w in 0.01..10.0f64,
        dt in prop::sample::select(vec![0.05, 0.1, 0.2]),
        with_time_opt in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keyframes = common::random_keyframes(&mut rng, (2, 8), (5.0, 30.0), dt);
        let scene = SceneSpec {
            quadrotor: Default::default(),
            gimbal: Default::default(),
            dt,
            weights: Weights {
                keyframe: keyframe_w,
                position_derivative: [0.0, 0.0, jerk_w],
                ..Default::default()
            },
            keyframes,
            lookat_keyframes: None,
            time_opt: with_time_opt.then(|| TimeOptConfig {
                mode: TimeOptMode::FreeEnd,
                w: 0.5,
                h: dt,
                min_gap: dt,
                ..Default::default()
            }),
            initial_state: None,
        };
        let text = scene.to_toml().unwrap();
        let back = parse_scene(&text).unwrap();
        prop_assert_eq!(&back, &scene);
        prop_assert_eq!(back.to_toml().unwrap(), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, max_shrink_iters: 16, ..ProptestConfig::default() })]

    #[test]
    fn hessian_is_positive_semidefinite(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kfs = common::random_keyframes(&mut rng, (2, 6), (5.0, 15.0), 0.1);
        let plan = prepare_plan(&kfs, &context(0.1)).unwrap();
        let h = &plan.problem.h;
        prop_assert!(h.is_symmetric(0.0));
        let scale = h.iter().fold(1f64, |m, (_, _, v)| m.max(v.abs()));
        for k in 0..20 {
            let v: Vec<f64> = (0..plan.problem.n_vars())
                .map(|i| (((i * 7919 + k * 104729) as u64).wrapping_mul(seed | 1) % 2001) as f64 / 1000.0 - 1.0)
                .collect();
            let norm2: f64 = v.iter().map(|a| a * a).sum();
            prop_assert!(h.quad_form(&v) >= -1e-9 * scale * norm2);
        }
    }

    #[test]
    fn scaling_weights_keeps_the_minimizer(seed in any::<u64>(), c in 0.25..8.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kfs = common::random_keyframes(&mut rng, (2, 5), (5.0, 12.0), 0.1);
        let base = context(0.1);
        let mut scaled = base.clone();
        let w = &mut scaled.weights;
        w.keyframe *= c;
        w.orientation *= c;
        w.effort *= c;
        for k in 0..3 {
            w.position_derivative[k] *= c;
            w.angle_derivative[k] *= c;
        }
        let (a, ra) = plan_trajectory(&kfs, &base).unwrap();
        let (b, rb) = plan_trajectory(&kfs, &scaled).unwrap();
        // Directions with almost no curvature (slow yaw drift between
        // keyframes) are not resolved by any double-precision solve, so the
        // comparison is on positions and on cross-evaluated objectives.
        let gap = a.positions().concat().iter().zip(b.positions().concat()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(gap <= 1e-4, "position gap {gap}");
        let fa = common::direct_cost(&a, &kfs, &base.weights, &base.quad);
        let fb = common::direct_cost(&b, &kfs, &base.weights, &base.quad);
        prop_assert!((fa - fb).abs() <= 1e-7 * fa + 1e-9, "{fa} vs {fb}");
        prop_assert!((rb.objective - c * ra.objective).abs() <= 1e-7 * c * ra.objective + 1e-9 * c);
    }

    #[test]
    fn keyframes_survive_a_plan(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kfs = common::random_keyframes(&mut rng, (2, 6), (5.0, 20.0), 0.1);
        let (traj, _) = plan_trajectory(&kfs, &context(0.1)).unwrap();
        let rebuilt = Trajectory::from_solution(
            quadcam::qp::VarLayout::new(traj.grid.n_stages),
            traj.grid.dt,
            &traj.to_solution(),
        )
        .unwrap();
        prop_assert_eq!(rebuilt, traj);
        prop_assert!(KeyframeList::new(kfs.as_slice().to_vec()).is_ok());
        let _ = Keyframe::new(0.0, [0.0; 3], 0.0, 0.0);
    }
}
