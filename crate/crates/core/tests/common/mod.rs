//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use quadcam::dynamics::{sx, ux, INPUT_DIM, STATE_DIM};
use quadcam::keyframes::{unwrap_angles, Keyframe, KeyframeList};
use quadcam::planner::Trajectory;
use quadcam::qp::QpProblem;
use quadcam::{QuadrotorParams, Weights};

pub fn scene_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenes").join(name)
}

/// `exp([[A, B, c], [0, 0, 0]] dt)` for the continuous model written out from
/// the equations of motion.
pub fn zoh_by_matrix_exponential(quad: &QuadrotorParams, dt: f64) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let n = STATE_DIM + INPUT_DIM + 1;
    let mut m = DMatrix::<f64>::zeros(n, n);
    let u0 = STATE_DIM;
    let c0 = STATE_DIM + INPUT_DIM;
    for k in 0..3 {
        m[(k, 6 + k)] = 1.0; // position' = velocity
        m[(6 + k, u0 + k)] = 1.0 / quad.mass; // velocity' = F/m + g
        m[(6 + k, c0)] = quad.gravity[k];
    }
    m[(3, 9)] = 1.0; // body yaw' = yaw rate
    m[(9, u0 + 3)] = 1.0 / quad.inertia_z; // yaw rate' = M/I
    m[(4, u0 + 4)] = 1.0; // gimbal yaw' = rate input
    m[(5, u0 + 5)] = 1.0; // gimbal pitch' = rate input
    let e = (m * dt).exp();
    let a = e.view((0, 0), (STATE_DIM, STATE_DIM)).into_owned();
    let b = e.view((0, u0), (STATE_DIM, INPUT_DIM)).into_owned();
    let c = e.view((0, c0), (STATE_DIM, 1)).column(0).into_owned();
    (a, b, c)
}

/// Random vehicle parameters with hover inside the input box.
pub fn random_quad<R: Rng>(rng: &mut R) -> QuadrotorParams {
    let mass = rng.gen_range(0.2..5.0);
    let g = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-11.0..-8.0)];
    let hover = [-mass * g[0], -mass * g[1], -mass * g[2]];
    QuadrotorParams {
        mass,
        inertia_z: rng.gen_range(0.001..0.1),
        gravity: g,
        u_min: [hover[0] - 5.0, hover[1] - 5.0, 0.0, -0.5],
        u_max: [hover[0] + 5.0, hover[1] + 5.0, 2.0 * hover[2], 0.5],
    }
}

/// Random keyframes: 2..=8 of them over a 5..=30 s horizon, with reachable
/// position steps and yaw steps below 120 degrees.
pub fn random_keyframes<R: Rng>(rng: &mut R, m_range: (usize, usize), horizon: (f64, f64), dt: f64) -> KeyframeList {
    const SPACING: usize = 5;
    let t_end = (rng.gen_range(horizon.0..=horizon.1) / dt).round() * dt;
    let slots = (t_end / dt).round() as usize;
    // Interior keyframes sit on slots SPACING..=slots-SPACING, SPACING apart:
    // pick sorted distinct offsets in the shrunken range, then spread them.
    let span = (slots + 1).saturating_sub(2 * SPACING);
    let capacity = if span == 0 { 0 } else { (span - 1) / SPACING + 1 };
    let interior = rng.gen_range(m_range.0..=m_range.1).saturating_sub(2).min(capacity);
    let free = span - (SPACING - 1) * interior.saturating_sub(1);
    let mut offsets = rand::seq::index::sample(rng, free, interior).into_vec();
    offsets.sort_unstable();
    let mut times: Vec<f64> = vec![0.0];
    times.extend(offsets.iter().enumerate().map(|(j, &o)| (SPACING + o + (SPACING - 1) * j) as f64 * dt));
    times.push(t_end);
    let mut pos = [0.0, 0.0, rng.gen_range(2.0..10.0)];
    let mut yaw: f64 = rng.gen_range(-3.0..3.0);
    let mut kfs = Vec::new();
    for (j, &t) in times.iter().enumerate() {
        if j > 0 {
            let gap = t - times[j - 1];
            for p in pos.iter_mut() {
                *p += rng.gen_range(-1.5..1.5) * gap;
            }
            pos[2] = pos[2].max(1.0);
            yaw += rng.gen_range(-2.0..2.0);
        }
        kfs.push(Keyframe::new(t, pos, yaw, rng.gen_range(-1.4..-0.05)));
    }
    KeyframeList::new(kfs).unwrap()
}

/// Direct evaluation of the planner cost on a trajectory, term by term.
pub fn direct_cost(traj: &Trajectory, keyframes: &KeyframeList, weights: &Weights, quad: &QuadrotorParams) -> f64 {
    let dt = traj.grid.dt;
    let n = traj.grid.n_stages;
    let x = &traj.states;
    let mut total = 0.0;

    let yaws = unwrap_angles(keyframes.as_slice().iter().map(|k| k.yaw));
    for (kf, yaw) in keyframes.as_slice().iter().zip(yaws) {
        let i = (kf.time / dt).round() as usize;
        for k in 0..3 {
            total += weights.keyframe * (x[i][k] - kf.position[k]).powi(2);
        }
        total += weights.orientation * (x[i][sx::YAW_Q] + x[i][sx::YAW_G] - yaw).powi(2);
        total += weights.orientation * (x[i][sx::PITCH_G] - kf.pitch).powi(2);
    }

    let diff = |ch: usize, i: usize, q: usize| -> f64 {
        let v: Vec<f64> = (0..=q).map(|m| x[i - m][ch]).collect();
        let d = match q {
            1 => v[0] - v[1],
            2 => v[0] - 2.0 * v[1] + v[2],
            3 => v[0] - 3.0 * v[1] + 3.0 * v[2] - v[3],
            _ => unreachable!(),
        };
        d / dt.powi(q as i32)
    };
    for q in 1..=3 {
        for i in q..=n {
            for ch in 0..3 {
                total += weights.position_derivative[q - 1] * diff(ch, i, q).powi(2);
            }
            for ch in [sx::YAW_Q, sx::YAW_G, sx::PITCH_G] {
                total += weights.angle_derivative[q - 1] * diff(ch, i, q).powi(2);
            }
        }
    }

    for u in &traj.inputs {
        for k in 0..3 {
            total += weights.effort * (u[ux::FORCE + k] / quad.mass + quad.gravity[k]).powi(2);
        }
        total += weights.effort * (u[ux::TORQUE] / quad.inertia_z).powi(2);
        total += weights.effort * (u[ux::RATE_YAW_G].powi(2) + u[ux::RATE_PITCH_G].powi(2));
    }
    total
}

/// Variable bounds from single-entry inequality rows.
pub fn box_bounds(problem: &QpProblem) -> (Vec<f64>, Vec<f64>) {
    let n = problem.n_vars();
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    let dense = problem.a_ineq.to_dense();
    for r in 0..dense.nrows() {
        let nz: Vec<usize> = (0..n).filter(|&c| dense[(r, c)] != 0.0).collect();
        assert_eq!(nz.len(), 1, "inequality row {r} is not a simple bound");
        let c = nz[0];
        let a = dense[(r, c)];
        let limit = problem.b_ineq[r] / a;
        if a > 0.0 {
            hi[c] = hi[c].min(limit);
        } else {
            lo[c] = lo[c].max(limit);
        }
    }
    (lo, hi)
}

fn solve_dense(k: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    match k.clone().lu().solve(rhs) {
        Some(s) if s.iter().all(|v| v.is_finite()) => s,
        _ => k.clone().svd(true, true).solve(rhs, 1e-12).unwrap(),
    }
}

/// Dense primal active-set method for `min x'Hx/2 + f'x` subject to
/// `A_eq x = b_eq` and simple bounds, started from a feasible point.
/// Returns the minimizer and the number of working-set changes.
pub fn dense_active_set(problem: &QpProblem, x_start: &[f64]) -> (Vec<f64>, usize) {
    let n = problem.n_vars();
    let h = problem.h.to_dense();
    let f = DVector::from_column_slice(&problem.f);
    let a_eq = problem.a_eq.to_dense();
    let m_eq = a_eq.nrows();
    let (lo, hi) = box_bounds(problem);
    let mut x = DVector::from_column_slice(x_start);
    for i in 0..n {
        assert!(x[i] >= lo[i] - 1e-12 && x[i] <= hi[i] + 1e-12, "start is not feasible at {i}");
    }
    // Working set entries: (variable, at upper bound?).
    let mut working: Vec<(usize, bool)> = Vec::new();
    let mut changes = 0;

    for _ in 0..10_000 {
        let m = m_eq + working.len();
        let mut k = DMatrix::<f64>::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(&h);
        k.view_mut((n, 0), (m_eq, n)).copy_from(&a_eq);
        k.view_mut((0, n), (n, m_eq)).copy_from(&a_eq.transpose());
        let mut rhs = DVector::<f64>::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&f));
        for r in 0..m_eq {
            rhs[n + r] = problem.b_eq[r];
        }
        for (w, &(var, upper)) in working.iter().enumerate() {
            k[(n + m_eq + w, var)] = 1.0;
            k[(var, n + m_eq + w)] = 1.0;
            rhs[n + m_eq + w] = if upper { hi[var] } else { lo[var] };
        }
        let sol = solve_dense(&k, &rhs);
        let target = sol.rows(0, n).into_owned();
        let step = &target - &x;

        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..n {
            if working.iter().any(|&(v, _)| v == i) {
                continue;
            }
            if step[i] > 0.0 && hi[i].is_finite() {
                let a = (hi[i] - x[i]) / step[i];
                if a < alpha {
                    alpha = a.max(0.0);
                    blocking = Some((i, true));
                }
            } else if step[i] < 0.0 && lo[i].is_finite() {
                let a = (lo[i] - x[i]) / step[i];
                if a < alpha {
                    alpha = a.max(0.0);
                    blocking = Some((i, false));
                }
            }
        }
        if let Some((var, upper)) = blocking {
            x += alpha * &step;
            x[var] = if upper { hi[var] } else { lo[var] };
            working.push((var, upper));
            changes += 1;
            continue;
        }

        // Full step: minimizer on the working set. Check multiplier signs.
        x = target;
        let mut worst: Option<(usize, f64)> = None;
        for (w, &(_, upper)) in working.iter().enumerate() {
            let lambda = sol[n + m_eq + w];
            let violation = if upper { -lambda } else { lambda };
            if violation > 1e-9 && worst.is_none_or(|(_, v)| violation > v) {
                worst = Some((w, violation));
            }
        }
        match worst {
            None => return (x.iter().copied().collect(), changes),
            Some((w, _)) => {
                working.remove(w);
                changes += 1;
            }
        }
    }
    panic!("active-set oracle did not converge");
}

/// Feasible decision vector: hold `x0` with hover thrust and zero rates.
pub fn hover_rollout(problem: &QpProblem, x0: &quadcam::dynamics::State, quad: &QuadrotorParams) -> Vec<f64> {
    let layout = problem.layout.unwrap();
    let n = layout.n_stages;
    let hover = quad.hover_input();
    let mut state = *x0;
    for k in 0..3 {
        state[sx::VEL + k] = 0.0;
    }
    state[sx::YAW_RATE_Q] = 0.0;
    assert_eq!(&state, x0, "hover rollout needs a start at rest");
    let mut x = vec![0.0; layout.n_vars()];
    for i in 0..=n {
        for k in 0..STATE_DIM {
            x[layout.state(i, k)] = x0[k];
        }
    }
    for i in 0..n {
        for k in 0..4 {
            x[layout.input(i, k)] = hover[k];
        }
    }
    x
}
