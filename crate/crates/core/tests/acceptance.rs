//! Acceptance suite. Each test prints one `criterion N [PASS|FAIL]` line
//! straight to stdout (visible without `--nocapture`) and then asserts.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quadruped_rl::actuator::{pd_torque, ActuatorConfig};
use quadruped_rl::config::RunConfig;
use quadruped_rl::dynamics::*;
use quadruped_rl::env::cost::{FOOT_CLEARANCE_HEIGHT, HEIGHT_THRESHOLD};
use quadruped_rl::env::{
    compute_cost_terms, Command, CostParams, CostVector, EnvConfig, HistoryBuffer, ObservationLayout, Task, TaskKind,
    CONTROL_DT, NUM_BEHAVIORS,
};
use quadruped_rl::eval::{evaluate, EvalOptions, EvalSetup, STRESS_STEPS};
use quadruped_rl::metrics::read_jsonl;
use quadruped_rl::nn::{self, spread_coords, Mlp, Policy, HIDDEN};
use quadruped_rl::ppo::gae::{gae_advantages, GaeStep};
use quadruped_rl::ppo::train::checkpoint_path;
use quadruped_rl::ppo::{clipped_surrogate, train, IterationMetrics, PpoConfig, TrainSetup};
use quadruped_rl::selector::train::BehaviorSource;
use quadruped_rl::selector::{train_selector, BehaviorLibrary, SelectorConfig, SelectorMetrics, SelectorSetup};

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n} [{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "{line}");
}

// ---------------------------------------------------------------------------
// 1. gradients

const GRAD_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-4;
const COORDS: usize = 48;

/// Worst relative error against a five-point central difference. The
/// fourth-order stencil allows a step large enough that roundoff stays far
/// below the tolerance on coordinates with gradients near the 1e-6 floor.
fn stencil_check(mut loss: impl FnMut(&[f64]) -> f64, params: &[f64], analytic: &[f64]) -> f64 {
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in spread_coords(params.len(), COORDS) {
        let mut at = |k: f64| {
            work[i] = params[i] + k * FD_STEP;
            let v = loss(&work);
            work[i] = params[i];
            v
        };
        let numeric = (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * FD_STEP);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

fn random_batch(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<f64> {
    (0..dim * n).map(|_| rng.gen_range(-1.5..1.5)).collect()
}

/// Worst relative error of the PPO policy loss (clipped surrogate minus an
/// entropy bonus) gradient.
fn policy_loss_check(policy: &Policy, rng: &mut ChaCha8Rng) -> f64 {
    let n = 12;
    let obs = random_batch(rng, policy.obs_dim(), n);
    let mut actions = Vec::new();
    for i in 0..n {
        let o = &obs[i * policy.obs_dim()..(i + 1) * policy.obs_dim()];
        actions.extend(policy.sample(o, rng).unwrap().0);
    }
    let base = policy.log_prob_batch(&obs, &actions, n).unwrap();
    // ratios inside, above and below the clip band, kept away from its
    // edges so the stencil never straddles a kink
    let old: Vec<f64> = base
        .log_probs
        .iter()
        .map(|l| {
            let shift = match rng.gen_range(0..3) {
                0 => rng.gen_range(-0.1..0.1),
                1 => rng.gen_range(0.3..0.5),
                _ => rng.gen_range(-0.5..-0.3),
            };
            l + shift
        })
        .collect();
    let adv: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let (eps, c_ent) = (0.2, 0.01);

    let loss = |p: &Policy| {
        let cache = p.log_prob_batch(&obs, &actions, n).unwrap();
        let (stats, _) = clipped_surrogate(&cache.log_probs, &old, &adv, eps).unwrap();
        stats.loss - c_ent * cache.entropies.iter().sum::<f64>() / n as f64
    };
    let (_, d_logp) = clipped_surrogate(&base.log_probs, &old, &adv, eps).unwrap();
    let d_ent = vec![-c_ent / n as f64; n];
    let analytic = policy.backward(&base, &d_logp, &d_ent).unwrap();
    let params = policy.flat_params();
    let mut work = policy.clone();
    stencil_check(
        |theta| {
            work.set_flat_params(theta).unwrap();
            loss(&work)
        },
        &params,
        &analytic,
    )
}

/// Worst relative error of the mean-squared-error loss gradient (value
/// function and height estimator).
fn regression_check(net: &Mlp, rng: &mut ChaCha8Rng) -> f64 {
    let n = 12;
    let x = random_batch(rng, net.input_dim(), n);
    let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, analytic) = nn::mse_loss_grad(net, &x, &y).unwrap();
    let mut work = net.clone();
    stencil_check(
        |theta| {
            work.params_mut().copy_from_slice(theta);
            nn::mse_loss_grad(&work, &x, &y).unwrap().0
        },
        net.params(),
        &analytic,
    )
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for kind in TaskKind::BEHAVIORS {
            let dim = ObservationLayout::for_task(kind, 2).len;
            let policy = nn::gaussian_policy(dim, NUM_JOINTS, &HIDDEN, &mut rng).unwrap();
            worst = worst.max(policy_loss_check(&policy, &mut rng));
            let value = nn::regressor(dim, &HIDDEN, &mut rng).unwrap();
            worst = worst.max(regression_check(&value, &mut rng));
            checked += 2;
        }
        let sel_dim = ObservationLayout::for_task(TaskKind::Selector, 2).len;
        let selector = nn::categorical_policy(sel_dim, NUM_BEHAVIORS, &HIDDEN, &mut rng).unwrap();
        worst = worst.max(policy_loss_check(&selector, &mut rng));
        let sel_value = nn::regressor(sel_dim, &HIDDEN, &mut rng).unwrap();
        worst = worst.max(regression_check(&sel_value, &mut rng));
        let est_dim = ObservationLayout::height_estimator(2).len;
        let estimator = nn::regressor(est_dim, &HIDDEN, &mut rng).unwrap();
        worst = worst.max(regression_check(&estimator, &mut rng));
        checked += 3;
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "gradient correctness",
        worst < GRAD_TOL && secs < 60.0,
        &format!("{checked} net/loss pairs over 5 seeds, max rel err {worst:.2e} (< {GRAD_TOL:.0e}), {secs:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// 2. clip semantics

#[test]
fn criterion_2_clip_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let eps = 0.2;
    let mut policy = nn::gaussian_policy(20, NUM_JOINTS, &[32, 32], &mut rng).unwrap();
    let obs: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let action = policy.sample(&obs, &mut rng).unwrap().0;
    let logp = policy.log_prob(&obs, &action).unwrap();
    let params = policy.flat_params();
    let mut worst_fd: f64 = 0.0;
    let mut worst_analytic: f64 = 0.0;
    // (ratio, advantage) pairs with the clipped branch binding
    for (ratio, adv) in [(1.5, 1.0), (2.5, 0.3), (0.5, -1.0), (0.1, -2.0)] {
        let old = [logp - f64::ln(ratio)];
        let a = [adv];
        let cache = policy.log_prob_batch(&obs, &action, 1).unwrap();
        let (_, d_logp) = clipped_surrogate(&cache.log_probs, &old, &a, eps).unwrap();
        let g = policy.backward(&cache, &d_logp, &[0.0]).unwrap();
        worst_analytic = worst_analytic.max(g.iter().fold(0.0, |m, v| m.max(v.abs())));
        for i in spread_coords(params.len(), 64) {
            let mut eval = |delta: f64| {
                let mut p = params.clone();
                p[i] += delta;
                policy.set_flat_params(&p).unwrap();
                let l = policy.log_prob_batch(&obs, &action, 1).unwrap().log_probs;
                clipped_surrogate(&l, &old, &a, eps).unwrap().0.loss
            };
            let fd = (eval(1e-6) - eval(-1e-6)) / 2e-6;
            worst_fd = worst_fd.max(fd.abs());
        }
        policy.set_flat_params(&params).unwrap();
    }

    // ratio exactly one: surrogate equals the mean advantage
    let adv: Vec<f64> = (0..50).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let logps: Vec<f64> = (0..50).map(|_| rng.gen_range(-20.0..0.0)).collect();
    let (stats, _) = clipped_surrogate(&logps, &logps, &adv, eps).unwrap();
    let mean = adv.iter().sum::<f64>() / adv.len() as f64;
    let exact = -stats.loss == mean;

    report(
        2,
        "clip semantics",
        worst_fd < 1e-8 && worst_analytic == 0.0 && exact,
        &format!(
            "binding-clip |fd grad| max {worst_fd:.1e} (< 1e-8), analytic max {worst_analytic:.1e}, rho=1 surrogate == mean advantage: {exact}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. cost oracle

/// Straight-from-formula evaluation of all fifteen terms.
#[allow(clippy::too_many_arguments)]
fn oracle_costs(
    model: &RobotModel,
    s: &GeneralizedState,
    contacts: &ContactReport,
    tau: &[f64; NUM_JOINTS],
    prev_qd: &[f64; NUM_JOINTS],
    prev_action: &[f64; NUM_JOINTS],
    action: &[f64; NUM_JOINTS],
    cmd: &Command,
    joint_ref: &[f64; NUM_JOINTS],
    alpha_a: f64,
    alpha_l: f64,
    dt: f64,
) -> [f64; 15] {
    let k = |x: [f64; 3], alpha: f64| {
        let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        -1.0 / ((alpha * n).exp() + 2.0 + (-alpha * n).exp())
    };
    let u = &s.u;
    let c_w = k([u[3], u[4], u[5] - cmd.yaw_rate], alpha_a);
    let c_v = k([u[0] - cmd.vx, u[1] - cmd.vy, u[2]], alpha_l);
    let c_h = if s.q[2] < 0.35 { 1.0 } else { 0.0 };
    let mut c_jp = 0.0;
    for j in 0..NUM_JOINTS {
        let d = s.q[7 + j] - joint_ref[j];
        c_jp += d.sin().atan2(d.cos()).abs();
    }
    let (w, x, y, z) = (s.q[3], s.q[4], s.q[5], s.q[6]);
    let n2 = w * w + x * x + y * y + z * z;
    let (w, x, y, z) = (w / n2.sqrt(), x / n2.sqrt(), y / n2.sqrt(), z / n2.sqrt());
    // third row of R, negated, is world down in the body frame
    let g = [-2.0 * (x * z - w * y), -2.0 * (y * z + w * x), -(1.0 - 2.0 * (x * x + y * y))];
    let c_o = (g[0] * g[0] + g[1] * g[1] + (-1.0 - g[2]) * (-1.0 - g[2])).sqrt();
    let mut c_tau = 0.0;
    let mut c_pw = 0.0;
    let mut c_a = 0.0;
    let mut c_js = 0.0;
    let mut c_ad = 0.0;
    for j in 0..NUM_JOINTS {
        let qd = u[6 + j];
        c_tau += tau[j] * tau[j];
        if qd * tau[j] > 0.0 {
            c_pw += qd * tau[j];
        }
        c_a += ((qd - prev_qd[j]) / dt) * ((qd - prev_qd[j]) / dt);
        let over = qd.abs() - model.joint_speed_limit;
        if over > 0.0 {
            c_js += over * over;
        }
        c_ad += (prev_action[j] - action[j]) * (prev_action[j] - action[j]);
    }
    let norm = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let (mut bi_sum, mut bi_n, mut bs_sum, mut bs_n, mut sc) = (0.0, 0usize, 0.0, 0usize, 0usize);
    let mut foot_touch = [false; NUM_LEGS];
    for c in &contacts.contacts {
        match c.class {
            ContactClass::SelfCollision => sc += 1,
            _ if c.gap == 0.0 => {
                bs_sum += norm(c.velocity).powi(2);
                bs_n += 1;
                if c.class == ContactClass::Body {
                    bi_sum += norm(c.impulse);
                    bi_n += 1;
                } else if c.point_id < NUM_LEGS {
                    foot_touch[c.point_id] = true;
                }
            }
            _ => {}
        }
    }
    let c_bi = if bi_n == 0 { 0.0 } else { bi_sum / bi_n as f64 };
    let c_bs = if bs_n == 0 { 0.0 } else { bs_sum / bs_n as f64 };
    let (mut c_fs, mut c_fc) = (0.0, 0.0);
    for leg in 0..NUM_LEGS {
        let speed = norm(contacts.foot_velocities[leg]);
        if foot_touch[leg] {
            c_fs += speed;
        } else {
            c_fc += (contacts.foot_positions[leg][2] - 0.07).powi(2) * speed;
        }
    }
    [c_w, c_v, c_h, c_jp, c_o, c_tau, c_pw, c_a, c_js, c_bi, c_bs, c_fs, c_fc, sc as f64, c_ad]
}

fn random_contacts(rng: &mut ChaCha8Rng) -> ContactReport {
    let mut v3 = |r: f64| -> [f64; 3] { [rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r)] };
    let mut report = ContactReport {
        contacts: Vec::new(),
        foot_positions: [v3(0.3), v3(0.3), v3(0.3), v3(0.3)],
        foot_velocities: [v3(2.0), v3(2.0), v3(2.0), v3(2.0)],
    };
    let mut push = |rng: &mut ChaCha8Rng, point_id: usize, class: ContactClass| {
        let active = rng.gen_bool(0.5);
        let gap = if active { 0.0 } else { rng.gen_range(1e-4..0.3) };
        let impulse = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.0..20.0)];
        let velocity = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        report.contacts.push(Contact {
            point_id,
            class,
            gap,
            penetration: if active { rng.gen_range(0.0..1e-3) } else { 0.0 },
            impulse,
            velocity,
        });
    };
    for leg in 0..NUM_LEGS {
        if rng.gen_bool(0.9) {
            push(rng, leg, ContactClass::Foot);
        }
    }
    for _ in 0..rng.gen_range(0..5) {
        let id = rng.gen_range(4..16);
        push(rng, id, ContactClass::Body);
    }
    for _ in 0..rng.gen_range(0..3) {
        let id = rng.gen_range(16..24);
        push(rng, id, ContactClass::SelfCollision);
    }
    report
}

#[test]
fn criterion_3_cost_oracle() {
    let model = RobotModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut empty_body = 0;
    let mut empty_ground = 0;
    for _ in 0..10_000 {
        let kind = TaskKind::ALL[rng.gen_range(0..4)];
        let mut task = Task::new(kind);
        task.alpha_angular = rng.gen_range(0.2..3.0);
        task.alpha_linear = rng.gen_range(0.2..3.0);
        let params = CostParams::for_task(&task, CONTROL_DT);
        let joints: [f64; NUM_JOINTS] = std::array::from_fn(|_| rng.gen_range(-3.0..3.0));
        let rot = UnitQuaternion::from_euler_angles(
            rng.gen_range(-3.1..3.1),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-3.1..3.1),
        );
        let mut s = GeneralizedState::new(Vector3::new(0.0, 0.0, rng.gen_range(0.0..0.8)), rot, joints);
        for v in s.u.iter_mut() {
            *v = rng.gen_range(-20.0..20.0);
        }
        let mut prev = s.clone();
        for v in prev.u.iter_mut() {
            *v = rng.gen_range(-20.0..20.0);
        }
        let prev_action: [f64; NUM_JOINTS] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let mut history = HistoryBuffer::new(2, [0.0; NUM_JOINTS]);
        if rng.gen_bool(0.9) {
            history.push(&prev_action, &prev);
        }
        let prev_qd = history.last_velocity();
        let action: [f64; NUM_JOINTS] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let tau: [f64; NUM_JOINTS] = std::array::from_fn(|_| rng.gen_range(-40.0..40.0));
        let cmd = Command {
            vx: rng.gen_range(-1.2..1.2),
            vy: rng.gen_range(-1.2..1.2),
            yaw_rate: rng.gen_range(-1.0..1.0),
        };
        let contacts = random_contacts(&mut rng);
        empty_body += usize::from(contacts.ground_contacts().all(|c| c.class == ContactClass::Foot));
        empty_ground += usize::from(contacts.ground_contacts().next().is_none());

        let got = compute_cost_terms(&model, &s, &contacts, &tau, &history, &action, &cmd, &params)
            .unwrap()
            .as_array();
        let want = oracle_costs(
            &model,
            &s,
            &contacts,
            &tau,
            &prev_qd,
            history.prev_target(),
            &action,
            &cmd,
            &params.joint_reference,
            task.alpha_angular,
            task.alpha_linear,
            CONTROL_DT,
        );
        for (g, w) in got.iter().zip(want) {
            worst = worst.max((g - w).abs() / w.abs().max(1.0));
        }
    }

    // literal constants: height boundary and clearance reference
    let params = CostParams::for_task(&Task::new(TaskKind::Locomotion), CONTROL_DT);
    let history = HistoryBuffer::new(2, [0.0; NUM_JOINTS]);
    let eval = |h: f64, contacts: &ContactReport| {
        let s = GeneralizedState::new(Vector3::new(0.0, 0.0, h), UnitQuaternion::identity(), [0.0; NUM_JOINTS]);
        compute_cost_terms(&model, &s, contacts, &[0.0; NUM_JOINTS], &history, &[0.0; NUM_JOINTS], &Command::zero(), &params)
            .unwrap()
    };
    let none = ContactReport::default();
    let at = eval(0.35, &none).height;
    let below = eval(0.35f64.next_down_compat(), &none).height;
    let mut swing = ContactReport::default();
    swing.foot_velocities[0] = [2.0, 0.0, 0.0];
    swing.foot_positions[0] = [0.0, 0.0, 0.07];
    let at_ref = eval(0.5, &swing).foot_clearance;
    swing.foot_positions[0] = [0.0, 0.0, 0.17];
    let above = eval(0.5, &swing).foot_clearance;
    let literal = HEIGHT_THRESHOLD == 0.35
        && FOOT_CLEARANCE_HEIGHT == 0.07
        && at == 0.0
        && below == 1.0
        && at_ref == 0.0
        && (above - 0.02).abs() < 1e-15
        && empty_body > 0
        && empty_ground > 0;

    report(
        3,
        "cost-term oracle",
        worst < 1e-12 && literal,
        &format!(
            "1e4 random states, max rel err {worst:.1e} (< 1e-12); empty body/ground sets hit {empty_body}/{empty_ground} times; c_h(0.35) = {at}, c_h(0.35-) = {below}; clearance at 0.07 m = {at_ref}"
        ),
    );
}

trait NextDown {
    fn next_down_compat(self) -> f64;
}

impl NextDown for f64 {
    fn next_down_compat(self) -> f64 {
        f64::from_bits(self.to_bits() - 1)
    }
}

// ---------------------------------------------------------------------------
// 4. physics

fn standing(model: &RobotModel) -> GeneralizedState {
    GeneralizedState::new(
        Vector3::new(0.0, 0.0, stance_height(model, STANCE_POSTURE)),
        UnitQuaternion::identity(),
        posture_to_joints(STANCE_POSTURE),
    )
}

#[test]
fn criterion_4_physics_sanity() {
    let model = RobotModel::default();
    let zero = [0.0; NUM_JOINTS];

    // ballistic flight against the semi-implicit closed form
    let mut s = standing(&model);
    s.q[2] = 5.0;
    let v0 = Vector3::new(0.3, -0.1, 0.5);
    s.set_base_linear_velocity(v0);
    let p0 = s.base_position();
    let mut ballistic: f64 = 0.0;
    for k in 1..=200 {
        s = step(&model, &s, &zero, SIM_DT).unwrap().0;
        let n = k as f64;
        let expected = p0 + n * SIM_DT * v0
            - Vector3::new(0.0, 0.0, model.gravity * SIM_DT * SIM_DT * n * (n + 1.0) / 2.0);
        ballistic = ballistic.max((s.base_position() - expected).norm());
    }

    // static rest under PD stance
    let cfg = ActuatorConfig::default();
    let target = posture_to_joints(STANCE_POSTURE);
    let mut s = standing(&model);
    let mut penetration: f64 = 0.0;
    for k in 0..1600 {
        let tau = pd_torque(&cfg, &target, &s).unwrap();
        let (next, report) = step(&model, &s, &tau, SIM_DT).unwrap();
        if k >= 800 {
            penetration = penetration.max(report.max_penetration());
        }
        s = next;
    }

    // passive drop: energy never rises beyond the scheme's O(dt^2) term
    let mut s = standing(&model);
    s.q[2] += 0.3;
    s.set_orientation(UnitQuaternion::from_euler_angles(0.15, -0.1, 0.3));
    s.set_base_angular_velocity(Vector3::new(0.5, -0.3, 0.2));
    let e0 = mechanical_energy(&model, &s);
    let mut prev = e0;
    let mut max_rise = f64::NEG_INFINITY;
    let mut quat_drift: f64 = 0.0;
    for _ in 0..2000 {
        let before = s.quaternion().norm();
        s = step(&model, &s, &zero, SIM_DT).unwrap().0;
        quat_drift = quat_drift.max((s.quaternion().norm() - before).abs());
        let e = mechanical_energy(&model, &s);
        max_rise = max_rise.max(e - prev);
        prev = e;
    }
    let rise_tol = 2.0 * model.total_mass() * (model.gravity * SIM_DT).powi(2);

    let pass = ballistic < 1e-12 && penetration < 1e-3 && max_rise <= rise_tol && prev < e0 && quat_drift < 1e-9;
    report(
        4,
        "physics sanity",
        pass,
        &format!(
            "ballistic err {ballistic:.1e} (< 1e-12); rest penetration {penetration:.2e} m (< 1e-3); drop energy {e0:.2} -> {prev:.2} J, max per-step rise {max_rise:.2e} J (<= {rise_tol:.2e}); quaternion drift {quat_drift:.1e} (< 1e-9)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. GAE

/// Advantage as the explicit discounted sum of TD errors up to the end of
/// the segment.
fn gae_oracle(steps: &[GaeStep], gamma: f64, lambda: f64) -> Vec<f64> {
    (0..steps.len())
        .map(|t| {
            let mut total = 0.0;
            let mut weight = 1.0;
            for s in &steps[t..] {
                let next = if s.terminal { 0.0 } else { s.next_value };
                total += weight * (s.reward + gamma * next - s.value);
                if s.terminal || s.boundary {
                    break;
                }
                weight *= gamma * lambda;
            }
            total
        })
        .collect()
}

fn random_episode(rng: &mut ChaCha8Rng) -> Vec<GaeStep> {
    let n = rng.gen_range(1..200);
    let values: Vec<f64> = (0..=n).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let ends_terminal = rng.gen_bool(0.5);
    (0..n)
        .map(|t| {
            let last = t + 1 == n;
            GaeStep {
                reward: rng.gen_range(-3.0..3.0),
                value: values[t],
                next_value: values[t + 1],
                terminal: last && ends_terminal,
                boundary: last,
            }
        })
        .collect()
}

#[test]
fn criterion_5_gae_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut td_exact = true;
    let mut mc_worst: f64 = 0.0;
    for _ in 0..100 {
        let ep = random_episode(&mut rng);
        let gamma = rng.gen_range(0.9..1.0);
        let lambda = rng.gen_range(0.0..1.0);
        let (adv, ret) = gae_advantages(&ep, gamma, lambda);
        for ((a, o), (r, s)) in adv.iter().zip(gae_oracle(&ep, gamma, lambda)).zip(ret.iter().zip(&ep)) {
            worst = worst.max((a - o).abs() / o.abs().max(1.0));
            assert_eq!(*r, a + s.value);
        }
        // lambda = 0: one-step TD error, bit for bit
        let (adv0, _) = gae_advantages(&ep, gamma, 0.0);
        for (a, s) in adv0.iter().zip(&ep) {
            let next = if s.terminal { 0.0 } else { s.next_value };
            td_exact &= *a == s.reward + gamma * next - s.value;
        }
        // gamma = lambda = 1: return-to-go (plus bootstrap) minus value
        let (adv1, _) = gae_advantages(&ep, 1.0, 1.0);
        let tail = ep.last().map_or(0.0, |s| if s.terminal { 0.0 } else { s.next_value });
        for (t, a) in adv1.iter().enumerate() {
            let mc: f64 = ep[t..].iter().map(|s| s.reward).sum::<f64>() + tail - ep[t].value;
            mc_worst = mc_worst.max((a - mc).abs() / mc.abs().max(1.0));
        }
    }
    report(
        5,
        "GAE oracle",
        worst < 1e-12 && td_exact && mc_worst < 1e-12,
        &format!(
            "100 random episodes, max rel err {worst:.1e} (< 1e-12); lambda=0 equals TD error exactly: {td_exact}; gamma=lambda=1 vs return-to-go {mc_worst:.1e}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 6. desk-scale learning

fn window_mean(rows: &[IterationMetrics], range: std::ops::Range<usize>, f: impl Fn(&IterationMetrics) -> f64) -> f64 {
    rows[range.clone()].iter().map(f).sum::<f64>() / range.len() as f64
}

fn desk_run(task: TaskKind, dir: &Path) -> Vec<IterationMetrics> {
    let mut config = RunConfig::new(task);
    config.seed = 1;
    let setup = config.train_setup().unwrap();
    assert_eq!((setup.ppo.num_envs, setup.ppo.horizon, setup.ppo.iterations), (16, 400, 200));
    let summary = train(&setup, dir, None).unwrap();
    summary.metrics
}

#[test]
fn criterion_6_desk_scale_learning() {
    let root = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let su = desk_run(TaskKind::StandingUp, &root.path().join("su"));
    let su_secs = start.elapsed().as_secs_f64();
    let early = window_mean(&su, 0..20, |m| m.average_ll_reward);
    let late = window_mean(&su, 180..200, |m| m.average_ll_reward);
    let ratio = late / early;

    let start = Instant::now();
    let loco = desk_run(TaskKind::Locomotion, &root.path().join("loco"));
    let loco_secs = start.elapsed().as_secs_f64();
    // tracking cost is the (negative) kernel sum, so a tracking error
    // improvement shows as a more negative value
    let track_early = window_mean(&loco, 0..20, |m| m.tracking_cost);
    let track_late = window_mean(&loco, 180..200, |m| m.tracking_cost);

    report(
        6,
        "desk-scale learning",
        early > 0.0 && ratio >= 1.5 && su_secs <= 1800.0 && track_late < track_early,
        &format!(
            "standing up: reward {early:.4} -> {late:.4}, ratio {ratio:.2} (>= 1.5), {su_secs:.0}s; locomotion: c_w + c_v {track_early:.4} -> {track_late:.4} (must decrease), {loco_secs:.0}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. selector harness

#[test]
fn criterion_7_selector_harness() {
    let root = tempfile::tempdir().unwrap();

    // behavior checkpoints the selector must leave untouched
    let mut paths = Vec::new();
    for kind in TaskKind::BEHAVIORS {
        let mut env = EnvConfig::new(kind);
        env.task.episode_length = 20;
        let setup = TrainSetup {
            env,
            ppo: PpoConfig {
                iterations: 1,
                horizon: 8,
                num_envs: 2,
                checkpoint_interval: 1,
                hidden: vec![32, 32],
                ..Default::default()
            },
            seed: 4,
        };
        let out = root.path().join(kind.name());
        train(&setup, &out, None).unwrap();
        paths.push(checkpoint_path(&out, 1));
    }
    let paths: [std::path::PathBuf; 3] = paths.try_into().unwrap();
    let bytes_before: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let params_before = BehaviorLibrary::load(&paths, 2).unwrap().parameters();
    let mut frozen_setup = SelectorSetup {
        env: EnvConfig::new(TaskKind::Selector),
        ppo: PpoConfig {
            iterations: 4,
            horizon: 2,
            num_envs: 2,
            hidden: vec![32, 32],
            ..Default::default()
        },
        selector: SelectorConfig {
            warmup_iterations: 1,
            decision_period: 20,
            regression_samples: 64,
            holdout_pairs: 50,
            ..Default::default()
        },
        behaviors: BehaviorSource::Checkpoints(paths.clone()),
        seed: 4,
    };
    frozen_setup.env.task.episode_length = 100;
    train_selector(&frozen_setup, &root.path().join("frozen"), None).unwrap();
    let bytes_same = paths.iter().zip(&bytes_before).all(|(p, b)| &std::fs::read(p).unwrap() == b);
    let params_same = BehaviorLibrary::load(&paths, 2).unwrap().parameters() == params_before;

    // estimator learning with scripted behaviors, 100 iterations
    let setup = SelectorSetup {
        env: EnvConfig::new(TaskKind::Selector),
        ppo: PpoConfig {
            iterations: 100,
            horizon: 4,
            num_envs: 4,
            hidden: vec![64, 64],
            ..Default::default()
        },
        selector: SelectorConfig {
            warmup_iterations: 50,
            regression_samples: 1024,
            estimator_steps: 8,
            estimator_hidden: vec![64, 64],
            holdout_pairs: 2000,
            ..Default::default()
        },
        behaviors: BehaviorSource::Scripted,
        seed: 3,
    };
    let start = Instant::now();
    let dir = root.path().join("scripted");
    train_selector(&setup, &dir, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let rows: Vec<SelectorMetrics> = read_jsonl(&dir.join("metrics.jsonl")).unwrap();
    let last = rows.last().unwrap();
    let ratio = last.estimator_holdout_mse / last.estimator_baseline_mse;
    let nw = setup.selector.warmup_iterations as u64;
    let first_estimated = rows.iter().find(|r| r.estimated_height).map(|r| r.iteration);
    let switch_ok = first_estimated == Some(nw + 1)
        && rows.iter().all(|r| r.estimated_height == (r.iteration > nw))
        && rows.iter().all(|r| r.max_abs_torque <= 40.0);

    report(
        7,
        "behavior selector harness",
        rows.len() == 100 && ratio < 0.25 && switch_ok && bytes_same && params_same,
        &format!(
            "holdout mse {:.2e} vs baseline {:.2e} ({:.1}% < 25%), {secs:.0}s; estimate first fed at i = {first_estimated:?} (N_w = {nw}); behavior checkpoints bit-identical: {bytes_same}, params unchanged: {params_same}",
            last.estimator_holdout_mse,
            last.estimator_baseline_mse,
            100.0 * ratio
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. determinism and limits

fn small_loco(iterations: usize) -> TrainSetup {
    let mut config = RunConfig::new(TaskKind::Locomotion);
    config.seed = 8;
    config.ppo.iterations = iterations;
    config.ppo.num_envs = 6;
    config.ppo.horizon = 40;
    config.ppo.hidden = vec![32, 32];
    config.ppo.checkpoint_interval = iterations;
    config.train_setup().unwrap()
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn criterion_8_determinism_and_limits() {
    let root = tempfile::tempdir().unwrap();
    let setup = small_loco(3);
    let read = |name: &str| std::fs::read(root.path().join(name).join("metrics.jsonl")).unwrap();
    in_pool(1, || train(&setup, &root.path().join("t1"), None)).unwrap();
    in_pool(4, || train(&setup, &root.path().join("t4"), None)).unwrap();
    let behavior_same = read("t1") == read("t4")
        && std::fs::read(checkpoint_path(&root.path().join("t1"), 3)).unwrap()
            == std::fs::read(checkpoint_path(&root.path().join("t4"), 3)).unwrap();

    let mut sel = SelectorSetup {
        env: EnvConfig::new(TaskKind::Selector),
        ppo: PpoConfig {
            iterations: 3,
            horizon: 3,
            num_envs: 5,
            hidden: vec![32],
            ..Default::default()
        },
        selector: SelectorConfig {
            warmup_iterations: 1,
            decision_period: 20,
            regression_samples: 64,
            estimator_hidden: vec![32],
            holdout_pairs: 40,
            ..Default::default()
        },
        behaviors: BehaviorSource::Scripted,
        seed: 8,
    };
    sel.env.task.episode_length = 100;
    in_pool(1, || train_selector(&sel, &root.path().join("s1"), None)).unwrap();
    in_pool(3, || train_selector(&sel, &root.path().join("s3"), None)).unwrap();
    let selector_same = read("s1") == read("s3");

    // torque bound over training metrics and evaluation logs
    let rows: Vec<IterationMetrics> = read_jsonl(&root.path().join("t1").join("metrics.jsonl")).unwrap();
    let mut max_torque = rows.iter().fold(0.0f64, |m, r| m.max(r.max_abs_torque));
    let ckpt = checkpoint_path(&root.path().join("t1"), 3);
    let options = EvalOptions {
        episodes: 2,
        seed: 8,
        stress: false,
    };
    let (_, logs) = evaluate(&ckpt, EvalSetup::Behavior(setup.clone()), &options).unwrap();
    let stress = EvalOptions { stress: true, ..options };
    let (summary, stress_logs) = evaluate(&ckpt, EvalSetup::Behavior(setup.clone()), &stress).unwrap();
    for log in logs.iter().chain(&stress_logs) {
        for r in &log.records {
            let step_max = r.inputs.torques.iter().fold(r.max_abs_torque, |m, t| m.max(t.abs()));
            max_torque = max_torque.max(step_max);
        }
    }
    let torque_ok = max_torque <= 40.0;

    let held = stress_logs.iter().all(|log| {
        log.records.len() == STRESS_STEPS
            && log.records.iter().all(|r| r.inputs.command == Command::forward(1.6))
            && (log.records.last().unwrap().time - 10.0).abs() < 1e-9
    });
    let sim_time_ok = summary.episodes.iter().all(|e| e.steps == STRESS_STEPS && (e.sim_time - 10.0).abs() < 1e-9);
    let speed = Command::forward(1.6).planar_speed();

    report(
        8,
        "determinism and limits",
        behavior_same && selector_same && torque_ok && held && sim_time_ok && speed == 1.6,
        &format!(
            "metrics identical across 1/4 threads: {behavior_same}, selector 1/3 threads: {selector_same}; max logged torque {max_torque:.2} N m (<= 40); stress command {speed} m/s held for {} steps = {:.2} s: {}",
            STRESS_STEPS,
            STRESS_STEPS as f64 * CONTROL_DT,
            held && sim_time_ok
        ),
    );
}

#[test]
fn cost_vector_names_cover_all_terms() {
    assert_eq!(CostVector::NAMES.len(), 15);
}
