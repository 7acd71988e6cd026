//! Helpers shared by several test targets.
#![allow(dead_code)]

use vipguard_core::derive_stream;
use vipguard_core::learner::{
    ddpg_update, maddpg_update, select_action, ActionSpec, AgentLearner, ReplayBuffer, Transition, UpdateParams,
};
use vipguard_core::nn::{Mlp, OutputActivation};

pub const FORCE_ONLY: ActionSpec = ActionSpec { force_dims: 1, vocab: 0, max_force: 1.0 };

pub fn bandit_params() -> UpdateParams {
    UpdateParams { gamma: 0.0, tau: 0.01, grad_clip_norm: 0.5 }
}

pub fn bandit_reward(a: f64) -> f64 {
    -(a - 0.5) * (a - 0.5)
}

/// A full buffer of one-step bandit transitions with uniformly random actions.
pub fn bandit_buffer(size: usize, seed: u64) -> ReplayBuffer {
    let mut rng = derive_stream(seed, "bandit/data");
    let mut buf = ReplayBuffer::new(size, 1, 1, 1);
    for _ in 0..size {
        let a = rng.uniform_range(-1.0, 1.0);
        buf.push(Transition {
            observations: vec![vec![1.0]],
            actions: vec![vec![a]],
            rewards: vec![bandit_reward(a)],
            next_observations: vec![vec![1.0]],
            done: true,
        })
        .unwrap();
    }
    buf
}

pub fn bandit_learner(seed: u64) -> AgentLearner {
    AgentLearner::new(1, 2, FORCE_ONLY, &[32, 32], 1e-3, 1e-3, &mut derive_stream(seed, "init"))
}

pub fn greedy_force(learner: &AgentLearner, obs: &[f64]) -> Vec<f64> {
    select_action(learner, obs, 0.0, 0.0, &mut derive_stream(0, "unused")).unwrap().force
}

/// Trains a fresh learner on the quadratic bandit and returns its greedy action.
pub fn train_bandit(seed: u64, updates: usize) -> f64 {
    let buf = bandit_buffer(1000, seed);
    let mut learner = bandit_learner(seed + 1);
    let mut rng = derive_stream(seed + 2, "replay");
    for _ in 0..updates {
        let batch = buf.sample(64, &mut rng).unwrap();
        ddpg_update(&mut learner, &batch, 0, &bandit_params()).unwrap();
    }
    greedy_force(&learner, &[1.0])[0]
}

/// Two agents observe a shared random context and are both paid 1 when
/// their force signs agree. Trained online with exploration.
pub fn train_sign_game(seed: u64, episodes: usize) -> f64 {
    let spec = FORCE_ONLY;
    let obs_dim = 2;
    let mut init = derive_stream(seed, "init");
    let mut learners: Vec<AgentLearner> =
        (0..2).map(|_| AgentLearner::new(obs_dim, obs_dim + 2 * spec.width(), spec, &[16, 16], 1e-3, 1e-3, &mut init)).collect();
    let mut env = derive_stream(seed, "env");
    let mut noise = derive_stream(seed, "noise");
    let mut replay = derive_stream(seed, "replay");
    let mut buf = ReplayBuffer::new(10_000, 2, obs_dim, 1);
    let params = UpdateParams { gamma: 0.0, tau: 0.01, grad_clip_norm: 0.5 };
    for _ in 0..episodes {
        let obs = vec![env.uniform_range(-1.0, 1.0), env.uniform_range(-1.0, 1.0)];
        let acts: Vec<Vec<f64>> =
            learners.iter().map(|l| select_action(l, &obs, 0.5, 0.0, &mut noise).unwrap().vector).collect();
        let r = if (acts[0][0] >= 0.0) == (acts[1][0] >= 0.0) { 1.0 } else { 0.0 };
        buf.push(Transition {
            observations: vec![obs.clone(), obs.clone()],
            actions: acts,
            rewards: vec![r, r],
            next_observations: vec![obs.clone(), obs],
            done: true,
        })
        .unwrap();
        if buf.len() >= 64 {
            let batch = buf.sample(32, &mut replay).unwrap();
            maddpg_update(&mut learners, &batch, &params).unwrap();
        }
    }
    let mut eval = derive_stream(seed, "eval");
    let trials = 1000;
    let agree = (0..trials)
        .filter(|_| {
            let obs = [eval.uniform_range(-1.0, 1.0), eval.uniform_range(-1.0, 1.0)];
            let a = greedy_force(&learners[0], &obs)[0];
            let b = greedy_force(&learners[1], &obs)[0];
            (a >= 0.0) == (b >= 0.0)
        })
        .count();
    agree as f64 / trials as f64
}

pub const H: f64 = 1e-6;

pub fn head(code: u8, width: usize) -> OutputActivation {
    match code % 4 {
        0 => OutputActivation::Identity,
        1 => OutputActivation::Tanh,
        2 => OutputActivation::Softmax,
        _ => OutputActivation::TanhSoftmax { tanh_dims: width / 2 },
    }
}

/// Scalar probe loss `<g, net(x)>`.
pub fn loss(net: &Mlp, x: &[f64], g: &[f64]) -> f64 {
    net.forward(x).unwrap().iter().zip(g).map(|(y, w)| y * w).sum()
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

/// Largest relative error over every parameter and every input coordinate.
pub fn worst_gradient_error(net: &Mlp, x: &[f64], g: &[f64]) -> f64 {
    let (grads, dx) = net.backward(x, g).unwrap();
    let analytic = grads.flat();
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    let mut k = 0;
    for li in 0..net.layers().len() {
        let n_w = net.layers()[li].weights.len();
        let n_b = net.layers()[li].bias.len();
        for idx in 0..n_w + n_b {
            let nudge = |p: &mut Mlp, d: f64| {
                let layer = &mut p.layers_mut()[li];
                if idx < n_w {
                    let cols = layer.weights.ncols();
                    layer.weights[[idx / cols, idx % cols]] += d;
                } else {
                    layer.bias[idx - n_w] += d;
                }
            };
            nudge(&mut probe, H);
            let up = loss(&probe, x, g);
            nudge(&mut probe, -2.0 * H);
            let down = loss(&probe, x, g);
            nudge(&mut probe, H);
            worst = worst.max(rel_err(analytic[k], (up - down) / (2.0 * H)));
            k += 1;
        }
    }
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        xp[i] += H;
        let up = loss(net, &xp, g);
        xp[i] -= 2.0 * H;
        let down = loss(net, &xp, g);
        worst = worst.max(rel_err(dx[i], (up - down) / (2.0 * H)));
    }
    worst
}

/// Smallest |pre-activation| over the hidden ReLU units; finite differences
/// straddling a kink do not estimate the derivative.
pub fn min_hidden_preactivation(net: &Mlp, x: &[f64]) -> f64 {
    let mut a = ndarray::Array1::from(x.to_vec());
    let mut smallest = f64::INFINITY;
    let hidden = net.layers().len() - 1;
    for layer in &net.layers()[..hidden] {
        let z = a.dot(&layer.weights) + &layer.bias;
        smallest = z.iter().fold(smallest, |m, v| m.min(v.abs()));
        a = z.mapv(|v| v.max(0.0));
    }
    smallest
}


/// A random network with random biases, plus a random input and output weighting.
pub fn random_probe(seed: u64, sizes: &[usize], code: u8) -> (Mlp, Vec<f64>, Vec<f64>) {
    let mut rng = derive_stream(seed, "gradcheck");
    let width = *sizes.last().unwrap();
    let mut net = Mlp::new(sizes, head(code, width), &mut rng);
    // Fresh networks have zero biases; random ones keep pre-activations off the ReLU kink.
    for layer in net.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.uniform_range(-0.5, 0.5));
    }
    let x: Vec<f64> = (0..sizes[0]).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let g: Vec<f64> = (0..width).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    (net, x, g)
}
