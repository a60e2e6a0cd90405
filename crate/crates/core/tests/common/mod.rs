#![allow(dead_code)]

use covr_core::envs::{ActionVec, Env, EnvConfig};
use covr_core::numcore::{Mlp, MlpGrads, RngStream};
use covr_core::sac::{AgentNets, Batch, ReplayBuffer, Transition};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const FD_PROBES: usize = 100;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central differences at `probes` random coordinates of `x`. Returns the
/// worst relative error.
pub fn check_flat(x: &[f64], grad: &[f64], loss: impl Fn(&[f64]) -> f64, probes: usize, seed: u64) -> f64 {
    assert_eq!(x.len(), grad.len());
    let mut rng = RngStream::new(seed);
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for _ in 0..probes {
        let i = rng.below(x.len());
        probe[i] = x[i] + FD_STEP;
        let up = loss(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = loss(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(grad[i], numeric));
    }
    worst
}

pub fn flatten(net: &Mlp) -> Vec<f64> {
    net.params().into_iter().flatten().copied().collect()
}

pub fn flatten_grads(g: &MlpGrads) -> Vec<f64> {
    g.blocks().into_iter().flatten().copied().collect()
}

pub fn unflatten(net: &mut Mlp, flat: &[f64]) {
    let mut k = 0;
    for block in net.params_mut() {
        block.copy_from_slice(&flat[k..k + block.len()]);
        k += block.len();
    }
}

/// Checks `grads` for the network chosen by `pick` against `loss(nets)`.
pub fn check_net(
    nets: &AgentNets,
    pick: fn(&mut AgentNets) -> &mut Mlp,
    grads: &MlpGrads,
    loss: impl Fn(&AgentNets) -> f64,
    seed: u64,
) -> f64 {
    let mut base = nets.clone();
    let x = flatten(pick(&mut base));
    check_flat(
        &x,
        &flatten_grads(grads),
        |p| {
            let mut probe = nets.clone();
            unflatten(pick(&mut probe), p);
            loss(&probe)
        },
        FD_PROBES,
        seed,
    )
}

pub fn small_nets(seed: u64, aux: bool) -> AgentNets {
    let mut rng = RngStream::new(seed);
    AgentNets::new(768, 2, 8, 16, 0.1, aux, &mut rng)
}

/// Random-action LaneDrive transitions, every other one carrying a teacher action.
pub fn replay(n: usize, seed: u64) -> ReplayBuffer {
    let cfg = EnvConfig::lane_drive(2);
    let mut rng = RngStream::new(seed);
    let mut rb = ReplayBuffer::new(n.max(1));
    let (mut env, mut obs) = Env::reset(&cfg, &mut rng).unwrap();
    for i in 0..n {
        let a = ActionVec::uniform(&mut rng);
        let s = env.step(a).unwrap();
        rb.push(Transition {
            obs: obs.clone(),
            action: a,
            reward: s.reward,
            next_obs: s.observation.clone(),
            done: s.terminated,
            teacher_action: (i % 2 == 0).then(|| ActionVec::uniform(&mut rng)),
            teacher_age: 0,
            ret: None,
        });
        obs = s.observation;
        if s.done {
            let (e, o) = Env::reset(&cfg, &mut rng).unwrap();
            env = e;
            obs = o;
        }
    }
    rb
}

pub fn batch(n: usize, seed: u64) -> Batch {
    let rb = replay(n, seed);
    let mut rng = RngStream::new(seed ^ 0xb);
    let ts = rb.sample(&mut rng, n);
    Batch::from_transitions(&ts)
}

/// Straightforward re-derivation of the entropy-adaptive selection: sort,
/// interpolate quartiles, apply the sigmoid factor, compare.
pub fn brute_force_select(g: &[f64], eps_hat: f64) -> Vec<usize> {
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    let sd = (g.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    let z: Vec<f64> = if sd < 1e-12 {
        vec![0.0; g.len()]
    } else {
        g.iter().map(|x| (x - mean) / sd).collect()
    };
    let mut s = z.clone();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let i = pos as usize;
        if i + 1 >= s.len() {
            s[i]
        } else {
            s[i] * (1.0 - (pos - i as f64)) + s[i + 1] * (pos - i as f64)
        }
    };
    let factor = 1.0 / (1.0 + eps_hat.exp());
    let tau = q(0.5) + factor * (q(0.75) - q(0.25));
    (0..g.len()).filter(|&i| z[i] >= tau).collect()
}
