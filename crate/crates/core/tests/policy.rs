use mpcnet_core::policy::*;
use mpcnet_core::Vector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dims(n_experts: usize) -> PolicyDims {
    PolicyDims {
        phase_dim: 1,
        state_dim: 3,
        latent_dim: 6,
        control_dim: 2,
        n_experts,
    }
}

const VARIANTS: [(Architecture, Gating); 3] = [
    (Architecture::Moe, Gating::Sigmoid),
    (Architecture::Moe, Gating::Softmax),
    (Architecture::Mlp, Gating::Sigmoid),
];

fn random_policy(arch: Architecture, gating: Gating, d: PolicyDims, rng: &mut ChaCha8Rng) -> Policy {
    let mut policy = Policy::init(arch, gating, d, rng).unwrap();
    for w in policy.theta_mut() {
        *w *= 3.0;
    }
    let offset = (0..d.input_dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
    let scale = (0..d.input_dim()).map(|_| rng.random_range(0.5..2.0)).collect();
    policy.set_normalization(offset, scale).unwrap();
    policy
}

fn random_input(d: &PolicyDims, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let phase = (0..d.phase_dim).map(|_| rng.random_range(0.0..1.0)).collect();
    let x = (0..d.state_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    (phase, x)
}

/// Per-expert quadratic `qᵢ(u) = ½uᵀu + cᵢᵀu`, mixed by the gating weights.
fn mixture_loss(policy: &Policy, phase: &[f64], x: &[f64], c: &[Vector]) -> f64 {
    let cache = policy.forward(phase, x).unwrap();
    cache
        .p
        .iter()
        .zip(&cache.expert_outputs)
        .zip(c)
        .map(|((p, u), c)| p * (0.5 * u.norm_squared() + c.dot(u)))
        .sum()
}

fn analytic_gradient(policy: &Policy, phase: &[f64], x: &[f64], c: &[Vector]) -> Vec<f64> {
    let cache = policy.forward(phase, x).unwrap();
    let du: Vec<Vector> = cache.expert_outputs.iter().zip(c).map(|(u, c)| u + c).collect();
    let values: Vec<f64> = cache
        .expert_outputs
        .iter()
        .zip(c)
        .map(|(u, c)| 0.5 * u.norm_squared() + c.dot(u))
        .collect();
    let mut grad = vec![0.0; policy.num_parameters()];
    policy.backward(&cache, &du, &values, &mut grad).unwrap();
    grad
}

#[test]
fn backward_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (arch, gating) in VARIANTS {
        for n_experts in [1, 3, 8] {
            for _ in 0..6 {
                let d = dims(n_experts);
                let mut policy = random_policy(arch, gating, d, &mut rng);
                let (phase, x) = random_input(&d, &mut rng);
                let c: Vec<Vector> = (0..policy.n_heads())
                    .map(|_| Vector::from_fn(2, |_, _| rng.random_range(-2.0..2.0)))
                    .collect();
                let grad = analytic_gradient(&policy, &phase, &x, &c);
                let h = 1e-6;
                let mut fd = vec![0.0; grad.len()];
                for k in 0..grad.len() {
                    let w = policy.theta()[k];
                    policy.theta_mut()[k] = w + h;
                    let lp = mixture_loss(&policy, &phase, &x, &c);
                    policy.theta_mut()[k] = w - h;
                    let lm = mixture_loss(&policy, &phase, &x, &c);
                    policy.theta_mut()[k] = w;
                    fd[k] = (lp - lm) / (2.0 * h);
                }
                let err: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let norm: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
                assert!(err / norm <= 1e-5, "{arch:?}/{gating:?}/{n_experts}: rel err {}", err / norm);
            }
        }
    }
}

#[test]
fn backward_accumulates() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = dims(3);
    let policy = random_policy(Architecture::Moe, Gating::Sigmoid, d, &mut rng);
    let (phase, x) = random_input(&d, &mut rng);
    let c: Vec<Vector> = (0..3).map(|i| Vector::from_element(2, i as f64)).collect();
    let once = analytic_gradient(&policy, &phase, &x, &c);
    let cache = policy.forward(&phase, &x).unwrap();
    let du: Vec<Vector> = cache.expert_outputs.iter().zip(&c).map(|(u, c)| u + c).collect();
    let values: Vec<f64> = cache
        .expert_outputs
        .iter()
        .zip(&c)
        .map(|(u, c)| 0.5 * u.norm_squared() + c.dot(u))
        .collect();
    let mut twice = once.clone();
    policy.backward(&cache, &du, &values, &mut twice).unwrap();
    assert!(once.iter().zip(&twice).all(|(a, b)| (2.0 * a - b).abs() <= 1e-14 * (1.0 + b.abs())));
    assert!(policy.backward(&cache, &du[..2], &values, &mut twice).is_err());
}

#[test]
fn constant_values_give_no_gating_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for gating in [Gating::Sigmoid, Gating::Softmax] {
        let d = dims(4);
        let policy = random_policy(Architecture::Moe, gating, d, &mut rng);
        let (phase, x) = random_input(&d, &mut rng);
        let cache = policy.forward(&phase, &x).unwrap();
        let du = vec![Vector::zeros(2); 4];
        let mut grad = vec![0.0; policy.num_parameters()];
        policy.backward(&cache, &du, &[2.5; 4], &mut grad).unwrap();
        assert!(grad.iter().all(|g| g.abs() <= 1e-15), "{gating:?}");
    }
}

/// Forward pass written directly from the parameter layout: W1 (row-major),
/// b1, gating weights and biases, then each head's W and b.
fn naive_forward(policy: &Policy, phase: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = policy.dims;
    let th = policy.theta();
    let (ni, nl, nu) = (d.input_dim(), d.latent_dim, d.control_dim);
    let ne = policy.n_heads();
    let mut input = phase.to_vec();
    input.extend_from_slice(x);
    for i in 0..ni {
        input[i] = (input[i] - policy.input_offset[i]) / policy.input_scale[i];
    }
    let mut k = 0;
    let mut take = |n: usize| {
        let s = th[k..k + n].to_vec();
        k += n;
        s
    };
    let w1 = take(nl * ni);
    let b1 = take(nl);
    let mut a = vec![0.0; nl];
    for j in 0..nl {
        let mut s = b1[j];
        for i in 0..ni {
            s += w1[j * ni + i] * input[i];
        }
        a[j] = s.tanh();
    }
    let mut p = vec![1.0];
    if policy.arch == Architecture::Moe {
        let wg = take(ne * nl);
        let bg = take(ne);
        let z: Vec<f64> = (0..ne)
            .map(|e| bg[e] + (0..nl).map(|j| wg[e * nl + j] * a[j]).sum::<f64>())
            .collect();
        let act: Vec<f64> = match policy.gating {
            Gating::Sigmoid => z.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect(),
            Gating::Softmax => z.iter().map(|z| z.exp()).collect(),
        };
        let total: f64 = act.iter().sum();
        p = act.iter().map(|v| v / total).collect();
    }
    let mut u = vec![0.0; nu];
    for e in 0..ne {
        let w = take(nu * nl);
        let b = take(nu);
        for r in 0..nu {
            let out = b[r] + (0..nl).map(|j| w[r * nl + j] * a[j]).sum::<f64>();
            u[r] += p[e] * out;
        }
    }
    (u, p)
}

#[test]
fn forward_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (arch, gating) in VARIANTS {
        let d = dims(5);
        let policy = random_policy(arch, gating, d, &mut rng);
        for _ in 0..20 {
            let (phase, x) = random_input(&d, &mut rng);
            let cache = policy.forward(&phase, &x).unwrap();
            let (u, p) = naive_forward(&policy, &phase, &x);
            assert!(cache.u.iter().zip(&u).all(|(a, b)| (a - b).abs() <= 1e-12));
            assert!(cache.p.iter().zip(&p).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
    }
}

#[test]
fn single_expert_reduces_to_mlp() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = dims(1);
    let moe = random_policy(Architecture::Moe, Gating::Sigmoid, d, &mut rng);
    // drop the single gating row and bias
    let nl = d.latent_dim;
    let trunk = nl * d.input_dim() + nl;
    let mut theta = moe.theta()[..trunk].to_vec();
    theta.extend_from_slice(&moe.theta()[trunk + nl + 1..]);
    let mlp = Policy::from_parts(
        Architecture::Mlp,
        Gating::Sigmoid,
        d,
        moe.input_offset.clone(),
        moe.input_scale.clone(),
        theta,
    )
    .unwrap();
    for _ in 0..10 {
        let (phase, x) = random_input(&d, &mut rng);
        let a = moe.forward(&phase, &x).unwrap();
        assert_eq!(a.p, vec![1.0]);
        assert!((a.u - mlp.act(&phase, &x).unwrap()).norm() <= 1e-15);
    }
}

#[test]
fn permuting_experts_permutes_weights_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = dims(4);
    let (ni, nl, nu) = (d.input_dim(), d.latent_dim, d.control_dim);
    for gating in [Gating::Sigmoid, Gating::Softmax] {
        let policy = random_policy(Architecture::Moe, gating, d, &mut rng);
        let perm = [2, 0, 3, 1];
        let th = policy.theta();
        let wg = nl * ni + nl;
        let bg = wg + 4 * nl;
        let heads = bg + 4;
        let hl = nu * nl + nu;
        let mut permuted = th[..wg].to_vec();
        for &e in &perm {
            permuted.extend_from_slice(&th[wg + e * nl..wg + (e + 1) * nl]);
        }
        for &e in &perm {
            permuted.push(th[bg + e]);
        }
        for &e in &perm {
            permuted.extend_from_slice(&th[heads + e * hl..heads + (e + 1) * hl]);
        }
        let other = Policy::from_parts(
            Architecture::Moe,
            gating,
            d,
            policy.input_offset.clone(),
            policy.input_scale.clone(),
            permuted,
        )
        .unwrap();
        let (phase, x) = random_input(&d, &mut rng);
        let a = policy.forward(&phase, &x).unwrap();
        let b = other.forward(&phase, &x).unwrap();
        assert!((a.u - b.u).norm() <= 1e-14);
        for (i, &e) in perm.iter().enumerate() {
            assert!((b.p[i] - a.p[e]).abs() <= 1e-15);
        }
    }
}

#[test]
fn softmax_is_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = dims(4);
    let mut policy = random_policy(Architecture::Moe, Gating::Softmax, d, &mut rng);
    let (phase, x) = random_input(&d, &mut rng);
    let before = policy.forward(&phase, &x).unwrap();
    let bg = d.latent_dim * d.input_dim() + d.latent_dim + 4 * d.latent_dim;
    for e in 0..4 {
        policy.theta_mut()[bg + e] += 700.0;
    }
    let after = policy.forward(&phase, &x).unwrap();
    assert!(before.p.iter().zip(&after.p).all(|(a, b)| (a - b).abs() <= 1e-12));
}

proptest! {
    #[test]
    fn gating_weights_form_a_distribution(seed in 0u64..1000, n in 1usize..9, softmax in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gating = if softmax { Gating::Softmax } else { Gating::Sigmoid };
        let d = dims(n);
        let policy = random_policy(Architecture::Moe, gating, d, &mut rng);
        let (phase, x) = random_input(&d, &mut rng);
        let p = policy.forward(&phase, &x).unwrap().p;
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|q| *q >= 0.0));
        let h = entropy(&p);
        prop_assert!(h >= -1e-15 && h <= (n as f64).ln() + 1e-12);
    }
}

#[test]
fn init_spread_matches_fan_in() {
    let d = PolicyDims {
        phase_dim: 1,
        state_dim: 9,
        latent_dim: 64,
        control_dim: 2,
        n_experts: 8,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let policy = Policy::init(Architecture::Moe, Gating::Sigmoid, d, &mut rng).unwrap();
    let std = |s: &[f64]| {
        let m = s.iter().sum::<f64>() / s.len() as f64;
        (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / s.len() as f64).sqrt()
    };
    let first = &policy.theta()[..d.latent_dim * d.input_dim()];
    let rest = &policy.theta()[d.latent_dim * d.input_dim() + d.latent_dim..];
    for (block, fan_in) in [(first, d.input_dim()), (rest, d.latent_dim)] {
        let expected = 1.0 / (3.0 * fan_in as f64).sqrt();
        assert!((std(block) / expected - 1.0).abs() <= 0.1, "fan-in {fan_in}");
    }
    let again = Policy::init(Architecture::Moe, Gating::Sigmoid, d, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    assert_eq!(policy, again);
}

#[test]
fn untrained_mixture_is_near_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = dims(8);
    let policy = Policy::init(Architecture::Moe, Gating::Sigmoid, d, &mut rng).unwrap();
    let (phase, x) = random_input(&d, &mut rng);
    let p = policy.forward(&phase, &x).unwrap().p;
    assert!(p.iter().all(|q| (q - 0.125).abs() < 0.05), "{p:?}");
}

#[test]
fn invalid_dimensions_are_rejected() {
    let bad = PolicyDims { latent_dim: 0, ..dims(2) };
    assert!(Policy::zeros(Architecture::Moe, Gating::Sigmoid, bad).is_err());
    assert!(Policy::zeros(Architecture::Moe, Gating::Sigmoid, dims(0)).is_err());
    let policy = Policy::zeros(Architecture::Mlp, Gating::Sigmoid, dims(0)).unwrap();
    assert!(policy.forward(&[0.0], &[0.0, 0.0]).is_err());
    let mut p = policy.clone();
    assert!(p.set_normalization(vec![0.0; 4], vec![1.0, 1.0, 0.0, 1.0]).is_err());
}

#[test]
fn amsgrad_matches_scalar_recurrence() {
    let grads = [0.5, -2.0, 0.1, 3.0, -0.2, 0.0, 1.0];
    let mut opt = AmsGrad::new(1, 0.01);
    let mut theta = [1.0];
    let (mut m, mut v, mut vmax, mut w) = (0.0f64, 0.0f64, 0.0f64, 1.0f64);
    for (t, g) in grads.iter().enumerate() {
        assert!(opt.update(&mut theta, &[*g]).unwrap());
        let t = (t + 1) as i32;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        vmax = vmax.max(v);
        let m_hat = m / (1.0 - 0.9f64.powi(t));
        let v_hat = vmax / (1.0 - 0.999f64.powi(t));
        w -= 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((theta[0] - w).abs() <= 1e-12, "step {t}");
    }
    assert!(!opt.update(&mut theta, &[f64::NAN]).unwrap());
    assert_eq!(opt.skipped, 1);
}
