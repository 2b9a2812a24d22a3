//! Mixture-of-experts and MLP policies over a flat parameter vector.
//!
//! Both share the input layer `a = tanh(W₁ (z − offset) ⊘ scale + b₁)` where
//! `z = phase ⊕ x`. The MoE adds a gating head and affine expert heads
//! reading from `a`; the MLP is a single affine head. Gradients are
//! accumulated by hand, layer by layer.

mod amsgrad;

pub use amsgrad::AmsGrad;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, RngCore};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Architecture {
    #[default]
    Moe,
    Mlp,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Moe => "moe",
            Self::Mlp => "mlp",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moe" => Ok(Self::Moe),
            "mlp" => Ok(Self::Mlp),
            other => Err(Error::InvalidConfig(alloc::format!("unknown architecture '{other}'"))),
        }
    }
}

/// How gating logits become mixture weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Gating {
    /// `pᵢ = σ(zᵢ) / Σⱼ σ(zⱼ)`.
    #[default]
    Sigmoid,
    Softmax,
}

impl Gating {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sigmoid => "sigmoid",
            Self::Softmax => "softmax",
        }
    }
}

impl FromStr for Gating {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Self::Sigmoid),
            "softmax" => Ok(Self::Softmax),
            other => Err(Error::InvalidConfig(alloc::format!("unknown gating '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicyDims {
    pub phase_dim: usize,
    pub state_dim: usize,
    pub latent_dim: usize,
    pub control_dim: usize,
    /// Ignored by the MLP, which always has one head.
    pub n_experts: usize,
}

impl PolicyDims {
    pub fn input_dim(&self) -> usize {
        self.phase_dim + self.state_dim
    }
}

/// Offsets of each parameter block inside θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    w1: usize,
    b1: usize,
    wg: usize,
    bg: usize,
    heads: usize,
    head_len: usize,
    len: usize,
}

impl Layout {
    fn new(arch: Architecture, d: &PolicyDims) -> Self {
        let (ni, nl, nu) = (d.input_dim(), d.latent_dim, d.control_dim);
        let w1 = 0;
        let b1 = w1 + nl * ni;
        let wg = b1 + nl;
        let ne = match arch {
            Architecture::Moe => d.n_experts,
            Architecture::Mlp => 0,
        };
        let bg = wg + ne * nl;
        let heads = bg + ne;
        let head_len = nu * nl + nu;
        let n_heads = ne.max(1);
        Self {
            w1,
            b1,
            wg,
            bg,
            heads,
            head_len,
            len: heads + n_heads * head_len,
        }
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub latent: Vec<f64>,
    /// Raw gating activations (sigmoids, or exponentials for softmax).
    pub gate_act: Vec<f64>,
    pub p: Vec<f64>,
    pub expert_outputs: Vec<Vector>,
    pub u: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub arch: Architecture,
    pub gating: Gating,
    pub dims: PolicyDims,
    /// Fixed input normalization applied before the first layer.
    pub input_offset: Vec<f64>,
    pub input_scale: Vec<f64>,
    theta: Vec<f64>,
    layout: Layout,
}

impl Policy {
    /// Uniform fan-in initialization: every weight and bias of a layer with
    /// fan-in `n` is drawn from `U(−1/√n, 1/√n)`.
    pub fn init(arch: Architecture, gating: Gating, dims: PolicyDims, rng: &mut dyn RngCore) -> Result<Self> {
        let mut policy = Self::zeros(arch, gating, dims)?;
        let l = policy.layout;
        let bound_in = 1.0 / libm::sqrt(dims.input_dim() as f64);
        let bound_latent = 1.0 / libm::sqrt(dims.latent_dim as f64);
        for (i, w) in policy.theta.iter_mut().enumerate() {
            let bound = if i < l.wg { bound_in } else { bound_latent };
            *w = rng.random_range(-bound..bound);
        }
        Ok(policy)
    }

    pub fn zeros(arch: Architecture, gating: Gating, dims: PolicyDims) -> Result<Self> {
        if dims.state_dim == 0 || dims.latent_dim == 0 || dims.control_dim == 0 {
            return Err(Error::InvalidConfig("policy dimensions must be positive".into()));
        }
        if arch == Architecture::Moe && dims.n_experts == 0 {
            return Err(Error::InvalidConfig("a mixture needs at least one expert".into()));
        }
        let layout = Layout::new(arch, &dims);
        Ok(Self {
            arch,
            gating,
            dims,
            input_offset: vec![0.0; dims.input_dim()],
            input_scale: vec![1.0; dims.input_dim()],
            theta: vec![0.0; layout.len],
            layout,
        })
    }

    /// Rebuilds a policy from stored parts.
    pub fn from_parts(
        arch: Architecture,
        gating: Gating,
        dims: PolicyDims,
        input_offset: Vec<f64>,
        input_scale: Vec<f64>,
        theta: Vec<f64>,
    ) -> Result<Self> {
        let mut policy = Self::zeros(arch, gating, dims)?;
        check_dim("parameter vector", policy.theta.len(), theta.len())?;
        policy.theta = theta;
        policy.set_normalization(input_offset, input_scale)?;
        Ok(policy)
    }

    pub fn set_normalization(&mut self, offset: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        check_dim("input offset", self.dims.input_dim(), offset.len())?;
        check_dim("input scale", self.dims.input_dim(), scale.len())?;
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidConfig(String::from("input scale must be positive")));
        }
        self.input_offset = offset;
        self.input_scale = scale;
        Ok(())
    }

    pub fn n_heads(&self) -> usize {
        match self.arch {
            Architecture::Moe => self.dims.n_experts,
            Architecture::Mlp => 1,
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn num_parameters(&self) -> usize {
        self.theta.len()
    }

    fn head(&self, i: usize) -> (&[f64], &[f64]) {
        let l = &self.layout;
        let start = l.heads + i * l.head_len;
        let nw = self.dims.control_dim * self.dims.latent_dim;
        (
            &self.theta[start..start + nw],
            &self.theta[start + nw..start + l.head_len],
        )
    }

    pub fn forward(&self, phase: &[f64], x: &[f64]) -> Result<ForwardCache> {
        let d = &self.dims;
        check_dim("phase", d.phase_dim, phase.len())?;
        check_dim("state", d.state_dim, x.len())?;
        let (ni, nl, nu) = (d.input_dim(), d.latent_dim, d.control_dim);
        let l = &self.layout;
        let input: Vec<f64> = phase
            .iter()
            .chain(x)
            .enumerate()
            .map(|(i, z)| (z - self.input_offset[i]) / self.input_scale[i])
            .collect();

        let latent: Vec<f64> = (0..nl)
            .map(|j| {
                let row = &self.theta[l.w1 + j * ni..l.w1 + (j + 1) * ni];
                let pre = self.theta[l.b1 + j] + row.iter().zip(&input).map(|(w, z)| w * z).sum::<f64>();
                libm::tanh(pre)
            })
            .collect();

        let n_heads = self.n_heads();
        let expert_outputs: Vec<Vector> = (0..n_heads)
            .map(|i| {
                let (w, b) = self.head(i);
                Vector::from_fn(nu, |r, _| {
                    b[r] + w[r * nl..(r + 1) * nl].iter().zip(&latent).map(|(w, a)| w * a).sum::<f64>()
                })
            })
            .collect();

        let (gate_act, p) = match self.arch {
            Architecture::Mlp => (vec![1.0], vec![1.0]),
            Architecture::Moe => {
                let logits: Vec<f64> = (0..n_heads)
                    .map(|i| {
                        let row = &self.theta[l.wg + i * nl..l.wg + (i + 1) * nl];
                        self.theta[l.bg + i] + row.iter().zip(&latent).map(|(w, a)| w * a).sum::<f64>()
                    })
                    .collect();
                gate(self.gating, &logits)
            }
        };

        let mut u = Vector::zeros(nu);
        for (pi, out) in p.iter().zip(&expert_outputs) {
            u += out * *pi;
        }
        Ok(ForwardCache {
            input,
            latent,
            gate_act,
            p,
            expert_outputs,
            u,
        })
    }

    /// Control only.
    pub fn act(&self, phase: &[f64], x: &[f64]) -> Result<Vector> {
        Ok(self.forward(phase, x)?.u)
    }

    /// Accumulates into `grad` the gradient of `Σᵢ pᵢ Hᵢ` for one sample,
    /// given `∂ᵤHᵢ` and `Hᵢ` at each expert output.
    ///
    /// Expert heads receive `pᵢ ∂ᵤHᵢ`; the gating head receives the
    /// derivative of the mixture weights against the values `Hᵢ`. Any loss
    /// of the mixed control `u` fits the same form with `∂ᵤHᵢ = ∂ℓ/∂u` and
    /// `Hᵢ = (∂ℓ/∂u)ᵀπᵢ`.
    pub fn backward(&self, cache: &ForwardCache, du: &[Vector], values: &[f64], grad: &mut [f64]) -> Result<()> {
        let n_heads = self.n_heads();
        check_dim("upstream gradients", n_heads, du.len())?;
        check_dim("upstream values", n_heads, values.len())?;
        check_dim("gradient buffer", self.theta.len(), grad.len())?;
        let d = &self.dims;
        let (ni, nl, nu) = (d.input_dim(), d.latent_dim, d.control_dim);
        let l = self.layout;
        let a = &cache.latent;
        let mut ga = vec![0.0; nl];

        for i in 0..n_heads {
            check_dim("upstream gradient", nu, du[i].len())?;
            let start = l.heads + i * l.head_len;
            let (w, _) = self.head(i);
            for r in 0..nu {
                let g = cache.p[i] * du[i][r];
                let row = start + r * nl;
                for j in 0..nl {
                    grad[row + j] += g * a[j];
                    ga[j] += g * w[r * nl + j];
                }
                grad[start + nu * nl + r] += g;
            }
        }

        if self.arch == Architecture::Moe {
            let mean: f64 = cache.p.iter().zip(values).map(|(p, h)| p * h).sum();
            let total: f64 = cache.gate_act.iter().sum();
            for i in 0..n_heads {
                let centered = values[i] - mean;
                let dz = match self.gating {
                    Gating::Sigmoid => {
                        let s = cache.gate_act[i];
                        s * (1.0 - s) / total * centered
                    }
                    Gating::Softmax => cache.p[i] * centered,
                };
                let row = l.wg + i * nl;
                for j in 0..nl {
                    grad[row + j] += dz * a[j];
                    ga[j] += dz * self.theta[row + j];
                }
                grad[l.bg + i] += dz;
            }
        }

        for j in 0..nl {
            let dpre = ga[j] * (1.0 - a[j] * a[j]);
            let row = l.w1 + j * ni;
            for k in 0..ni {
                grad[row + k] += dpre * cache.input[k];
            }
            grad[l.b1 + j] += dpre;
        }
        Ok(())
    }
}

/// Mixture weights and raw activations from gating logits.
fn gate(kind: Gating, logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let act: Vec<f64> = match kind {
        Gating::Sigmoid => logits.iter().map(|z| 1.0 / (1.0 + libm::exp(-z))).collect(),
        Gating::Softmax => {
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            logits.iter().map(|z| libm::exp(z - m)).collect()
        }
    };
    let total: f64 = act.iter().sum();
    let p = act.iter().map(|a| a / total).collect();
    (act, p)
}

/// Shannon entropy of a probability vector, in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&q| q > 0.0).map(|q| q * libm::log(*q)).sum::<f64>()
}
