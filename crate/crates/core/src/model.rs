//! NTK-parameterized feed-forward networks and plain affine models.
//!
//! Layer `l` computes `x⁽ˡ⁺¹⁾ = σ⁽ˡ⁾((s_W/√n_l)·𝖶⁽ˡ⁾ x⁽ˡ⁾ + s_b·𝖻⁽ˡ⁾)` where `𝖶`, `𝖻` are the
//! trainable parameters, initialized standard normal. Affine models use
//! `wᵀx + b` with no scaling.
//!
//! Flat parameter layout: for each layer in order, the trainable weights
//! row-major (`n_{l+1} × n_l`) followed by the trainable biases.

use std::fmt;
use std::str::FromStr;

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Sigmoid,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative at `z`; relu uses 0 at the kink.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::ModelSpec(format!("unknown activation `{s}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    NtkMlp,
    Affine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    kind: ModelKind,
    widths: Vec<usize>,
    activations: Vec<Activation>,
    s_w: f64,
    s_b: f64,
}

impl ModelSpec {
    /// NTK-parameterized network with `widths = [N, n₁, …, M]`.
    /// `activations` has one entry per layer and must end with `Identity`.
    pub fn ntk_mlp(
        widths: Vec<usize>,
        activations: Vec<Activation>,
        s_w: f64,
        s_b: f64,
    ) -> Result<Self> {
        let spec = ModelSpec {
            kind: ModelKind::NtkMlp,
            widths,
            activations,
            s_w,
            s_b,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Hidden layers share one activation; the head is linear.
    pub fn ntk_mlp_uniform(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        hidden_activation: Activation,
        s_w: f64,
        s_b: f64,
    ) -> Result<Self> {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(output_dim);
        let mut activations = vec![hidden_activation; hidden.len()];
        activations.push(Activation::Identity);
        Self::ntk_mlp(widths, activations, s_w, s_b)
    }

    /// Scalar affine model `wᵀx + b` on `input_dim` features.
    pub fn affine(input_dim: usize) -> Result<Self> {
        let spec = ModelSpec {
            kind: ModelKind::Affine,
            widths: vec![input_dim, 1],
            activations: vec![Activation::Identity],
            s_w: 1.0,
            s_b: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ModelSpec(m));
        if self.widths.len() < 2 {
            return bad("need at least one layer".into());
        }
        if self.widths.iter().any(|&w| w == 0) {
            return bad(format!("widths must be positive, got {:?}", self.widths));
        }
        if self.activations.len() != self.widths.len() - 1 {
            return bad(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.widths.len() - 1
            ));
        }
        if self.activations.last() != Some(&Activation::Identity) {
            return bad("final activation must be identity".into());
        }
        if !(self.s_w > 0.0) || !self.s_w.is_finite() {
            return bad(format!("s_W must be positive, got {}", self.s_w));
        }
        if !(self.s_b >= 0.0) || !self.s_b.is_finite() {
            return bad(format!("s_b must be nonnegative, got {}", self.s_b));
        }
        if self.kind == ModelKind::Affine && (self.widths.len() != 2 || self.widths[1] != 1) {
            return bad("affine models have exactly one scalar output layer".into());
        }
        Ok(())
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn s_w(&self) -> f64 {
        self.s_w
    }

    pub fn s_b(&self) -> f64 {
        self.s_b
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// `P = Σ_l (n_{l+1}·n_l + n_{l+1})`.
    pub fn num_params(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    fn weight_scale(&self, layer: usize) -> f64 {
        match self.kind {
            ModelKind::Affine => 1.0,
            ModelKind::NtkMlp => self.s_w / (self.widths[layer] as f64).sqrt(),
        }
    }

    fn bias_scale(&self) -> f64 {
        match self.kind {
            ModelKind::Affine => 1.0,
            ModelKind::NtkMlp => self.s_b,
        }
    }

    /// Offsets of the weight and bias segments of `layer` in the flat vector.
    fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let weights = off;
                let biases = off + w[0] * w[1];
                off = biases + w[1];
                (weights, biases)
            })
            .collect()
    }
}

/// Flat trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

/// One layer's trainable weights (row-major, `rows × cols`) and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn unflatten(&self, spec: &ModelSpec) -> Result<Vec<LayerParams>> {
        check_len("parameter vector", spec.num_params(), self.0.len())?;
        Ok(spec
            .layer_offsets()
            .into_iter()
            .zip(spec.widths.windows(2))
            .map(|((wo, bo), w)| LayerParams {
                rows: w[1],
                cols: w[0],
                weights: self.0[wo..bo].to_vec(),
                biases: self.0[bo..bo + w[1]].to_vec(),
            })
            .collect())
    }

    pub fn flatten(layers: &[LayerParams]) -> ParamVector {
        let mut v = Vec::new();
        for l in layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.biases);
        }
        ParamVector(v)
    }
}

/// Standard normal draws for every trainable entry, from a ChaCha8 stream
/// keyed by `seed`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ParamVector(
        (0..spec.num_params())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect(),
    )
}

struct ForwardCache {
    // layer inputs x⁽⁰⁾ … x⁽ᴸ⁻¹⁾ and pre-activations z⁽⁰⁾ … z⁽ᴸ⁻¹⁾
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

fn forward_cached(spec: &ModelSpec, params: &[f64], x: &[f64]) -> Result<ForwardCache> {
    check_len("parameter vector", spec.num_params(), params.len())?;
    check_len("model input", spec.input_dim(), x.len())?;
    let offsets = spec.layer_offsets();
    let mut inputs = Vec::with_capacity(spec.num_layers());
    let mut pre = Vec::with_capacity(spec.num_layers());
    let mut cur = x.to_vec();
    let bs = spec.bias_scale();
    for (l, (&(wo, bo), act)) in offsets.iter().zip(&spec.activations).enumerate() {
        let (n_in, n_out) = (spec.widths[l], spec.widths[l + 1]);
        let ws = spec.weight_scale(l);
        let z: Vec<f64> = (0..n_out)
            .map(|i| {
                let row = &params[wo + i * n_in..wo + (i + 1) * n_in];
                let dot: f64 = row.iter().zip(&cur).map(|(w, v)| w * v).sum();
                ws * dot + bs * params[bo + i]
            })
            .collect();
        let next = z.iter().map(|&v| act.apply(v)).collect();
        inputs.push(std::mem::replace(&mut cur, next));
        pre.push(z);
    }
    Ok(ForwardCache {
        inputs,
        pre,
        output: cur,
    })
}

pub fn forward(spec: &ModelSpec, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    forward_slice(spec, &params.0, x)
}

pub(crate) fn forward_slice(spec: &ModelSpec, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_cached(spec, params, x)?.output)
}

/// Accumulates `Σ_m seed_m · ∂f_m(x)/∂θ` into `grad` with one backward pass.
fn backprop_accumulate(
    spec: &ModelSpec,
    params: &[f64],
    cache: &ForwardCache,
    seed: &[f64],
    grad: &mut [f64],
) {
    let offsets = spec.layer_offsets();
    let bs = spec.bias_scale();
    let last = spec.num_layers() - 1;
    // δ = ∂(seedᵀf)/∂z⁽ˡ⁾
    let mut delta: Vec<f64> = seed
        .iter()
        .zip(&cache.pre[last])
        .map(|(&s, &z)| s * spec.activations[last].derivative(z))
        .collect();
    for l in (0..=last).rev() {
        let (wo, bo) = offsets[l];
        let n_in = spec.widths[l];
        let ws = spec.weight_scale(l);
        let x = &cache.inputs[l];
        for (i, &d) in delta.iter().enumerate() {
            let row = &mut grad[wo + i * n_in..wo + (i + 1) * n_in];
            for (g, &xj) in row.iter_mut().zip(x) {
                *g += d * ws * xj;
            }
            grad[bo + i] += d * bs;
        }
        if l > 0 {
            let prev_act = spec.activations[l - 1];
            let mut back = vec![0.0; n_in];
            for (i, &d) in delta.iter().enumerate() {
                let row = &params[wo + i * n_in..wo + (i + 1) * n_in];
                for (b, &w) in back.iter_mut().zip(row) {
                    *b += d * w;
                }
            }
            delta = back
                .iter()
                .zip(&cache.pre[l - 1])
                .map(|(&b, &z)| ws * b * prev_act.derivative(z))
                .collect();
        }
    }
}

/// Vector–Jacobian product `Σ_i J(x_i)ᵀ r_i` where `residuals` holds one
/// `M`-vector per sample, concatenated.
pub(crate) fn vjp_slice(
    spec: &ModelSpec,
    params: &[f64],
    xs: &[Vec<f64>],
    residuals: &[f64],
) -> Result<Vec<f64>> {
    let m = spec.output_dim();
    check_len("residual vector", xs.len() * m, residuals.len())?;
    let mut grad = vec![0.0; spec.num_params()];
    for (x, r) in xs.iter().zip(residuals.chunks(m)) {
        let cache = forward_cached(spec, params, x)?;
        backprop_accumulate(spec, params, &cache, r, &mut grad);
    }
    Ok(grad)
}

/// Parameter Jacobian of one agent's outputs: `(M·D) × P`, rows ordered
/// sample-major then output coordinate.
#[derive(Debug, Clone)]
pub struct JacobianBlock {
    pub agent: usize,
    pub matrix: Mat<f64>,
}

/// Exact Jacobian of all outputs on `xs` with respect to the trainable
/// parameters.
pub fn jacobian(spec: &ModelSpec, params: &ParamVector, xs: &[Vec<f64>]) -> Result<Mat<f64>> {
    jacobian_slice(spec, &params.0, xs)
}

pub(crate) fn jacobian_slice(spec: &ModelSpec, params: &[f64], xs: &[Vec<f64>]) -> Result<Mat<f64>> {
    let m = spec.output_dim();
    let p = spec.num_params();
    let mut out = Mat::<f64>::zeros(xs.len() * m, p);
    let mut row = vec![0.0; p];
    let mut seed = vec![0.0; m];
    for (i, x) in xs.iter().enumerate() {
        let cache = forward_cached(spec, params, x)?;
        for k in 0..m {
            row.fill(0.0);
            seed.fill(0.0);
            seed[k] = 1.0;
            backprop_accumulate(spec, params, &cache, &seed, &mut row);
            for (c, &v) in row.iter().enumerate() {
                out[(i * m + k, c)] = v;
            }
        }
    }
    Ok(out)
}

/// Empirical NTK `J(X)·J(X′)ᵀ`, shape `(M·|X|) × (M·|X′|)`.
pub fn empirical_ntk(
    spec: &ModelSpec,
    params: &ParamVector,
    xs: &[Vec<f64>],
    xs2: &[Vec<f64>],
) -> Result<Mat<f64>> {
    let j1 = jacobian(spec, params, xs)?;
    let j2 = jacobian(spec, params, xs2)?;
    Ok(&j1 * j2.transpose())
}
