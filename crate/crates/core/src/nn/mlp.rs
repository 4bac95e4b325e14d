use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// `max(0, x) + 1`; outputs are always at least one, which keeps
    /// masked-normalization logits strictly positive.
    ReluPlusOne,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::ReluPlusOne => x.max(0.0) + 1.0,
            Activation::Linear => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu | Activation::ReluPlusOne => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::ReluPlusOne => 1,
            Activation::Linear => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::ReluPlusOne),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes;
/// the summation order is fixed, so results are reproducible.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (a4, a_rest) = a.split_at(a.len() - a.len() % 4);
    let (b4, b_rest) = b.split_at(a4.len());
    for (x, y) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = a_rest.iter().zip(b_rest).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Fully connected feed-forward network with all parameters in one flat
/// buffer. Layer `l` stores an `out x in` row-major weight block followed by
/// its `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Intermediate values of one forward pass, needed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `values[0]` is the input, `values[l + 1]` the output of layer `l`.
    values: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("cache has at least the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.values[0]
    }
}

fn layout(sizes: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(sizes.len().saturating_sub(1));
    let mut total = 0;
    for pair in sizes.windows(2) {
        offsets.push(total);
        total += pair[0] * pair[1] + pair[1];
    }
    (offsets, total)
}

impl Mlp {
    /// Zero-initialized network. `activations[l]` is applied after layer `l`.
    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::contract("an mlp needs at least input and output sizes"));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(Error::contract(format!(
                "{} layers but {} activations",
                sizes.len() - 1,
                activations.len()
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::contract("layer sizes must be positive"));
        }
        let (offsets, total) = layout(sizes);
        Ok(Self {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; total],
            offsets,
        })
    }

    /// He-uniform weights (limit `sqrt(6 / fan_in)`), zero biases.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, activations)?;
        for l in 0..net.layer_count() {
            let (fan_in, fan_out) = (net.sizes[l], net.sizes[l + 1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let start = net.offsets[l];
            for w in &mut net.params[start..start + fan_in * fan_out] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// Hidden layers use ReLU, the last layer `output`.
    pub fn with_hidden<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(output_activation);
        Self::new(&sizes, &acts, rng)
    }

    pub fn from_parts(sizes: &[usize], activations: &[Activation], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes, activations)?;
        if params.len() != net.params.len() {
            return Err(Error::Incompatible(format!(
                "expected {} parameters, found {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes && self.activations == other.activations
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::contract(format!(
                "mlp input has length {}, expected {}",
                input.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    fn layer(&self, l: usize, input: &[f64], pre: &mut Vec<f64>) {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let start = self.offsets[l];
        let weights = &self.params[start..start + n_in * n_out];
        let bias = &self.params[start + n_in * n_out..start + n_in * n_out + n_out];
        pre.clear();
        pre.extend(weights.chunks_exact(n_in).zip(bias).map(|(row, b)| dot(row, input) + b));
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut current = input.to_vec();
        let mut pre = Vec::new();
        for l in 0..self.layer_count() {
            self.layer(l, &current, &mut pre);
            let act = self.activations[l];
            current = pre.iter().map(|&v| act.apply(v)).collect();
        }
        Ok(current)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        self.check_input(input)?;
        let mut values = Vec::with_capacity(self.layer_count() + 1);
        let mut pres = Vec::with_capacity(self.layer_count());
        values.push(input.to_vec());
        for l in 0..self.layer_count() {
            let mut pre = Vec::new();
            self.layer(l, &values[l], &mut pre);
            let act = self.activations[l];
            values.push(pre.iter().map(|&v| act.apply(v)).collect());
            pres.push(pre);
        }
        Ok(ForwardCache { values, pre: pres })
    }

    /// Reverse-mode pass for one cached forward. Parameter gradients are
    /// *accumulated* into `grads`; the gradient w.r.t. the input is returned.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if output_grad.len() != self.output_len() {
            return Err(Error::contract(format!(
                "output gradient has length {}, expected {}",
                output_grad.len(),
                self.output_len()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::contract("gradient buffer does not match parameter count"));
        }
        if cache.values.len() != self.sizes.len() || cache.values[0].len() != self.input_len() {
            return Err(Error::contract("forward cache does not belong to this network"));
        }
        let mut upstream = output_grad.to_vec();
        for l in (0..self.layer_count()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.activations[l];
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&cache.pre[l])
                .map(|(g, &p)| g * act.derivative(p))
                .collect();
            let start = self.offsets[l];
            let input = &cache.values[l];
            let (w_grad, rest) = grads[start..start + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for ((row, d), b) in w_grad.chunks_exact_mut(n_in).zip(&delta).zip(rest.iter_mut()) {
                if *d == 0.0 {
                    continue;
                }
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
                *b += d;
            }
            let weights = &self.params[start..start + n_in * n_out];
            let mut down = vec![0.0; n_in];
            for (row, d) in weights.chunks_exact(n_in).zip(&delta) {
                if *d == 0.0 {
                    continue;
                }
                for (acc, w) in down.iter_mut().zip(row) {
                    *acc += d * w;
                }
            }
            upstream = down;
        }
        Ok(upstream)
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    /// Weight matrix of layer `l`, row-major by output unit.
    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let start = self.offsets[l];
        &mut self.params[start..start + self.sizes[l] * self.sizes[l + 1]]
    }

    /// Bias vector of layer `l`.
    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let start = self.offsets[l] + self.sizes[l] * self.sizes[l + 1];
        &mut self.params[start..start + self.sizes[l + 1]]
    }
}
