use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Linear => {}
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the activation
    /// output `a`.
    fn backprop(self, a: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Linear => {}
            Activation::Relu => grad.zip_mut_with(a, |g, &a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.zip_mut_with(a, |g, &a| *g *= 1.0 - a * a),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Slot {
    n_in: usize,
    n_out: usize,
    w: usize,
    b: usize,
}

/// Dense feed-forward network. Parameters live in one flat buffer, layer by
/// layer: the `n_in x n_out` weight matrix in row-major order, then the bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "MlpRepr", try_from = "MlpRepr")]
pub struct Mlp {
    dims: Vec<usize>,
    hidden: Activation,
    output: Activation,
    slots: Vec<Slot>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_train`]; `acts[0]` is the input and
/// `acts[L]` the output.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().unwrap()
    }

    pub fn batch_size(&self) -> usize {
        self.acts[0].nrows()
    }
}

fn layout(dims: &[usize]) -> (Vec<Slot>, usize) {
    let mut slots = Vec::with_capacity(dims.len() - 1);
    let mut off = 0;
    for w in dims.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        slots.push(Slot {
            n_in,
            n_out,
            w: off,
            b: off + n_in * n_out,
        });
        off += n_in * n_out + n_out;
    }
    (slots, off)
}

impl Mlp {
    /// All-zero network; its output is the output activation of zero.
    pub fn zeros(dims: &[usize], output: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad layer dims {dims:?}")));
        }
        let (slots, n) = layout(dims);
        Ok(Self {
            dims: dims.to_vec(),
            hidden: Activation::Relu,
            output,
            slots,
            params: vec![0.0; n],
        })
    }

    /// He-uniform hidden layers and a Glorot-uniform output layer scaled by
    /// `output_gain`; biases start at zero.
    pub fn random<R: Rng>(dims: &[usize], output: Activation, output_gain: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims, output)?;
        let last = net.slots.len() - 1;
        for (l, s) in net.slots.clone().into_iter().enumerate() {
            let bound = if l == last {
                output_gain * (6.0 / (s.n_in + s.n_out) as f64).sqrt()
            } else {
                (6.0 / s.n_in as f64).sqrt()
            };
            for w in &mut net.params[s.w..s.b] {
                *w = rng.random_range(-1.0..1.0) * bound;
            }
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layer_count(&self) -> usize {
        self.slots.len()
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let s = self.slots[layer];
        ArrayView2::from_shape((s.n_in, s.n_out), &self.params[s.w..s.b]).unwrap()
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let s = self.slots[layer];
        &self.params[s.b..s.b + s.n_out]
    }

    /// Flat offsets of layer `layer`'s weights and bias.
    pub fn layer_offsets(&self, layer: usize) -> (usize, usize) {
        (self.slots[layer].w, self.slots[layer].b)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.dims == other.dims
    }

    fn layer_out(&self, l: usize, input: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = input.dot(&self.weights(l));
        let b = ndarray::ArrayView1::from(self.bias(l));
        z += &b;
        let act = if l + 1 == self.slots.len() { self.output } else { self.hidden };
        act.apply(&mut z);
        z
    }

    /// Forward pass for one input.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        ensure_len("network input", self.input_dim(), input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass for a batch of row inputs.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure_len("network input", self.input_dim(), input.ncols())?;
        let mut a = self.layer_out(0, &input);
        for l in 1..self.slots.len() {
            a = self.layer_out(l, &a.view());
        }
        Ok(a)
    }

    /// Forward pass that keeps the activations needed by [`Mlp::backward`].
    pub fn forward_train(&self, input: Array2<f64>) -> Result<ForwardCache> {
        ensure_len("network input", self.input_dim(), input.ncols())?;
        let mut acts = Vec::with_capacity(self.slots.len() + 1);
        acts.push(input);
        for l in 0..self.slots.len() {
            let next = self.layer_out(l, &acts[l].view());
            acts.push(next);
        }
        Ok(ForwardCache { acts })
    }

    /// Reverse-mode pass. `output_grad` holds dLoss/dOutput per batch row.
    /// Parameter gradients are summed over the batch and written into `grads`
    /// (same layout as the parameters, overwritten); returns dLoss/dInput.
    pub fn backward(&self, cache: &ForwardCache, output_grad: ArrayView2<f64>, grads: &mut [f64]) -> Result<Array2<f64>> {
        ensure_len("gradient buffer", self.params.len(), grads.len())?;
        ensure_len("output gradient rows", cache.batch_size(), output_grad.nrows())?;
        ensure_len("output gradient cols", self.output_dim(), output_grad.ncols())?;
        if cache.acts.len() != self.slots.len() + 1 {
            return Err(Error::InvalidConfig("forward cache does not belong to this network".into()));
        }
        let mut delta = output_grad.to_owned();
        for l in (0..self.slots.len()).rev() {
            let s = self.slots[l];
            let act = if l + 1 == self.slots.len() { self.output } else { self.hidden };
            act.backprop(&cache.acts[l + 1], &mut delta);

            let a_in = &cache.acts[l];
            let mut gw = ArrayViewMut2::from_shape((s.n_in, s.n_out), &mut grads[s.w..s.b]).unwrap();
            gw.assign(&a_in.t().dot(&delta));
            let gb = delta.sum_axis(Axis(0));
            grads[s.b..s.b + s.n_out].copy_from_slice(gb.as_slice().unwrap());

            delta = delta.dot(&self.weights(l).t());
        }
        Ok(delta)
    }
}

/// Moves `target` toward `online`: `target <- (1 - tau) * target + tau * online`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::InvalidConfig(format!(
            "soft update between {:?} and {:?}",
            target.dims, online.dims
        )));
    }
    for (t, o) in target.params.iter_mut().zip(&online.params) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}

/// Serialized form: per layer, a row-major `n_in x n_out` weight array and a
/// bias array.
#[derive(Serialize, Deserialize)]
struct MlpRepr {
    dims: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
    layers: Vec<LayerRepr>,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<Mlp> for MlpRepr {
    fn from(m: Mlp) -> Self {
        let layers = m
            .slots
            .iter()
            .map(|s| LayerRepr {
                weights: m.params[s.w..s.b].to_vec(),
                bias: m.params[s.b..s.b + s.n_out].to_vec(),
            })
            .collect();
        Self {
            dims: m.dims,
            hidden_activation: m.hidden,
            output_activation: m.output,
            layers,
        }
    }
}

impl TryFrom<MlpRepr> for Mlp {
    type Error = Error;

    fn try_from(r: MlpRepr) -> Result<Self> {
        let mut m = Mlp::zeros(&r.dims, r.output_activation)?;
        m.hidden = r.hidden_activation;
        ensure_len("serialized layers", m.slots.len(), r.layers.len())?;
        for (s, layer) in m.slots.clone().iter().zip(r.layers) {
            ensure_len("serialized weights", s.n_in * s.n_out, layer.weights.len())?;
            ensure_len("serialized bias", s.n_out, layer.bias.len())?;
            m.params[s.w..s.b].copy_from_slice(&layer.weights);
            m.params[s.b..s.b + s.n_out].copy_from_slice(&layer.bias);
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("serialized network parameters".into()));
        }
        Ok(m)
    }
}

/// Convenience for building a batch from row slices.
pub fn rows_to_array(rows: &[Vec<f64>], width: usize) -> Result<Array2<f64>> {
    let mut flat = Vec::with_capacity(rows.len() * width);
    for r in rows {
        ensure_len("batch row", width, r.len())?;
        flat.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((rows.len(), width), flat).unwrap())
}
