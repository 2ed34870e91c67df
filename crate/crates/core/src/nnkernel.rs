//! Dense feed-forward networks with hand-written backward passes and Adam.
//!
//! Everything is double precision. Batched entry points take row-major
//! matrices of shape `batch × features`; the single-vector entry points are
//! thin wrappers over a batch of one.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::real17;

/// Version tag written into every checkpoint document.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One affine map followed by an elementwise activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `output_dim × input_dim`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    /// He-uniform for relu layers, Xavier-uniform for everything else; zero bias.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / input_dim as f64).sqrt(),
            _ => (6.0 / (input_dim + output_dim) as f64).sqrt(),
        };
        let weight =
            Array2::from_shape_fn((output_dim, input_dim), |_| rng.random_range(-limit..limit));
        Layer {
            weight,
            bias: Array1::zeros(output_dim),
            activation,
        }
    }

    pub fn zeros(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Layer {
            weight: Array2::zeros((output_dim, input_dim)),
            bias: Array1::zeros(output_dim),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// A stack of dense layers.
#[derive(Clone, Debug)]
pub struct DenseNet {
    layers: Vec<Layer>,
    /// Bumped whenever parameters are handed out mutably; caches remember it.
    revision: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Intermediate values of a batched forward pass.
#[derive(Clone, Debug)]
pub struct BatchCache {
    revision: u64,
    shapes: Vec<(usize, usize)>,
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    activations: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

impl BatchCache {
    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }

    pub fn output(&self) -> &Array2<f64> {
        self.activations
            .last()
            .expect("cache always holds the input")
    }
}

/// Cache of a single-vector forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache(BatchCache);

/// Parameter gradients, laid out exactly like the network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weight *= factor;
            g.bias *= factor;
        }
    }

    /// Flat views in the same order as [`DenseNet::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for g in &self.layers {
            out.push(g.weight.as_slice().expect("standard layout"));
            out.push(g.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for g in &mut self.layers {
            out.push(g.weight.as_slice_mut().expect("standard layout"));
            out.push(g.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl DenseNet {
    /// Validates that layer shapes chain and every parameter is finite.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            check_dim("layer chaining", pair[0].output_dim(), pair[1].input_dim())?;
        }
        for l in &layers {
            check_dim("bias length", l.output_dim(), l.bias.len())?;
            if !l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        Ok(DenseNet {
            layers: layers
                .into_iter()
                .map(|l| Layer {
                    weight: l.weight.as_standard_layout().into_owned(),
                    bias: l.bias.as_standard_layout().into_owned(),
                    activation: l.activation,
                })
                .collect(),
            revision: 0,
        })
    }

    /// Randomly initialized net. `spec` lists `(units, activation)` per layer.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        spec: &[(usize, Activation)],
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.len());
        let mut fan_in = input_dim;
        for &(units, act) in spec {
            layers.push(Layer::init(fan_in, units, act, rng));
            fan_in = units;
        }
        Self::from_layers(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.output_dim(), l.input_dim()))
            .collect()
    }

    /// Mutable flat parameter views (weight then bias, per layer).
    /// Invalidates caches produced before the call.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.revision += 1;
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    /// Forward pass without keeping intermediates.
    pub fn predict_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("network input", self.input_dim(), input.ncols())?;
        let mut x = input.to_owned();
        for l in &self.layers {
            let mut z = x.dot(&l.weight.t());
            z += &l.bias;
            z.mapv_inplace(|v| l.activation.apply(v));
            x = z;
        }
        Ok(x)
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, BatchCache)> {
        check_dim("network input", self.input_dim(), input.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(input.to_owned());
        for l in &self.layers {
            let mut z = activations.last().unwrap().dot(&l.weight.t());
            z += &l.bias;
            let a = z.mapv(|v| l.activation.apply(v));
            pre_activations.push(z);
            activations.push(a);
        }
        let out = activations.last().unwrap().clone();
        Ok((
            out,
            BatchCache {
                revision: self.revision,
                shapes: self.shapes(),
                activations,
                pre_activations,
            },
        ))
    }

    /// Gradients of the scalar loss whose output gradient is `grad_output`,
    /// summed over the batch, plus the gradient with respect to the input.
    pub fn backward_batch(
        &self,
        cache: &BatchCache,
        grad_output: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if cache.revision != self.revision || cache.shapes != self.shapes() {
            return Err(Error::StaleCache(format!(
                "cache revision {} vs network revision {}",
                cache.revision, self.revision
            )));
        }
        check_dim("gradient batch", cache.batch_size(), grad_output.nrows())?;
        check_dim("gradient width", self.output_dim(), grad_output.ncols())?;

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_output.to_owned();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[i];
            let a = &cache.activations[i + 1];
            if l.activation != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(z)
                    .and(a)
                    .for_each(|d, &z, &a| *d *= l.activation.derivative(z, a));
            }
            let weight = delta
                .t()
                .dot(&cache.activations[i])
                .as_standard_layout()
                .into_owned();
            let bias = delta.sum_axis(Axis(0));
            let next = delta.dot(&l.weight);
            grads.push(LayerGrad { weight, bias });
            delta = next;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// Gradient with respect to the batch input only; parameter gradients are
    /// not formed.
    pub fn input_grad_batch(
        &self,
        cache: &BatchCache,
        grad_output: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        if cache.revision != self.revision || cache.shapes != self.shapes() {
            return Err(Error::StaleCache(format!(
                "cache revision {} vs network revision {}",
                cache.revision, self.revision
            )));
        }
        check_dim("gradient batch", cache.batch_size(), grad_output.nrows())?;
        check_dim("gradient width", self.output_dim(), grad_output.ncols())?;
        let mut delta = grad_output.to_owned();
        for (i, l) in self.layers.iter().enumerate().rev() {
            if l.activation != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(&cache.pre_activations[i])
                    .and(&cache.activations[i + 1])
                    .for_each(|d, &z, &a| *d *= l.activation.derivative(z, a));
            }
            delta = delta.dot(&l.weight);
        }
        Ok(delta)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::invalid(e.to_string()))?;
        let (y, cache) = self.forward_batch(x)?;
        Ok((y.row(0).to_vec(), ForwardCache(cache)))
    }

    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
    ) -> Result<(Gradients, Vec<f64>)> {
        let g = ArrayView2::from_shape((1, grad_output.len()), grad_output)
            .map_err(|e| Error::invalid(e.to_string()))?;
        let (grads, gin) = self.backward_batch(&cache.0, g)?;
        Ok((grads, gin.row(0).to_vec()))
    }

    pub fn to_record(&self) -> NetRecord {
        NetRecord {
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    input_dim: l.input_dim(),
                    output_dim: l.output_dim(),
                    activation: l.activation,
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_record(rec: &NetRecord) -> Result<Self> {
        let layers = rec
            .layers
            .iter()
            .map(|l| {
                check_dim(
                    "checkpoint weight",
                    l.input_dim * l.output_dim,
                    l.weight.len(),
                )?;
                let weight = Array2::from_shape_vec((l.output_dim, l.input_dim), l.weight.clone())
                    .map_err(|e| Error::invalid(e.to_string()))?;
                Ok(Layer {
                    weight,
                    bias: Array1::from(l.bias.clone()),
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }
}

/// Column-wise concatenation helper used by composite networks.
pub fn hstack(parts: &[ArrayView2<f64>]) -> Array2<f64> {
    ndarray::concatenate(Axis(1), parts).expect("row counts agree")
}

/// Splits columns of `m` into consecutive blocks of the given widths.
pub fn hsplit(m: &Array2<f64>, widths: &[usize]) -> Vec<Array2<f64>> {
    let mut out = Vec::with_capacity(widths.len());
    let mut start = 0;
    for &w in widths {
        out.push(m.slice(s![.., start..start + w]).to_owned());
        start += w;
    }
    out
}

/// Serialized form of a [`DenseNet`]; weights are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub layers: Vec<LayerRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    #[serde(with = "real17::vec")]
    pub weight: Vec<f64>,
    #[serde(with = "real17::vec")]
    pub bias: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Adam optimizer state over an ordered list of parameter groups.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// One bias-corrected Adam update. Rejects the whole step, leaving
    /// parameters and state untouched, if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        check_dim("adam parameter groups", params.len(), grads.len())?;
        for (p, g) in params.iter().zip(grads) {
            check_dim("adam group size", p.len(), g.len())?;
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second_moment = self.first_moment.clone();
        } else {
            check_dim("adam state groups", self.first_moment.len(), params.len())?;
            for (m, p) in self.first_moment.iter().zip(params.iter()) {
                check_dim("adam state size", m.len(), p.len())?;
            }
        }
        if !grads.iter().all(|g| g.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("gradient"));
        }

        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(
            self.first_moment
                .iter_mut()
                .zip(self.second_moment.iter_mut()),
        ) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let f = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= f;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: f64, b: f64) -> DenseNet {
        DenseNet::from_layers(vec![Layer {
            weight: array![[w]],
            bias: array![b],
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn scalar_forward_and_backward() {
        let net = single(2.0, 1.0);
        let (y, cache) = net.forward(&[3.0]).unwrap();
        assert_eq!(y, vec![7.0]);
        let (g, dx) = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g.layers[0].weight, array![[3.0]]);
        assert_eq!(g.layers[0].bias, array![1.0]);
        assert_eq!(dx, vec![2.0]);
    }

    #[test]
    fn zero_net_gives_zero() {
        let net = DenseNet::from_layers(vec![
            Layer::zeros(4, 3, Activation::Identity),
            Layer::zeros(3, 2, Activation::Identity),
        ])
        .unwrap();
        let (y, _) = net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_grad_output_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(
            3,
            &[(5, Activation::Tanh), (2, Activation::Identity)],
            &mut rng,
        )
        .unwrap();
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        let (g, dx) = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic_under_seed() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let net = DenseNet::new(
                6,
                &[(8, Activation::Relu), (3, Activation::Sigmoid)],
                &mut rng,
            )
            .unwrap();
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            net.forward(&x).unwrap().0
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_bad_input_and_stale_cache() {
        let mut net = single(1.0, 0.0);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(net.forward(&[f64::NAN]), Err(Error::NonFinite(_))));
        let (_, cache) = net.forward(&[1.0]).unwrap();
        net.params_mut()[0][0] = 5.0;
        assert!(matches!(
            net.backward(&cache, &[1.0]),
            Err(Error::StaleCache(_))
        ));
        let other = DenseNet::from_layers(vec![Layer::zeros(1, 2, Activation::Identity)]).unwrap();
        let (_, c2) = other.forward(&[1.0]).unwrap();
        assert!(net.backward(&c2, &[1.0]).is_err());
    }

    #[test]
    fn rejects_unchained_layers() {
        let r = DenseNet::from_layers(vec![
            Layer::zeros(2, 3, Activation::Relu),
            Layer::zeros(4, 1, Activation::Identity),
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = [1.0];
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        adam.step(&mut [&mut p[..]], &[&[5.0]]).unwrap();
        assert!((p[0] - 1.0 + 0.1).abs() < 1e-6);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut p = vec![0.3, -0.7];
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut p[..]], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn adam_matches_scalar_recurrence() {
        // Independent scalar Adam written out by hand.
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let g = 0.7;
        let mut x = 2.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - f64::powi(b1, t));
            let vh = v / (1.0 - f64::powi(b2, t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        let mut p = [2.0];
        let mut adam = Adam::new(AdamConfig::with_lr(lr));
        for _ in 0..2 {
            adam.step(&mut [&mut p[..]], &[&[g]]).unwrap();
        }
        assert!((p[0] - x).abs() < 1e-15);
        assert!(adam.second_moment()[0][0] >= 0.0);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = vec![1.0, 2.0];
        let mut adam = Adam::new(AdamConfig::default());
        let r = adam.step(&mut [&mut p[..]], &[&[0.1, f64::INFINITY]]);
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut a = [3.0];
        let mut b = [4.0];
        let n = clip_global_norm(&mut [&mut a[..], &mut b[..]], 1.0);
        assert_eq!(n, 5.0);
        assert!((a[0] - 0.6).abs() < 1e-15 && (b[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(
            4,
            &[(3, Activation::Tanh), (2, Activation::Identity)],
            &mut rng,
        )
        .unwrap();
        let text = serde_json::to_string(&net.to_record()).unwrap();
        let back = DenseNet::from_record(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, net);
    }
}
