use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::delay::{DelayLattice, DelayVector};
use crate::error::{Error, Result};
use crate::quant::QuantSpec;
use crate::spike::KernelBank;

/// Neuron constants shared by every layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronConfig {
    pub tau_s: f64,
    pub tau_r: f64,
    pub theta_u: f64,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self {
            tau_s: 1.0,
            tau_r: 1.0,
            theta_u: 10.0,
        }
    }
}

/// One feedforward layer. The readout (last) layer never carries delays.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[n_out, n_in]` latent weights.
    pub weights: Array2<f64>,
    pub delays: Option<DelayVector>,
    pub lattice: Option<DelayLattice>,
    pub quant: QuantSpec,
    /// L2 penalty coefficient on this layer's delays.
    pub lambda: f64,
}

impl Layer {
    pub fn n_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub n_inputs: usize,
    pub n_steps: usize,
    pub neuron: NeuronConfig,
    pub layers: Vec<Layer>,
}

/// Architecture and initialization settings for [`Network::init`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub n_inputs: usize,
    pub hidden: Vec<usize>,
    pub n_classes: usize,
    pub n_steps: usize,
    pub neuron: NeuronConfig,
    /// Give hidden layers learnable axonal delays.
    pub delays: bool,
    pub theta_d: f64,
    pub weight_quant: String,
    pub lattice: Option<DelayLattice>,
    /// Per-hidden-layer L2 coefficients; a single value is broadcast.
    pub lambda: Vec<f64>,
    /// Multiplier on the Kaiming-normal standard deviation.
    pub init_gain: f64,
    /// Initial delays are drawn uniformly from `[0, delay_init_max)`.
    pub delay_init_max: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            n_inputs: 64,
            hidden: vec![128, 128],
            n_classes: 10,
            n_steps: 100,
            neuron: NeuronConfig::default(),
            delays: true,
            theta_d: f64::INFINITY,
            weight_quant: "full".into(),
            lattice: None,
            lambda: vec![0.0],
            init_gain: 40.0,
            delay_init_max: 1.0,
        }
    }
}

impl NetworkSpec {
    pub fn lambda_for(&self, hidden_index: usize) -> f64 {
        match self.lambda.len() {
            0 => 0.0,
            1 => self.lambda[0],
            _ => self.lambda.get(hidden_index).copied().unwrap_or(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_inputs == 0 || self.n_classes == 0 || self.n_steps == 0 {
            return Err(Error::param("architecture", "inputs, classes and steps must be >= 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::param("hidden", "hidden widths must be >= 1"));
        }
        if self.lambda.iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::param("lambda", "coefficients must be >= 0"));
        }
        if !(self.theta_d >= 0.0) {
            return Err(Error::param("theta_d", "must be >= 0"));
        }
        if !(self.delay_init_max >= 0.0) {
            return Err(Error::param("delay_init_max", "must be >= 0"));
        }
        if !(self.init_gain > 0.0) {
            return Err(Error::param("init_gain", "must be > 0"));
        }
        KernelBank::new(self.neuron.tau_s, self.neuron.tau_r, self.neuron.theta_u, self.n_steps)?;
        QuantSpec::parse(&self.weight_quant)?;
        Ok(())
    }
}

impl Network {
    /// Kaiming-normal weights scaled by `init_gain`, uniform initial delays.
    pub fn init(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let mut sizes = vec![spec.n_inputs];
        sizes.extend(&spec.hidden);
        sizes.push(spec.n_classes);
        let n_layers = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let std = spec.init_gain * (2.0 / n_in as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::param("init_gain", e.to_string()))?;
            let weights = Array2::from_shape_fn((n_out, n_in), |_| snap(normal.sample(rng)));
            let hidden = l + 1 < n_layers;
            let delays = (hidden && spec.delays).then(|| {
                let values = (0..n_out)
                    .map(|_| {
                        if spec.delay_init_max > 0.0 {
                            snap(rng.random_range(0.0..spec.delay_init_max).min(spec.theta_d))
                        } else {
                            0.0
                        }
                    })
                    .collect();
                DelayVector::new(values, spec.theta_d)
            });
            let mut quant = QuantSpec::parse(&spec.weight_quant)?;
            let q = quant.quantizer()?;
            let mut scales = q.initial_scales(weights.as_slice().expect("standard layout"));
            scales.alpha = snap(scales.alpha);
            scales.beta = snap(scales.beta);
            quant.set_scales(scales);
            layers.push(Layer {
                weights,
                lattice: if delays.is_some() { spec.lattice.clone() } else { None },
                delays,
                quant,
                lambda: if hidden { spec.lambda_for(l) } else { 0.0 },
            });
        }
        Ok(Self {
            n_inputs: spec.n_inputs,
            n_steps: spec.n_steps,
            neuron: spec.neuron,
            layers,
        })
    }

    pub fn kernel(&self) -> Result<KernelBank> {
        KernelBank::new(self.neuron.tau_s, self.neuron.tau_r, self.neuron.theta_u, self.n_steps)
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out())
    }

    pub fn hidden_layers(&self) -> &[Layer] {
        &self.layers[..self.layers.len().saturating_sub(1)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        let mut fan_in = self.n_inputs;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.n_in() != fan_in || layer.n_out() == 0 {
                return Err(Error::Shape(format!(
                    "layer {l} is {}x{} but receives {fan_in} inputs",
                    layer.n_out(),
                    layer.n_in()
                )));
            }
            if let Some(d) = &layer.delays {
                if l == last {
                    return Err(Error::Shape("readout layer cannot carry delays".into()));
                }
                if d.len() != layer.n_out() {
                    return Err(Error::Shape(format!("layer {l}: {} delays for {} neurons", d.len(), layer.n_out())));
                }
            }
            if !(layer.lambda >= 0.0) {
                return Err(Error::param("lambda", format!("layer {l} has lambda {}", layer.lambda)));
            }
            fan_in = layer.n_out();
        }
        Ok(())
    }

    /// Rounds every parameter to the nearest `f32`, so checkpoints are exact.
    pub fn snap_to_f32(&mut self) {
        for layer in &mut self.layers {
            layer.weights.mapv_inplace(snap);
            if let Some(d) = &mut layer.delays {
                d.values.iter_mut().for_each(|v| *v = snap(*v));
            }
            if let Some(lat) = &mut layer.lattice {
                lat.offset = snap(lat.offset);
            }
            layer.quant.alpha = snap(layer.quant.alpha);
            layer.quant.beta = snap(layer.quant.beta);
        }
    }

    /// Drops every delay to zero and removes delay learning.
    pub fn without_delays(&self) -> Self {
        let mut net = self.clone();
        for layer in &mut net.layers {
            layer.delays = None;
            layer.lattice = None;
        }
        net
    }
}

pub(crate) fn snap(v: f64) -> f64 {
    v as f32 as f64
}

/// Delay penalty `Σ_l λ_l Σ_i d_i²` and its gradient `2·λ_l·d_i` per layer.
pub fn apply_regularization(net: &Network) -> (f64, Vec<Option<Vec<f64>>>) {
    let mut penalty = 0.0;
    let grads = net
        .layers
        .iter()
        .map(|layer| {
            layer.delays.as_ref().map(|d| {
                penalty += layer.lambda * d.values.iter().map(|v| v * v).sum::<f64>();
                d.values.iter().map(|v| 2.0 * layer.lambda * v).collect()
            })
        })
        .collect();
    (penalty, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_spec() -> NetworkSpec {
        NetworkSpec {
            n_inputs: 6,
            hidden: vec![5, 4],
            n_classes: 3,
            n_steps: 20,
            ..NetworkSpec::default()
        }
    }

    #[test]
    fn init_shapes_and_delays() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::init(&small_spec(), &mut rng).unwrap();
        net.validate().unwrap();
        assert_eq!(net.layers.len(), 3);
        assert_eq!(net.layers[0].weights.dim(), (5, 6));
        assert_eq!(net.layers[2].weights.dim(), (3, 4));
        assert!(net.layers[2].delays.is_none());
        for l in &net.layers[..2] {
            let d = l.delays.as_ref().unwrap();
            assert!(d.values.iter().all(|&v| (0.0..1.0).contains(&v)));
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = Network::init(&small_spec(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = Network::init(&small_spec(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = Network::init(&small_spec(), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn regularization_examples() {
        let mut net = Network::init(&small_spec(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        net.layers[1].delays = None;
        net.layers[0].delays = Some(DelayVector::new(vec![3.0, 4.0, 0.0, 0.0, 0.0], f64::INFINITY));
        net.layers[0].lambda = 0.01;
        let (p, g) = apply_regularization(&net);
        assert!((p - 0.25).abs() < 1e-12);
        let g0 = g[0].as_ref().unwrap();
        assert!((g0[0] - 0.06).abs() < 1e-12 && (g0[1] - 0.08).abs() < 1e-12);

        net.layers[0].lambda = 0.0;
        let (p, g) = apply_regularization(&net);
        assert_eq!(p, 0.0);
        assert!(g[0].as_ref().unwrap().iter().all(|&v| v == 0.0));

        net.layers[0].lambda = 0.01;
        for v in &mut net.layers[0].delays.as_mut().unwrap().values {
            *v *= 2.0;
        }
        assert!((apply_regularization(&net).0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_bad_shapes() {
        let mut net = Network::init(&small_spec(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        net.layers[2].delays = Some(DelayVector::zeros(3, f64::INFINITY));
        assert!(net.validate().is_err());
        let mut net = Network::init(&small_spec(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        net.layers[1].weights = Array2::zeros((4, 7));
        assert!(net.validate().is_err());
    }
}
