//! Forward simulation with retained traces and surrogate-gradient BPTT.

use ndarray::Array2;

use crate::delay::{delay_gradient, quantize_delay, shift_spikes, step_shift, ste_delay_backward};
use crate::error::{Error, Result};
use crate::quant::QuantSpec;
use crate::spike::{membrane_forward, KernelBank, SpikeTensor};
use crate::train::loss::Surrogate;
use crate::train::network::Network;

/// Quantized weights and integer shifts of one layer, fixed for a batch.
#[derive(Debug, Clone)]
pub struct PreparedLayer {
    pub weights: Array2<f64>,
    /// Forward delay after lattice quantization (or the raw delay).
    pub effective_delays: Option<Vec<f64>>,
    pub shifts: Option<Vec<usize>>,
}

/// A network with its quantizers applied, ready to simulate many samples.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub kernel: KernelBank,
    pub theta_u: f64,
    pub layers: Vec<PreparedLayer>,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: SpikeTensor,
    pub potentials: Array2<f64>,
    pub spikes: SpikeTensor,
    /// Output after the axonal shift; equals `spikes` without delays.
    pub delayed: SpikeTensor,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub layers: Vec<LayerTrace>,
}

impl Trace {
    pub fn readout(&self) -> &SpikeTensor {
        &self.layers.last().expect("non-empty trace").delayed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub delays: Option<Vec<f64>>,
    pub alpha: f64,
    pub beta: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Array2::zeros(l.weights.dim()),
                    delays: l.delays.as_ref().map(|d| vec![0.0; d.len()]),
                    alpha: 0.0,
                    beta: 0.0,
                    offset: 0.0,
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            if let (Some(x), Some(y)) = (&mut a.delays, &b.delays) {
                x.iter_mut().zip(y).for_each(|(x, y)| *x += y);
            }
            a.alpha += b.alpha;
            a.beta += b.beta;
            a.offset += b.offset;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in &mut self.layers {
            a.weights *= k;
            if let Some(x) = &mut a.delays {
                x.iter_mut().for_each(|v| *v *= k);
            }
            a.alpha *= k;
            a.beta *= k;
            a.offset *= k;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite())
                && l.delays.as_ref().is_none_or(|d| d.iter().all(|v| v.is_finite()))
                && l.alpha.is_finite()
                && l.beta.is_finite()
                && l.offset.is_finite()
        })
    }
}

impl Prepared {
    pub fn new(net: &Network) -> Result<Self> {
        net.validate()?;
        let kernel = net.kernel()?;
        let layers = net
            .layers
            .iter()
            .map(|layer| {
                let q = layer.quant.quantizer()?;
                let latent = layer.weights.as_standard_layout();
                let flat = q.quantize(latent.as_slice().expect("standard layout"), layer.quant.scales());
                let weights = Array2::from_shape_vec(layer.weights.dim(), flat)
                    .map_err(|e| Error::Internal(e.to_string()))?;
                let (effective_delays, shifts) = match &layer.delays {
                    None => (None, None),
                    Some(d) => {
                        let eff = match &layer.lattice {
                            Some(lat) => d
                                .values
                                .iter()
                                .map(|&v| quantize_delay(v, lat))
                                .collect::<Result<Vec<_>>>()?,
                            None => d.values.clone(),
                        };
                        let shifts = eff.iter().map(|&v| step_shift(v)).collect::<Result<Vec<_>>>()?;
                        (Some(eff), Some(shifts))
                    }
                };
                Ok(PreparedLayer {
                    weights,
                    effective_delays,
                    shifts,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kernel,
            theta_u: net.neuron.theta_u,
            layers,
        })
    }

    pub fn forward(&self, input: &SpikeTensor) -> Result<Trace> {
        let mut x = input.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        for pl in &self.layers {
            let (potentials, spikes) = membrane_forward(&pl.weights, &self.kernel, &x)?;
            let delayed = match &pl.shifts {
                Some(s) => shift_spikes(&spikes, s)?,
                None => spikes.clone(),
            };
            let next = delayed.clone();
            layers.push(LayerTrace {
                input: std::mem::replace(&mut x, next),
                potentials,
                spikes,
                delayed,
            });
        }
        Ok(Trace { layers })
    }

    /// BPTT from `readout_grad = ∂L/∂(readout spikes)`, shape `[n_steps, n_classes]`.
    pub fn backward(
        &self,
        net: &Network,
        trace: &Trace,
        readout_grad: &Array2<f64>,
        surrogate: Surrogate,
    ) -> Result<Gradients> {
        if trace.layers.len() != self.layers.len() || net.layers.len() != self.layers.len() {
            return Err(Error::Internal("trace does not match network".into()));
        }
        let mut grads = Gradients::zeros_like(net);
        let mut g_out = readout_grad.clone();
        for l in (0..self.layers.len()).rev() {
            let pl = &self.layers[l];
            let lt = &trace.layers[l];
            let layer = &net.layers[l];
            let (n_steps, n_out) = lt.potentials.dim();
            if g_out.dim() != (n_steps, n_out) {
                return Err(Error::Shape(format!(
                    "layer {l}: upstream gradient {:?} vs potentials {:?}",
                    g_out.dim(),
                    (n_steps, n_out)
                )));
            }

            let g_spikes = match &pl.shifts {
                Some(shifts) => {
                    let learn_offset = layer.lattice.as_ref().is_some_and(|lat| lat.learn_offset);
                    let (gs, g_d, g_off) = shift_backward(&g_out, &lt.delayed, shifts, learn_offset)?;
                    grads.layers[l].delays = Some(g_d);
                    grads.layers[l].offset = g_off;
                    gs
                }
                None => g_out,
            };

            let g_u = self.membrane_backward(&lt.potentials, &g_spikes, surrogate);

            // ∂L/∂W_q[i, j] = Σ_{input spikes (t0, j)} Σ_k ε[k] g_u[t0 + k, i]
            let mut g_wq_t = Array2::<f64>::zeros((layer.n_in(), n_out));
            for (t0, j) in lt.input.events() {
                for (k, &e) in self.kernel.eps.iter().enumerate() {
                    let t = t0 + k + 1;
                    if t >= n_steps {
                        break;
                    }
                    let mut row = g_wq_t.row_mut(j);
                    row.scaled_add(e, &g_u.row(t));
                }
            }
            let g_wq = g_wq_t.reversed_axes().as_standard_layout().into_owned();

            if l > 0 {
                // ∂L/∂x[t, j] = Σ_k ε[k] Σ_i W_q[i, j] g_u[t + k, i]
                let h = g_u.dot(&pl.weights);
                let n_in = layer.n_in();
                let mut g_in = Array2::<f64>::zeros((n_steps, n_in));
                for t in 0..n_steps {
                    let mut row = g_in.row_mut(t);
                    for (k, &e) in self.kernel.eps.iter().enumerate() {
                        let tt = t + k + 1;
                        if tt >= n_steps {
                            break;
                        }
                        row.scaled_add(e, &h.row(tt));
                    }
                }
                g_out = g_in;
            } else {
                g_out = Array2::zeros((0, 0));
            }

            let q = layer.quant.quantizer()?;
            let latent = layer.weights.as_standard_layout();
            let qg = q.backward(
                g_wq.as_slice().expect("standard layout"),
                latent.as_slice().expect("standard layout"),
            );
            grads.layers[l].weights = Array2::from_shape_vec(layer.weights.dim(), qg.latent)
                .map_err(|e| Error::Internal(e.to_string()))?;
            grads.layers[l].alpha = qg.alpha;
            grads.layers[l].beta = qg.beta;
        }
        Ok(grads)
    }

    /// Reverse-time recursion through the spike nonlinearity and the
    /// refractory self-feedback:
    /// `g_u[t] = σ'(u[t]) · (g_s[t] + Σ_k ν[k] g_u[t + k])`.
    fn membrane_backward(&self, potentials: &Array2<f64>, g_spikes: &Array2<f64>, surrogate: Surrogate) -> Array2<f64> {
        let (n_steps, n) = potentials.dim();
        let mut g_u = Array2::<f64>::zeros((n_steps, n));
        let mut carry = Array2::<f64>::zeros((n_steps, n));
        for t in (0..n_steps).rev() {
            for i in 0..n {
                let gs = g_spikes[[t, i]] + carry[[t, i]];
                let gu = gs * surrogate.grad(potentials[[t, i]], self.theta_u);
                g_u[[t, i]] = gu;
                if gu != 0.0 {
                    for (k, &v) in self.kernel.nu.iter().enumerate() {
                        if t < k + 1 {
                            break;
                        }
                        carry[[t - k - 1, i]] += v * gu;
                    }
                }
            }
        }
        g_u
    }
}

/// Backward of the axonal shift `s_d[t] = s[t - D]`. Returns the gradient
/// with respect to the unshifted spikes, the latent delays and the lattice
/// offset. A later shift moves every edge right, so
/// `∂s_d[m]/∂d ≈ −(s_d[m] − s_d[m−1])`.
fn shift_backward(
    g_out: &Array2<f64>,
    delayed: &SpikeTensor,
    shifts: &[usize],
    learn_offset: bool,
) -> Result<(Array2<f64>, Vec<f64>, f64)> {
    let fd = delay_gradient(g_out, delayed)?;
    let g_hat: Vec<f64> = fd.iter().map(|v| -v).collect();
    let (g_d, g_off) = ste_delay_backward(&g_hat, learn_offset);
    let (n_steps, n_out) = g_out.dim();
    let mut gs = Array2::zeros((n_steps, n_out));
    for t in 0..n_steps {
        for (i, &d) in shifts.iter().enumerate() {
            if t + d < n_steps {
                gs[[t, i]] = g_out[[t + d, i]];
            }
        }
    }
    Ok((gs, g_d, g_off))
}

pub fn forward_pass(net: &Network, input: &SpikeTensor) -> Result<Trace> {
    Prepared::new(net)?.forward(input)
}

pub fn backward_pass(net: &Network, trace: &Trace, readout_grad: &Array2<f64>, surrogate: Surrogate) -> Result<Gradients> {
    Prepared::new(net)?.backward(net, trace, readout_grad, surrogate)
}

/// The network the forward pass actually runs: quantized weights stored as
/// full precision and lattice delays replaced by their grid values. Its
/// outputs are identical to those of `net`.
pub fn frozen_network(net: &Network) -> Result<Network> {
    let prepared = Prepared::new(net)?;
    let mut out = net.clone();
    for (layer, pl) in out.layers.iter_mut().zip(prepared.layers) {
        layer.weights = pl.weights;
        layer.quant = QuantSpec::full();
        if let (Some(d), Some(eff)) = (&mut layer.delays, pl.effective_delays) {
            d.values = eff;
        }
        layer.lattice = None;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::{DelayLattice, DelayVector};
    use crate::train::network::{Layer, NeuronConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eps(t: f64, tau: f64) -> f64 {
        (t / tau) * (1.0 - t / tau).exp()
    }

    fn nu(t: f64, tau: f64, theta: f64) -> f64 {
        -2.0 * theta * eps(t, tau)
    }

    fn layer(weights: Array2<f64>, delays: Option<Vec<f64>>) -> Layer {
        Layer {
            weights,
            delays: delays.map(|d| DelayVector::new(d, f64::INFINITY)),
            lattice: None,
            quant: QuantSpec::full(),
            lambda: 0.0,
        }
    }

    fn neuron(tau: f64) -> NeuronConfig {
        NeuronConfig {
            tau_s: tau,
            tau_r: tau,
            theta_u: 10.0,
        }
    }

    fn random_input(n_steps: usize, n: usize, p: f64, rng: &mut ChaCha8Rng) -> SpikeTensor {
        let mut x = SpikeTensor::zeros(n_steps, n).unwrap();
        for t in 0..n_steps {
            for j in 0..n {
                if rng.random_bool(p) {
                    x.set(t, j, true);
                }
            }
        }
        x
    }

    /// `g_u[t] = σ'(u[t])·(g_s[t] + Σ_{t'>t} ν(t'−t)·g_u[t'])` with closed-form ν.
    fn oracle_g_u(u: &Array2<f64>, g_s: &Array2<f64>, n: NeuronConfig, sg: Surrogate) -> Array2<f64> {
        let (steps, k) = u.dim();
        let mut g_u = Array2::<f64>::zeros((steps, k));
        for i in 0..k {
            for t in (0..steps).rev() {
                let mut acc = g_s[[t, i]];
                for tp in t + 1..steps {
                    acc += nu((tp - t) as f64, n.tau_r, n.theta_u) * g_u[[tp, i]];
                }
                g_u[[t, i]] = sg.grad(u[[t, i]], n.theta_u) * acc;
            }
        }
        g_u
    }

    /// `(ε ⊛ x_j)[t] = Σ_{t0 < t} x_j[t0]·ε(t − t0)`.
    fn conv(x: &SpikeTensor, j: usize, t: usize, tau: f64) -> f64 {
        (0..t).filter(|&t0| x.get(t0, j)).map(|t0| eps((t - t0) as f64, tau)).sum()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-12)
    }

    #[test]
    fn linear_path_weight_gradient_matches_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // a horizon shorter than the kernel tail keeps the kernels untruncated
        let (steps, n_in, n_out, tau) = (12, 4, 3, 2.0);
        let w = Array2::from_shape_fn((n_out, n_in), |_| rng.random_range(-1.0..1.0));
        let net = Network {
            n_inputs: n_in,
            n_steps: steps,
            neuron: neuron(tau),
            layers: vec![layer(w.clone(), None)],
        };
        let x = random_input(steps, n_in, 0.3, &mut rng);
        let trace = forward_pass(&net, &x).unwrap();
        let u = &trace.layers[0].potentials;
        assert!(u.iter().all(|&v| v < 10.0), "threshold crossed");
        for t in 0..steps {
            for i in 0..n_out {
                let direct: f64 = (0..n_in).map(|j| w[[i, j]] * conv(&x, j, t, tau)).sum();
                assert!((u[[t, i]] - direct).abs() < 1e-12);
            }
        }
        let g_s = Array2::from_shape_fn((steps, n_out), |_| rng.random_range(-1.0..1.0));
        let sg = Surrogate {
            tau_scale: 0.3,
            tau_theta: 4.0,
        };
        let grads = backward_pass(&net, &trace, &g_s, sg).unwrap();
        let g_u = oracle_g_u(u, &g_s, net.neuron, sg);
        for i in 0..n_out {
            for j in 0..n_in {
                let expected: f64 = (0..steps).map(|t| g_u[[t, i]] * conv(&x, j, t, tau)).sum();
                if expected.abs() > 1e-9 {
                    assert!(rel_err(grads.layers[0].weights[[i, j]], expected) < 1e-6);
                }
            }
        }
    }

    fn two_layer(rng: &mut ChaCha8Rng) -> (Network, SpikeTensor) {
        let (steps, n_in, n_hid, n_out) = (14, 5, 4, 3);
        let w1 = Array2::from_shape_fn((n_hid, n_in), |_| rng.random_range(0.0..14.0));
        let w2 = Array2::from_shape_fn((n_out, n_hid), |_| rng.random_range(-3.0..12.0));
        let net = Network {
            n_inputs: n_in,
            n_steps: steps,
            neuron: neuron(2.0),
            layers: vec![layer(w1, Some(vec![0.0, 1.4, 3.0, 2.6])), layer(w2, None)],
        };
        (net, random_input(steps, n_in, 0.25, rng))
    }

    #[test]
    fn hidden_delay_gradient_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (net, x) = two_layer(&mut rng);
        let trace = forward_pass(&net, &x).unwrap();
        assert!(trace.layers[0].spikes.count() > 0);
        let (steps, n_out) = trace.layers[1].potentials.dim();
        let g_s = Array2::from_shape_fn((steps, n_out), |_| rng.random_range(-1.0..1.0));
        let sg = Surrogate::default();
        let grads = backward_pass(&net, &trace, &g_s, sg).unwrap();

        let g_u = oracle_g_u(&trace.layers[1].potentials, &g_s, net.neuron, sg);
        let w2 = &net.layers[1].weights;
        let sd = &trace.layers[0].delayed;
        for j in 0..4 {
            let mut expected = 0.0;
            let mut prev = 0.0;
            for m in 0..steps {
                let g_hid: f64 = (m + 1..steps)
                    .map(|tp| (0..n_out).map(|i| w2[[i, j]] * g_u[[tp, i]]).sum::<f64>() * eps((tp - m) as f64, 2.0))
                    .sum();
                let cur = sd.get(m, j) as u8 as f64;
                expected -= (cur - prev) * g_hid;
                prev = cur;
            }
            let got = grads.layers[0].delays.as_ref().unwrap()[j];
            assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0), "{got} vs {expected}");
        }
        assert!(grads.layers[1].delays.is_none());
    }

    #[test]
    fn shift_backward_example() {
        let g_out = Array2::from_shape_vec((3, 1), vec![0.5, 1.0, 0.2]).unwrap();
        let delayed = SpikeTensor::from_events(3, 1, [(1, 0)]).unwrap();
        let (gs, g_d, off) = shift_backward(&g_out, &delayed, &[1], true).unwrap();
        assert!((g_d[0] + 0.8).abs() < 1e-15);
        assert!((off + 0.8).abs() < 1e-15);
        assert_eq!(gs.column(0).to_vec(), vec![1.0, 0.2, 0.0]);
        let (_, _, off) = shift_backward(&g_out, &delayed, &[1], false).unwrap();
        assert_eq!(off, 0.0);
    }

    #[test]
    fn silent_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (net, x) = two_layer(&mut rng);
        let trace = forward_pass(&net, &x).unwrap();
        let zero = Array2::zeros((14, 3));
        let g = backward_pass(&net, &trace, &zero, Surrogate::default()).unwrap();
        assert_eq!(g, Gradients::zeros_like(&net));
        let ones = Array2::from_elem((14, 3), 1.0);
        let off = Surrogate {
            tau_scale: 0.0,
            tau_theta: 1.0,
        };
        let g = backward_pass(&net, &trace, &ones, off).unwrap();
        assert!(g.layers.iter().all(|l| l.weights.iter().all(|&v| v == 0.0)));
        assert!(g.layers[0].delays.as_ref().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delayed_spike_reaches_readout_late() {
        let mut w1 = Array2::zeros((1, 1));
        w1[[0, 0]] = 10.0;
        let mut w2 = Array2::zeros((1, 1));
        w2[[0, 0]] = 10.0;
        let mut net = Network {
            n_inputs: 1,
            n_steps: 20,
            neuron: neuron(1.0),
            layers: vec![layer(w1, Some(vec![3.0])), layer(w2, None)],
        };
        let x = SpikeTensor::from_events(20, 1, [(2, 0)]).unwrap();
        let tr = forward_pass(&net, &x).unwrap();
        assert_eq!(tr.layers[0].spikes.spike_times(0), vec![3]);
        assert_eq!(tr.layers[0].delayed.spike_times(0), vec![6]);
        assert_eq!(tr.readout().spike_times(0), vec![7]);
        net.layers[0].delays.as_mut().unwrap().values[0] = 0.0;
        assert_eq!(forward_pass(&net, &x).unwrap().readout(), forward_pass(&net.without_delays(), &x).unwrap().readout());
    }

    #[test]
    fn frozen_network_runs_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut net, x) = two_layer(&mut rng);
        for l in &mut net.layers {
            l.quant = QuantSpec::parse("ternary-learn").unwrap();
        }
        net.layers[0].lattice = Some(DelayLattice::new(0.5, 2.0, Some(3), true).unwrap());
        let frozen = frozen_network(&net).unwrap();
        assert!(frozen.layers.iter().all(|l| l.quant.scheme == "full" && l.lattice.is_none()));
        let a = forward_pass(&net, &x).unwrap();
        let b = forward_pass(&frozen, &x).unwrap();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.potentials, lb.potentials);
            assert_eq!(la.delayed, lb.delayed);
        }
    }
}
