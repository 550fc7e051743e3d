//! Discrete-time Spike Response Model.
//!
//! Time is a unit-step grid. Kernels are sampled at integer steps starting at
//! `t = 1`; the value at `t = 0` is zero and never stored. All convolutions
//! are causal: the potential at step `t` only sees spikes at steps `< t`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel samples below this magnitude (relative to the peak) are truncated.
pub const KERNEL_TAIL: f64 = 1e-4;

/// Binary spike raster indexed `[step, neuron]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTensor {
    n_steps: usize,
    n_neurons: usize,
    step_size: f64,
    data: Vec<u8>,
}

impl SpikeTensor {
    pub fn zeros(n_steps: usize, n_neurons: usize) -> Result<Self> {
        if n_steps == 0 || n_neurons == 0 {
            return Err(Error::Shape(format!(
                "spike tensor needs at least one step and one neuron, got {n_steps}x{n_neurons}"
            )));
        }
        Ok(Self {
            n_steps,
            n_neurons,
            step_size: 1.0,
            data: vec![0; n_steps * n_neurons],
        })
    }

    /// Builds a raster from `(step, neuron)` pairs. Duplicates collapse to one spike.
    pub fn from_events(
        n_steps: usize,
        n_neurons: usize,
        events: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut s = Self::zeros(n_steps, n_neurons)?;
        for (t, i) in events {
            if t >= n_steps || i >= n_neurons {
                return Err(Error::Shape(format!(
                    "event ({t}, {i}) outside {n_steps}x{n_neurons} raster"
                )));
            }
            s.set(t, i, true);
        }
        Ok(s)
    }

    pub fn with_step_size(mut self, step_size: f64) -> Self {
        self.step_size = step_size;
        self
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize) -> bool {
        self.data[t * self.n_neurons + i] != 0
    }

    #[inline]
    pub fn set(&mut self, t: usize, i: usize, spike: bool) {
        self.data[t * self.n_neurons + i] = spike as u8;
    }

    /// Row of spikes at step `t`, one byte (0 or 1) per neuron.
    pub fn step(&self, t: usize) -> &[u8] {
        &self.data[t * self.n_neurons..(t + 1) * self.n_neurons]
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&b| b as usize).sum()
    }

    /// Spike count of each neuron over steps `[from, to)`.
    pub fn counts_in(&self, from: usize, to: usize) -> Vec<usize> {
        let mut c = vec![0; self.n_neurons];
        for t in from..to.min(self.n_steps) {
            for (ci, &b) in c.iter_mut().zip(self.step(t)) {
                *ci += b as usize;
            }
        }
        c
    }

    /// Steps at which neuron `i` fired, ascending.
    pub fn spike_times(&self, i: usize) -> Vec<usize> {
        (0..self.n_steps).filter(|&t| self.get(t, i)).collect()
    }

    /// All `(step, neuron)` pairs, step-major.
    pub fn events(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(move |(k, _)| (k / self.n_neurons, k % self.n_neurons))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }
}

fn alpha_shape(t: f64, tau: f64) -> f64 {
    (t / tau) * (1.0 - t / tau).exp()
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

/// `ε(t) = (t/τ_s)·exp(1 − t/τ_s)` at `t = 1..=trunc_len`; element `k-1` holds `ε(k)`.
pub fn sample_epsilon_kernel(tau_s: f64, trunc_len: usize) -> Result<Vec<f64>> {
    check_positive("tau_s", tau_s)?;
    if trunc_len == 0 {
        return Err(Error::param("trunc_len", "must be at least 1"));
    }
    Ok((1..=trunc_len)
        .map(|t| alpha_shape(t as f64, tau_s))
        .collect())
}

/// `ν(t) = −2·θ_u·(t/τ_r)·exp(1 − t/τ_r)` at `t = 1..=trunc_len`.
pub fn sample_nu_kernel(tau_r: f64, theta_u: f64, trunc_len: usize) -> Result<Vec<f64>> {
    check_positive("tau_r", tau_r)?;
    check_positive("theta_u", theta_u)?;
    if trunc_len == 0 {
        return Err(Error::param("trunc_len", "must be at least 1"));
    }
    Ok((1..=trunc_len)
        .map(|t| -2.0 * theta_u * alpha_shape(t as f64, tau_r))
        .collect())
}

/// Smallest step past the peak where the normalized kernel falls below
/// [`KERNEL_TAIL`], capped at `n_steps`.
pub fn truncation_length(tau: f64, n_steps: usize) -> usize {
    let mut t = tau.ceil().max(1.0) as usize;
    while alpha_shape(t as f64, tau) >= KERNEL_TAIL {
        t += 1;
    }
    t.min(n_steps.max(1))
}

/// Sampled synaptic and refractory kernels shared by one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    pub tau_s: f64,
    pub tau_r: f64,
    pub theta_u: f64,
    pub trunc_len: usize,
    pub eps: Vec<f64>,
    pub nu: Vec<f64>,
}

impl KernelBank {
    pub fn new(tau_s: f64, tau_r: f64, theta_u: f64, n_steps: usize) -> Result<Self> {
        check_positive("tau_s", tau_s)?;
        check_positive("tau_r", tau_r)?;
        let trunc_len = truncation_length(tau_s.max(tau_r), n_steps);
        Ok(Self {
            tau_s,
            tau_r,
            theta_u,
            trunc_len,
            eps: sample_epsilon_kernel(tau_s, trunc_len)?,
            nu: sample_nu_kernel(tau_r, theta_u, trunc_len)?,
        })
    }

    /// Same synaptic kernel with the refractory feedback switched off.
    pub fn without_refractory(&self) -> Self {
        let mut k = self.clone();
        k.nu.iter_mut().for_each(|v| *v = 0.0);
        k
    }
}

/// Elementwise spike emission; a potential exactly at threshold fires.
pub fn heaviside_spike(u: &Array2<f64>, theta_u: f64) -> SpikeTensor {
    let (n_steps, n) = u.dim();
    let mut s = SpikeTensor::zeros(n_steps.max(1), n.max(1)).expect("non-empty");
    for ((t, i), &v) in u.indexed_iter() {
        if v - theta_u >= 0.0 {
            s.set(t, i, true);
        }
    }
    s
}

/// Causal synaptic drive `Σ_j W_ij (ε ⊛ s_j)[t]`, shape `[n_steps, n_out]`.
pub fn synaptic_drive(weights: &Array2<f64>, eps: &[f64], input: &SpikeTensor) -> Result<Array2<f64>> {
    let (n_out, n_in) = weights.dim();
    if input.n_neurons() != n_in {
        return Err(Error::Shape(format!(
            "input has {} neurons, layer fan-in is {n_in}",
            input.n_neurons()
        )));
    }
    let n_steps = input.n_steps();
    let wt = weights.t().as_standard_layout().into_owned();
    let wt = wt.as_slice().expect("standard layout");
    let mut drive = Array2::<f64>::zeros((n_steps, n_out));
    let d = drive.as_slice_mut().expect("standard layout");
    for (t0, j) in input.events() {
        let col = &wt[j * n_out..(j + 1) * n_out];
        for (k, &e) in eps.iter().enumerate() {
            let t = t0 + k + 1;
            if t >= n_steps {
                break;
            }
            for (u, &w) in d[t * n_out..(t + 1) * n_out].iter_mut().zip(col) {
                *u += e * w;
            }
        }
    }
    Ok(drive)
}

/// Runs one SRM layer over `input`, returning potentials `[n_steps, n_out]`
/// and the emitted spikes. The refractory term depends on the layer's own
/// output, so the time loop is sequential.
pub fn membrane_forward(
    weights: &Array2<f64>,
    kernel: &KernelBank,
    input: &SpikeTensor,
) -> Result<(Array2<f64>, SpikeTensor)> {
    let mut u = synaptic_drive(weights, &kernel.eps, input)?;
    let (n_steps, n_out) = u.dim();
    let mut out = SpikeTensor::zeros(n_steps, n_out)?.with_step_size(input.step_size());
    let p = u.as_slice_mut().expect("standard layout");
    for t in 0..n_steps {
        for i in 0..n_out {
            if p[t * n_out + i] - kernel.theta_u >= 0.0 {
                out.set(t, i, true);
                for (k, &v) in kernel.nu.iter().enumerate() {
                    let tt = t + k + 1;
                    if tt >= n_steps {
                        break;
                    }
                    p[tt * n_out + i] += v;
                }
            }
        }
    }
    Ok((u, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn epsilon_samples() {
        let e = sample_epsilon_kernel(1.0, 3).unwrap();
        assert_eq!(e[0], 1.0);
        assert!((e[1] - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((e[1] - 0.73576).abs() < 1e-5);
        assert_eq!(e.len(), 3);
    }

    #[test]
    fn nu_samples() {
        let n = sample_nu_kernel(2.0, 10.0, 4).unwrap();
        assert!((n[1] + 20.0).abs() < 1e-12);
        let n = sample_nu_kernel(1.0, 10.0, 4).unwrap();
        assert!((n[1] + 14.715).abs() < 1e-3);
        assert!(n.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn kernel_parameter_errors() {
        assert!(sample_epsilon_kernel(0.0, 4).is_err());
        assert!(sample_epsilon_kernel(1.0, 0).is_err());
        assert!(sample_nu_kernel(-1.0, 10.0, 4).is_err());
        assert!(sample_nu_kernel(1.0, 0.0, 4).is_err());
    }

    #[test]
    fn truncation_bound() {
        for tau in [1.0, 2.0, 5.0] {
            let l = truncation_length(tau, 10_000);
            assert!(alpha_shape(l as f64, tau) < KERNEL_TAIL);
            assert!(alpha_shape((l - 1) as f64, tau) >= KERNEL_TAIL);
            for t in l..l + 200 {
                assert!(alpha_shape(t as f64, tau) < KERNEL_TAIL);
            }
        }
        assert_eq!(truncation_length(1.0, 5), 5);
    }

    #[test]
    fn single_spike_then_refractory() {
        let k = KernelBank::new(1.0, 1.0, 10.0, 6).unwrap();
        let input = SpikeTensor::from_events(6, 1, [(1, 0)]).unwrap();
        let w = array![[12.0]];
        let (u, s) = membrane_forward(&w, &k, &input).unwrap();
        assert_eq!(u[[2, 0]], 12.0);
        assert!(s.get(2, 0));
        let expected = 12.0 * 2.0 * (-1.0f64).exp() - 20.0;
        assert!((u[[3, 0]] - expected).abs() < 1e-12);
        assert!((u[[3, 0]] + 11.171).abs() < 1e-3);
        assert!(!s.get(3, 0));
        assert_eq!(s.spike_times(0), vec![2]);
    }

    #[test]
    fn silent_input_and_zero_weights() {
        let k = KernelBank::new(1.0, 1.0, 10.0, 20).unwrap();
        let silent = SpikeTensor::zeros(20, 3).unwrap();
        let w = Array2::from_elem((2, 3), 50.0);
        let (u, s) = membrane_forward(&w, &k, &silent).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
        assert_eq!(s.count(), 0);

        let busy = SpikeTensor::from_events(20, 3, (0..20).map(|t| (t, t % 3))).unwrap();
        let (_, s) = membrane_forward(&Array2::zeros((2, 3)), &k, &busy).unwrap();
        assert_eq!(s.count(), 0);
    }

    #[test]
    fn fan_in_mismatch() {
        let k = KernelBank::new(1.0, 1.0, 10.0, 20).unwrap();
        let input = SpikeTensor::zeros(20, 4).unwrap();
        let err = membrane_forward(&Array2::zeros((2, 3)), &k, &input).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn heaviside_boundary() {
        let u = array![[10.0, 9.999, -5.0]];
        let s = heaviside_spike(&u, 10.0);
        assert_eq!(s.step(0), &[1, 0, 0]);
    }
}
