use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spike::SpikeTensor;

/// Exponential surrogate for the derivative of the spike nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Surrogate {
    pub tau_scale: f64,
    pub tau_theta: f64,
}

impl Default for Surrogate {
    fn default() -> Self {
        Self {
            tau_scale: 0.1,
            tau_theta: 1.0,
        }
    }
}

impl Surrogate {
    #[inline]
    pub fn grad(&self, u: f64, theta_u: f64) -> f64 {
        surrogate_spike_grad(u, theta_u, self.tau_scale, self.tau_theta)
    }
}

/// `τ_scale · exp(−|u − θ_u| / τ_θ)`.
#[inline]
pub fn surrogate_spike_grad(u: f64, theta_u: f64, tau_scale: f64, tau_theta: f64) -> f64 {
    tau_scale * (-(u - theta_u).abs() / tau_theta).exp()
}

/// How count windows of length `W` tile the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    /// One window ending at every step; windows that start before step 0 are
    /// truncated. With `W = T` the count is cumulative.
    #[default]
    Sliding,
    /// Disjoint windows aligned to end at the final step.
    Tiled,
}

/// Count windows `[start, end)` of length `window`. The last entry is always
/// the window ending at the final step.
pub fn count_windows(n_steps: usize, window: usize, mode: CountMode) -> Vec<(usize, usize)> {
    let window = window.clamp(1, n_steps.max(1));
    match mode {
        CountMode::Sliding => (1..=n_steps).map(|t| (t.saturating_sub(window), t)).collect(),
        CountMode::Tiled => {
            let n = n_steps / window;
            (0..n)
                .rev()
                .map(|w| (n_steps - (w + 1) * window, n_steps - w * window))
                .collect()
        }
    }
}

/// Cross-entropy over count-derived probabilities for one window.
///
/// `p_i = (c_i + s)/(Σ_j c_j + K·s)` with smoothing `s ≥ 0`; an all-zero
/// window gives uniform probabilities. Returns the loss and `∂loss/∂c`.
pub fn spikemax_from_counts(counts: &[f64], label: usize, smoothing: f64) -> Result<(f64, Vec<f64>)> {
    let k = counts.len();
    if label >= k {
        return Err(Error::Input(format!("label {label} out of range for {k} classes")));
    }
    let total: f64 = counts.iter().sum::<f64>() + k as f64 * smoothing;
    if total <= 0.0 {
        // unsmoothed silent window: uniform p, no usable gradient
        return Ok(((k as f64).ln(), vec![0.0; k]));
    }
    let target = counts[label] + smoothing;
    if target <= 0.0 {
        return Err(Error::Numerical {
            epoch: 0,
            reason: "target class has zero probability; use a positive count smoothing".into(),
        });
    }
    let loss = -(target / total).ln();
    let grad = (0..k)
        .map(|i| 1.0 / total - if i == label { 1.0 / target } else { 0.0 })
        .collect();
    Ok((loss, grad))
}

/// Spikemax output for a readout raster.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikemaxOutput {
    pub loss: f64,
    pub windows: Vec<(usize, usize)>,
    /// `∂loss/∂c` per window, already divided by the window count.
    pub grad_counts: Vec<Vec<f64>>,
}

impl SpikemaxOutput {
    /// Spreads the count gradient onto every step of its window, giving the
    /// gradient with respect to the readout spikes.
    pub fn spike_gradient(&self, n_steps: usize, n_classes: usize) -> Array2<f64> {
        // difference array: +gc at the window start, -gc at its end
        let mut diff = Array2::<f64>::zeros((n_steps + 1, n_classes));
        for (&(a, b), gc) in self.windows.iter().zip(&self.grad_counts) {
            for (i, &v) in gc.iter().enumerate() {
                diff[[a, i]] += v;
                diff[[b, i]] -= v;
            }
        }
        let mut g = Array2::zeros((n_steps, n_classes));
        let mut acc = vec![0.0; n_classes];
        for t in 0..n_steps {
            for i in 0..n_classes {
                acc[i] += diff[[t, i]];
                g[[t, i]] = acc[i];
            }
        }
        g
    }
}

/// Mean over count windows of the Spikemax cross-entropy.
pub fn spikemax_loss(
    readout: &SpikeTensor,
    label: usize,
    window: usize,
    mode: CountMode,
    smoothing: f64,
) -> Result<SpikemaxOutput> {
    let k = readout.n_neurons();
    if label >= k {
        return Err(Error::Input(format!("label {label} out of range for {k} classes")));
    }
    let windows = count_windows(readout.n_steps(), window, mode);
    let n = windows.len() as f64;
    let mut loss = 0.0;
    let mut grad_counts = Vec::with_capacity(windows.len());
    for &(a, b) in &windows {
        let counts: Vec<f64> = readout.counts_in(a, b).into_iter().map(|c| c as f64).collect();
        let (l, g) = spikemax_from_counts(&counts, label, smoothing)?;
        loss += l / n;
        grad_counts.push(g.into_iter().map(|v| v / n).collect());
    }
    Ok(SpikemaxOutput {
        loss,
        windows,
        grad_counts,
    })
}

/// Index of the largest count, lowest index on ties.
pub fn predict(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_values() {
        assert_eq!(surrogate_spike_grad(10.0, 10.0, 0.1, 1.0), 0.1);
        let e = 0.1 * (-1.0f64).exp();
        assert!((surrogate_spike_grad(11.0, 10.0, 0.1, 1.0) - e).abs() < 1e-15);
        assert!((surrogate_spike_grad(9.0, 10.0, 0.1, 1.0) - 0.03679).abs() < 1e-5);
        assert_eq!(surrogate_spike_grad(12.5, 10.0, 0.1, 1.0), surrogate_spike_grad(7.5, 10.0, 0.1, 1.0));
    }

    #[test]
    fn spikemax_examples() {
        let (l, _) = spikemax_from_counts(&[2.0, 1.0, 1.0], 0, 0.0).unwrap();
        assert!((l - 0.5f64.ln().abs()).abs() < 1e-15);
        let (l, _) = spikemax_from_counts(&[4.0, 0.0, 0.0], 0, 0.0).unwrap();
        assert_eq!(l, 0.0);
        let (l, _) = spikemax_from_counts(&[0.0, 0.0, 0.0], 1, 0.0).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);
        assert!(spikemax_from_counts(&[1.0, 1.0], 2, 0.0).is_err());
    }

    #[test]
    fn spikemax_smoothing_is_small() {
        let (l, _) = spikemax_from_counts(&[2.0, 1.0, 1.0], 0, 1e-3).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-3);
        let (l, g) = spikemax_from_counts(&[0.0, 3.0, 0.0], 0, 1e-3).unwrap();
        assert!(l.is_finite() && g[0] < 0.0 && g[1] > 0.0);
    }

    #[test]
    fn windows_cover_tail() {
        assert_eq!(count_windows(10, 10, CountMode::Tiled), vec![(0, 10)]);
        assert_eq!(count_windows(10, 4, CountMode::Tiled), vec![(2, 6), (6, 10)]);
        assert_eq!(count_windows(3, 0, CountMode::Tiled), vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(count_windows(4, 4, CountMode::Sliding), vec![(0, 1), (0, 2), (0, 3), (0, 4)]);
        assert_eq!(count_windows(4, 2, CountMode::Sliding), vec![(0, 1), (0, 2), (1, 3), (2, 4)]);
    }

    #[test]
    fn tie_break_lowest() {
        assert_eq!(predict(&[0, 0, 0]), 0);
        assert_eq!(predict(&[1, 3, 3]), 1);
        assert_eq!(predict(&[0, 0, 2]), 2);
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-8)
    }

    #[test]
    fn count_gradient_matches_central_differences() {
        let counts = [3.0, 0.0, 5.0, 1.0];
        let h = 1e-6;
        for label in 0..4 {
            let (_, g) = spikemax_from_counts(&counts, label, 1e-3).unwrap();
            for i in 0..4 {
                let mut up = counts;
                let mut dn = counts;
                up[i] += h;
                dn[i] -= h;
                let fd = (spikemax_from_counts(&up, label, 1e-3).unwrap().0
                    - spikemax_from_counts(&dn, label, 1e-3).unwrap().0)
                    / (2.0 * h);
                assert!(rel(g[i], fd) < 1e-5, "label {label} class {i}: {} vs {fd}", g[i]);
            }
        }
    }

    /// Window-averaged cross-entropy of a real-valued readout.
    fn relaxed_loss(r: &Array2<f64>, label: usize, windows: &[(usize, usize)], s: f64) -> f64 {
        let k = r.ncols();
        let mut total = 0.0;
        for &(a, b) in windows {
            let c: Vec<f64> = (0..k).map(|i| (a..b).map(|t| r[[t, i]]).sum()).collect();
            let z: f64 = c.iter().sum::<f64>() + k as f64 * s;
            total -= ((c[label] + s) / z).ln();
        }
        total / windows.len() as f64
    }

    #[test]
    fn spike_gradient_matches_central_differences() {
        let (steps, k) = (9, 3);
        let raster = SpikeTensor::from_events(steps, k, [(0, 1), (2, 0), (3, 2), (5, 0), (7, 1), (8, 0)]).unwrap();
        let r = Array2::from_shape_fn((steps, k), |(t, i)| raster.get(t, i) as u8 as f64);
        for mode in [CountMode::Sliding, CountMode::Tiled] {
            let out = spikemax_loss(&raster, 2, 3, mode, 1e-3).unwrap();
            assert!((relaxed_loss(&r, 2, &out.windows, 1e-3) - out.loss).abs() < 1e-12);
            let g = out.spike_gradient(steps, k);
            let h = 1e-6;
            for t in 0..steps {
                for i in 0..k {
                    let mut up = r.clone();
                    let mut dn = r.clone();
                    up[[t, i]] += h;
                    dn[[t, i]] -= h;
                    let fd = (relaxed_loss(&up, 2, &out.windows, 1e-3) - relaxed_loss(&dn, 2, &out.windows, 1e-3)) / (2.0 * h);
                    assert!(rel(g[[t, i]], fd) < 1e-5 || (g[[t, i]] - fd).abs() < 1e-9, "{mode:?} ({t},{i})");
                }
            }
        }
    }
}
