//! Per-neuron axonal delays: shifting, lattice quantization, projection and
//! the finite-difference delay gradient.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spike::SpikeTensor;

/// Delays of one layer's neurons, in simulation steps, each in `[0, theta_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayVector {
    pub values: Vec<f64>,
    /// Upper cap; `f64::INFINITY` for unbounded.
    pub theta_d: f64,
}

impl DelayVector {
    pub fn new(values: Vec<f64>, theta_d: f64) -> Self {
        Self { values, theta_d }
    }

    pub fn zeros(n: usize, theta_d: f64) -> Self {
        Self::new(vec![0.0; n], theta_d)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Uniform delay grid `{offset + k·step}` with an optional level count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayLattice {
    pub offset: f64,
    pub step: f64,
    /// Finite level count; the top level caps the quantized delay.
    pub n_levels: Option<u32>,
    pub learn_offset: bool,
}

impl DelayLattice {
    pub fn new(offset: f64, step: f64, n_levels: Option<u32>, learn_offset: bool) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::param("delta_d", format!("lattice step must be > 0, got {step}")));
        }
        if !(offset.is_finite() && offset >= 0.0) {
            return Err(Error::param("offset", format!("lattice offset must be >= 0, got {offset}")));
        }
        if n_levels == Some(0) {
            return Err(Error::param("n_levels", "level count must be >= 1"));
        }
        Ok(Self {
            offset,
            step,
            n_levels,
            learn_offset,
        })
    }

    /// Stored bits per delay: `ceil(log2(n_levels))`, `None` without a level count.
    pub fn storage_bits(&self) -> Option<u32> {
        self.n_levels.map(|n| (n as f64).log2().ceil() as u32)
    }

    /// Information content per delay: `log2(n_levels)`.
    pub fn information_bits(&self) -> Option<f64> {
        self.n_levels.map(|n| (n as f64).log2())
    }
}

/// Integer step shift for a (possibly fractional) delay.
pub fn step_shift(d: f64) -> Result<usize> {
    if !(d >= 0.0) {
        return Err(Error::Internal(format!("negative or NaN delay {d} reached the shifter")));
    }
    Ok(d.round() as usize)
}

/// Shifts each neuron's train later by its own integer number of steps.
/// Spikes pushed past the last step are dropped.
pub fn shift_spikes(spikes: &SpikeTensor, shifts: &[usize]) -> Result<SpikeTensor> {
    let n = spikes.n_neurons();
    if shifts.len() != n {
        return Err(Error::Shape(format!("{} shifts for {n} neurons", shifts.len())));
    }
    let n_steps = spikes.n_steps();
    let mut out = SpikeTensor::zeros(n_steps, n)?.with_step_size(spikes.step_size());
    for (t, i) in spikes.events() {
        let tt = t + shifts[i];
        if tt < n_steps {
            out.set(tt, i, true);
        }
    }
    Ok(out)
}

/// `out[t, i] = in[t − round(d_i), i]`; the horizon is unchanged.
pub fn apply_delays(spikes: &SpikeTensor, delays: &DelayVector) -> Result<SpikeTensor> {
    if delays.len() != spikes.n_neurons() {
        return Err(Error::Shape(format!(
            "{} delays for {} neurons",
            delays.len(),
            spikes.n_neurons()
        )));
    }
    let shifts = delays
        .values
        .iter()
        .map(|&d| step_shift(d))
        .collect::<Result<Vec<_>>>()?;
    shift_spikes(spikes, &shifts)
}

/// Round-down quantizer onto the lattice: the greatest grid point not exceeding `d`.
/// Values below the offset map to the offset; with a level count the top
/// level is a ceiling.
pub fn quantize_delay(d: f64, lattice: &DelayLattice) -> Result<f64> {
    if !(lattice.step > 0.0) {
        return Err(Error::param("delta_d", "lattice step must be > 0"));
    }
    let (off, step) = (lattice.offset, lattice.step);
    if d <= off {
        return Ok(off);
    }
    let grid = |k: f64| k * step + off;
    let mut k = ((d - off) / step).floor();
    // floor of the quotient can be off by one under rounding; settle on the grid value itself
    if grid(k) > d {
        k -= 1.0;
    } else if grid(k + 1.0) <= d {
        k += 1.0;
    }
    if let Some(n) = lattice.n_levels {
        k = k.min((n - 1) as f64);
    }
    Ok(grid(k.max(0.0)))
}

/// `Σ_m (s[m,i] − s[m−1,i]) · upstream[m,i]` with `s[−1] = 0`: the inner
/// product of the upstream signal with the backward difference of each
/// delayed train. The step size cancels between the sum weight and the
/// difference quotient.
pub fn delay_gradient(upstream: &Array2<f64>, delayed: &SpikeTensor) -> Result<Vec<f64>> {
    let (n_steps, n) = upstream.dim();
    if n_steps != delayed.n_steps() || n != delayed.n_neurons() {
        return Err(Error::Shape(format!(
            "upstream {n_steps}x{n} vs spikes {}x{}",
            delayed.n_steps(),
            delayed.n_neurons()
        )));
    }
    let mut grad = vec![0.0; n];
    let mut prev = vec![0u8; n];
    for m in 0..n_steps {
        let row = delayed.step(m);
        for i in 0..n {
            let diff = row[i] as f64 - prev[i] as f64;
            if diff != 0.0 {
                grad[i] += diff * upstream[[m, i]];
            }
        }
        prev.copy_from_slice(row);
    }
    Ok(grad)
}

/// Clamps every delay into `[0, theta_d]`.
pub fn project_delays(delays: &DelayVector) -> DelayVector {
    DelayVector {
        values: delays
            .values
            .iter()
            .map(|&d| d.max(0.0).min(delays.theta_d))
            .collect(),
        theta_d: delays.theta_d,
    }
}

/// Straight-through backward of the lattice quantizer: the latent delays get
/// the quantized-delay gradient unchanged and a learnable offset receives
/// its sum.
pub fn ste_delay_backward(grad_wrt_quantized: &[f64], learn_offset: bool) -> (Vec<f64>, f64) {
    let offset = if learn_offset {
        grad_wrt_quantized.iter().sum()
    } else {
        0.0
    };
    (grad_wrt_quantized.to_vec(), offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn train(n_steps: usize, times: &[usize]) -> SpikeTensor {
        SpikeTensor::from_events(n_steps, 1, times.iter().map(|&t| (t, 0))).unwrap()
    }

    #[test]
    fn shift_examples() {
        let s = train(12, &[2, 5]);
        let d = apply_delays(&s, &DelayVector::new(vec![3.0], f64::INFINITY)).unwrap();
        assert_eq!(d.spike_times(0), vec![5, 8]);
        let d0 = apply_delays(&s, &DelayVector::zeros(1, f64::INFINITY)).unwrap();
        assert_eq!(d0, s);
        let edge = train(12, &[11]);
        let gone = apply_delays(&edge, &DelayVector::new(vec![2.0], f64::INFINITY)).unwrap();
        assert_eq!(gone.count(), 0);
        assert_eq!(gone.n_steps(), 12);
    }

    #[test]
    fn fractional_delays_round() {
        let s = train(10, &[1]);
        let d = apply_delays(&s, &DelayVector::new(vec![2.6], f64::INFINITY)).unwrap();
        assert_eq!(d.spike_times(0), vec![4]);
    }

    #[test]
    fn negative_delay_is_internal_error() {
        let s = train(10, &[1]);
        let err = apply_delays(&s, &DelayVector::new(vec![-1.0], f64::INFINITY)).unwrap_err();
        assert!(matches!(err, Error::Internal(_)));
    }

    #[test]
    fn quantizer_examples() {
        let l = |off, step| DelayLattice::new(off, step, None, false).unwrap();
        assert_eq!(quantize_delay(7.0, &l(0.0, 3.0)).unwrap(), 6.0);
        assert_eq!(quantize_delay(7.0, &l(1.0, 3.0)).unwrap(), 7.0);
        assert_eq!(quantize_delay(0.5, &l(0.0, 1.0)).unwrap(), 0.0);
        assert_eq!(quantize_delay(0.2, &l(1.0, 3.0)).unwrap(), 1.0);
    }

    #[test]
    fn quantizer_level_cap() {
        let l = DelayLattice::new(0.0, 15.0, Some(5), false).unwrap();
        assert_eq!(quantize_delay(59.0, &l).unwrap(), 45.0);
        assert_eq!(quantize_delay(200.0, &l).unwrap(), 60.0);
        assert_eq!(l.storage_bits(), Some(3));
        assert!((l.information_bits().unwrap() - 5f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn lattice_rejects_bad_step() {
        assert!(DelayLattice::new(0.0, 0.0, None, false).is_err());
        assert!(DelayLattice::new(0.0, -1.0, None, false).is_err());
        let bad = DelayLattice {
            offset: 0.0,
            step: 0.0,
            n_levels: None,
            learn_offset: false,
        };
        assert!(quantize_delay(1.0, &bad).is_err());
    }

    #[test]
    fn finite_difference_gradient() {
        let s = train(3, &[1]);
        let up = array![[0.5], [1.0], [0.2]];
        let g = delay_gradient(&up, &s).unwrap();
        assert!((g[0] - 0.8).abs() < 1e-15);

        let silent = train(3, &[]);
        assert_eq!(delay_gradient(&up, &silent).unwrap(), vec![0.0]);

        // two rises and two falls under a constant upstream telescope away
        let s = train(8, &[1, 2, 5]);
        let flat = Array2::from_elem((8, 1), 0.7);
        assert_eq!(delay_gradient(&flat, &s).unwrap(), vec![0.0]);
    }

    #[test]
    fn projection() {
        let p = project_delays(&DelayVector::new(vec![-0.3, 2.0], f64::INFINITY));
        assert_eq!(p.values, vec![0.0, 2.0]);
        let p = project_delays(&DelayVector::new(vec![5.0], 4.0));
        assert_eq!(p.values, vec![4.0]);
    }

    #[test]
    fn ste_backward() {
        let (g, off) = ste_delay_backward(&[0.1, -0.2], true);
        assert_eq!(g, vec![0.1, -0.2]);
        assert!((off + 0.1).abs() < 1e-15);
        let (_, off) = ste_delay_backward(&[0.1, -0.2], false);
        assert_eq!(off, 0.0);
    }
}
