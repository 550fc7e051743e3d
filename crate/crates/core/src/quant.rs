//! Weight quantization strategies.
//!
//! Every scheme implements [`WeightQuantizer`] and is registered by name in a
//! [`QuantizerRegistry`]. Layers carry a serializable [`QuantSpec`] naming
//! their scheme; the strategy object is looked up when the forward pass
//! needs it. Quantization is "fake": latent weights stay full precision and
//! the quantized copy is rebuilt on every forward pass.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiplier on mean |W| for the ternary dead zone.
pub const TERNARY_THRESHOLD_FACTOR: f64 = 0.7;

/// Smallest per-tensor scale used by the signed-weight normalization.
pub const NORM_FLOOR: f64 = 1e-8;

/// Lower bound kept on learnable ternary scales after each update.
pub const MIN_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Scales {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

/// Gradients produced by a quantizer's backward rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantGrads {
    pub latent: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

pub trait WeightQuantizer: Send + Sync + fmt::Debug {
    /// Registry name that rebuilds this quantizer, e.g. `m4`.
    fn name(&self) -> String;

    /// Bits charged per weight in footprint accounting.
    fn effective_bits(&self) -> f64;

    fn is_ternary(&self) -> bool {
        false
    }

    fn learns_scales(&self) -> bool {
        false
    }

    /// Scales to start from for this tensor.
    fn initial_scales(&self, _latent: &[f64]) -> Scales {
        Scales::default()
    }

    fn quantize(&self, latent: &[f64], scales: Scales) -> Vec<f64>;

    /// Straight-through backward: latent weights receive `grad_q` unchanged.
    fn backward(&self, grad_q: &[f64], _latent: &[f64]) -> QuantGrads {
        QuantGrads {
            latent: ste_weight_backward(grad_q),
            alpha: 0.0,
            beta: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FullPrecision;

impl WeightQuantizer for FullPrecision {
    fn name(&self) -> String {
        "full".into()
    }

    fn effective_bits(&self) -> f64 {
        32.0
    }

    fn quantize(&self, latent: &[f64], _scales: Scales) -> Vec<f64> {
        latent.to_vec()
    }
}

/// DoReFa-style uniform quantizer applied through the symmetric max-abs map.
#[derive(Debug, Clone, Copy)]
pub struct UniformBits {
    pub bits: u32,
}

impl WeightQuantizer for UniformBits {
    fn name(&self) -> String {
        format!("m{}", self.bits)
    }

    fn effective_bits(&self) -> f64 {
        self.bits as f64
    }

    fn quantize(&self, latent: &[f64], _scales: Scales) -> Vec<f64> {
        let (norm, c) = normalize_weights(latent);
        if c == 0.0 {
            return vec![0.0; latent.len()];
        }
        norm.iter()
            .map(|&w| quantize_uniform(w, self.bits) * c)
            .collect()
    }
}

/// Ternary `{α, 0, −β}` with a `0.7·mean|W|` dead zone. With `learnable`
/// the scales are trained; otherwise they stay at their initial values.
#[derive(Debug, Clone, Copy)]
pub struct Ternary {
    pub learnable: bool,
}

impl WeightQuantizer for Ternary {
    fn name(&self) -> String {
        if self.learnable {
            "ternary-learn".into()
        } else {
            "ternary".into()
        }
    }

    fn effective_bits(&self) -> f64 {
        3f64.log2()
    }

    fn is_ternary(&self) -> bool {
        true
    }

    fn learns_scales(&self) -> bool {
        self.learnable
    }

    /// Mean magnitude of the weights outside the dead zone, per sign.
    fn initial_scales(&self, latent: &[f64]) -> Scales {
        let delta = ternary_threshold(latent);
        let mean_of = |pred: &dyn Fn(f64) -> bool| {
            let (s, n) = latent
                .iter()
                .filter(|&&w| pred(w))
                .fold((0.0, 0usize), |(s, n), &w| (s + w.abs(), n + 1));
            if n == 0 {
                None
            } else {
                Some(s / n as f64)
            }
        };
        let pos = mean_of(&|w| w > delta);
        let neg = mean_of(&|w| w < -delta);
        let fallback = pos.or(neg).unwrap_or(1.0);
        Scales {
            alpha: pos.unwrap_or(fallback).max(MIN_SCALE),
            beta: neg.unwrap_or(fallback).max(MIN_SCALE),
        }
    }

    fn quantize(&self, latent: &[f64], scales: Scales) -> Vec<f64> {
        let delta = ternary_threshold(latent);
        quantize_ternary(latent, delta, scales.alpha, scales.beta)
    }

    fn backward(&self, grad_q: &[f64], latent: &[f64]) -> QuantGrads {
        let (alpha, beta) = if self.learnable {
            ternary_scale_gradients(grad_q, latent, ternary_threshold(latent))
        } else {
            (0.0, 0.0)
        };
        QuantGrads {
            latent: ste_weight_backward(grad_q),
            alpha,
            beta,
        }
    }
}

type Factory = fn(&str) -> Result<Box<dyn WeightQuantizer>>;

/// Name → constructor table for weight quantizers.
///
/// A scheme string is either a registered name (`ternary`) or a registered
/// family prefix followed by a numeric argument (`m4`).
pub struct QuantizerRegistry {
    entries: BTreeMap<&'static str, Factory>,
}

impl QuantizerRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("full", |_| Ok(Box::new(FullPrecision)));
        r.register("m", |arg| {
            let bits: u32 = arg
                .parse()
                .map_err(|_| Error::param("wq", format!("bad bit width `{arg}`")))?;
            if !(1..=31).contains(&bits) {
                return Err(Error::param("wq", format!("bit width must be in 1..=31, got {bits}")));
            }
            Ok(Box::new(UniformBits { bits }))
        });
        r.register("ternary", |_| Ok(Box::new(Ternary { learnable: false })));
        r.register("ternary-learn", |_| Ok(Box::new(Ternary { learnable: true })));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn build(&self, scheme: &str) -> Result<Box<dyn WeightQuantizer>> {
        if let Some(f) = self.entries.get(scheme) {
            return f("");
        }
        let split = scheme.find(|c: char| c.is_ascii_digit()).unwrap_or(scheme.len());
        let (family, arg) = scheme.split_at(split);
        match self.entries.get(family) {
            Some(f) if !arg.is_empty() => f(arg),
            _ => Err(Error::param(
                "wq",
                format!(
                    "unknown weight quantizer `{scheme}` (known: {})",
                    self.names().collect::<Vec<_>>().join(", ")
                ),
            )),
        }
    }
}

pub fn registry() -> &'static QuantizerRegistry {
    static REGISTRY: OnceLock<QuantizerRegistry> = OnceLock::new();
    REGISTRY.get_or_init(QuantizerRegistry::with_builtins)
}

/// Per-layer weight quantization setting: scheme name plus current scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub scheme: String,
    pub alpha: f64,
    pub beta: f64,
}

impl QuantSpec {
    pub fn parse(scheme: &str) -> Result<Self> {
        let q = registry().build(scheme)?;
        Ok(Self {
            scheme: q.name(),
            alpha: 1.0,
            beta: 1.0,
        })
    }

    pub fn full() -> Self {
        Self {
            scheme: "full".into(),
            alpha: 1.0,
            beta: 1.0,
        }
    }

    pub fn quantizer(&self) -> Result<Box<dyn WeightQuantizer>> {
        registry().build(&self.scheme)
    }

    pub fn scales(&self) -> Scales {
        Scales {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn set_scales(&mut self, s: Scales) {
        self.alpha = s.alpha;
        self.beta = s.beta;
    }

    pub fn effective_bits(&self) -> Result<f64> {
        Ok(self.quantizer()?.effective_bits())
    }
}

/// `W_o = round((2^m − 1)·w)`, `W_q = 2·W_o/(2^m − 1) − 1`. Rounding is half
/// away from zero. Inputs outside `[0, 1]` are clamped.
pub fn quantize_uniform(w_norm: f64, bits: u32) -> f64 {
    let w = if (0.0..=1.0).contains(&w_norm) {
        w_norm
    } else {
        log::debug!("quantize_uniform: clamping {w_norm} into [0, 1]");
        w_norm.clamp(0.0, 1.0)
    };
    let levels = ((1u64 << bits) - 1) as f64;
    let w_o = (levels * w).round();
    2.0 * w_o / levels - 1.0
}

/// Symmetric max-abs map of signed weights onto `[0, 1]`. Returns the mapped
/// values and the scale `c`; `c = 0` flags an all-zero tensor.
pub fn normalize_weights(w: &[f64]) -> (Vec<f64>, f64) {
    let max = w.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if max == 0.0 {
        return (vec![0.5; w.len()], 0.0);
    }
    let c = max.max(NORM_FLOOR);
    let norm = w.iter().map(|&v| (v.clamp(-c, c) / c + 1.0) / 2.0).collect();
    (norm, c)
}

/// `0.7 · mean |W|`.
pub fn ternary_threshold(w: &[f64]) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    TERNARY_THRESHOLD_FACTOR * w.iter().map(|v| v.abs()).sum::<f64>() / w.len() as f64
}

/// `α` above `δ_w`, `−β` below `−δ_w`, zero inside the (closed) dead zone.
pub fn quantize_ternary(w: &[f64], delta_w: f64, alpha: f64, beta: f64) -> Vec<f64> {
    w.iter()
        .map(|&v| {
            if v > delta_w {
                alpha
            } else if v < -delta_w {
                -beta
            } else {
                0.0
            }
        })
        .collect()
}

/// `(Σ_{W>δ} g, −Σ_{W<−δ} g)`.
pub fn ternary_scale_gradients(upstream: &[f64], w: &[f64], delta_w: f64) -> (f64, f64) {
    let mut d_alpha = 0.0;
    let mut d_beta = 0.0;
    for (&g, &v) in upstream.iter().zip(w) {
        if v > delta_w {
            d_alpha += g;
        } else if v < -delta_w {
            d_beta -= g;
        }
    }
    (d_alpha, d_beta)
}

/// Straight-through estimator: identity onto the latent weights.
pub fn ste_weight_backward(grad_q: &[f64]) -> Vec<f64> {
    grad_q.to_vec()
}
