//! First-order optimizers, selected by name.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

pub trait Optimizer: Send + fmt::Debug {
    fn name(&self) -> &'static str;

    /// In-place descent step on one parameter tensor. `slot` identifies the
    /// tensor across calls so per-tensor state can be kept.
    fn step(&mut self, slot: usize, params: &mut [f64], grads: &[f64], lr: f64);

    fn box_clone(&self) -> Box<dyn Optimizer>;
}

impl Clone for Box<dyn Optimizer> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sgd;

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, _slot: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        for (p, g) in params.iter_mut().zip(grads) {
            *p -= lr * g;
        }
    }

    fn box_clone(&self) -> Box<dyn Optimizer> {
        Box::new(self.clone())
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: BTreeMap<usize, Moments>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: BTreeMap::new(),
        }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, slot: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        let st = self.state.entry(slot).or_insert_with(|| Moments {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            t: 0,
        });
        st.t += 1;
        let c1 = 1.0 - self.beta1.powi(st.t);
        let c2 = 1.0 - self.beta2.powi(st.t);
        for (k, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            st.m[k] = self.beta1 * st.m[k] + (1.0 - self.beta1) * g;
            st.v[k] = self.beta2 * st.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = st.m[k] / c1;
            let v_hat = st.v[k] / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    fn box_clone(&self) -> Box<dyn Optimizer> {
        Box::new(self.clone())
    }
}

type Factory = fn() -> Box<dyn Optimizer>;

pub struct OptimizerRegistry {
    entries: BTreeMap<&'static str, Factory>,
}

impl OptimizerRegistry {
    pub fn with_builtins() -> Self {
        let mut entries: BTreeMap<&'static str, Factory> = BTreeMap::new();
        entries.insert("adam", || Box::new(Adam::default()));
        entries.insert("sgd", || Box::new(Sgd));
        Self { entries }
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.entries.insert(name, factory);
    }

    pub fn build(&self, name: &str) -> Result<Box<dyn Optimizer>> {
        self.entries.get(name).map(|f| f()).ok_or_else(|| {
            Error::param(
                "optimizer",
                format!(
                    "unknown optimizer `{name}` (known: {})",
                    self.entries.keys().copied().collect::<Vec<_>>().join(", ")
                ),
            )
        })
    }
}

pub fn build_optimizer(name: &str) -> Result<Box<dyn Optimizer>> {
    OptimizerRegistry::with_builtins().build(name)
}
