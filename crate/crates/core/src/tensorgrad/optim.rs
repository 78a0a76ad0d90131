use std::collections::HashMap;

use super::{Graph, NodeId, Tensor, TensorError};

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A trainable tensor with its pending gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    m1: Tensor,
    m2: Tensor,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let m1 = Tensor::zeros(value.shape());
        let m2 = Tensor::zeros(value.shape());
        Self {
            value,
            grad: None,
            m1,
            m2,
        }
    }
}

/// Ordered, named collection of parameters sharing one Adam step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Param)>,
    step: u64,
}

/// Graph nodes created for each parameter of a [`ParamSet`] in one step.
#[derive(Debug, Clone)]
pub struct Bound {
    ids: HashMap<String, NodeId>,
    order: Vec<NodeId>,
}

impl Bound {
    pub fn node(&self, name: &str) -> Result<NodeId, TensorError> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.order
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), TensorError> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(TensorError::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.entries.push((name, Param::new(value)));
        Ok(())
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, TensorError> {
        self.index_of(name)
            .map(|i| &self.entries[i].1.value)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, TensorError> {
        match self.index_of(name) {
            Some(i) => Ok(&mut self.entries[i].1.value),
            None => Err(TensorError::UnknownParam(name.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(n, p)| (n.as_str(), p))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, p)| p.value.numel()).sum()
    }

    /// Creates a differentiable leaf for every parameter.
    pub fn bind(&self, graph: &mut Graph) -> Result<Bound, TensorError> {
        let mut ids = HashMap::with_capacity(self.entries.len());
        let mut order = Vec::with_capacity(self.entries.len());
        for (name, p) in &self.entries {
            let id = graph.param(p.value.clone())?;
            ids.insert(name.clone(), id);
            order.push(id);
        }
        Ok(Bound { ids, order })
    }

    /// Copies gradients from a graph after `backward`. Parameters the loss
    /// did not reach keep no gradient.
    pub fn collect_grads(&mut self, graph: &Graph, bound: &Bound) {
        for ((_, p), id) in self.entries.iter_mut().zip(&bound.order) {
            p.grad = graph.grad(*id).cloned();
        }
    }

    pub fn clear_grads(&mut self) {
        for (_, p) in &mut self.entries {
            p.grad = None;
        }
    }

    /// One bias-corrected Adam update; gradients are cleared afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), TensorError> {
        if let Some((name, _)) = self.entries.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(TensorError::MissingGradient(name.clone()));
        }
        for (name, p) in &self.entries {
            p.grad.as_ref().expect("checked above").ensure_finite("adam_step").map_err(|_| {
                TensorError::InvalidArgument(format!("adam_step: non-finite gradient for `{name}`"))
            })?;
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (_, p) in &mut self.entries {
            let grad = p.grad.take().expect("checked above");
            let values = p.value.data_mut();
            let m1 = p.m1.data_mut();
            let m2 = p.m2.data_mut();
            for (((v, g), a), b) in values.iter_mut().zip(grad.data()).zip(m1.iter_mut()).zip(m2.iter_mut()) {
                *a = cfg.beta1 * *a + (1.0 - cfg.beta1) * g;
                *b = cfg.beta2 * *b + (1.0 - cfg.beta2) * g * g;
                let mhat = *a / c1;
                let vhat = *b / c2;
                *v -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Rounds every value through `f32`.
    pub fn round_to_f32(&mut self) {
        for (_, p) in &mut self.entries {
            p.value.round_to_f32();
        }
    }
}
