//! Trainable parameters, persistent buffers, and the store that owns them.

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::tensor::{Scalar, Tensor};

static NEXT_PARAM_ID: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_PARAM_ID.fetch_add(1, std::sync::atomic::Ordering::Relaxed)
}

/// A named trainable tensor. The optimizer replaces its value in place.
#[derive(Debug)]
pub struct Parameter<S> {
    id: u64,
    name: String,
    value: RefCell<Tensor<S>>,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(name: impl Into<String>, value: Tensor<S>) -> Rc<Self> {
        Rc::new(Parameter { id: fresh_id(), name: name.into(), value: RefCell::new(value) })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> Tensor<S> {
        self.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value.borrow().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value.borrow().numel()
    }

    pub fn set(&self, value: Tensor<S>) {
        assert_eq!(
            self.value.borrow().shape(),
            value.shape(),
            "parameter {}: shape change not allowed",
            self.name
        );
        *self.value.borrow_mut() = value;
    }
}

/// A named non-trainable tensor persisted in checkpoints (e.g. running stats).
#[derive(Debug)]
pub struct Buffer<S> {
    name: String,
    value: RefCell<Tensor<S>>,
}

impl<S: Scalar> Buffer<S> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> Tensor<S> {
        self.value.borrow().clone()
    }

    pub fn set(&self, value: Tensor<S>) {
        assert_eq!(
            self.value.borrow().shape(),
            value.shape(),
            "buffer {}: shape change not allowed",
            self.name
        );
        *self.value.borrow_mut() = value;
    }
}

/// Owns every parameter and buffer of a model in registration order.
///
/// Registration order is the canonical order for optimizer state and for
/// checkpoint serialization, so it must be deterministic: layers register
/// their parameters in construction order.
#[derive(Debug, Default)]
pub struct ParamStore<S> {
    params: Vec<Rc<Parameter<S>>>,
    buffers: Vec<Rc<Buffer<S>>>,
    names: HashSet<String>,
    frozen: Cell<bool>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashSet::new(),
            frozen: Cell::new(false),
        }
    }

    fn claim_name(&mut self, name: &str) {
        assert!(!self.frozen.get(), "param store is frozen");
        assert!(self.names.insert(name.to_string()), "duplicate parameter name: {name}");
    }

    pub fn add_param(&mut self, name: &str, value: Tensor<S>) -> Rc<Parameter<S>> {
        self.claim_name(name);
        let p = Parameter::new(name, value);
        self.params.push(p.clone());
        p
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<S>) -> Rc<Buffer<S>> {
        self.claim_name(name);
        let b = Rc::new(Buffer { name: name.to_string(), value: RefCell::new(value) });
        self.buffers.push(b.clone());
        b
    }

    /// Prevent further registration; models call this once fully built.
    pub fn freeze(&self) {
        self.frozen.set(true);
    }

    pub fn params(&self) -> &[Rc<Parameter<S>>] {
        &self.params
    }

    pub fn buffers(&self) -> &[Rc<Buffer<S>>] {
        &self.buffers
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Copy of all parameter and buffer values, in registration order.
    pub fn snapshot(&self) -> Vec<Tensor<S>> {
        self.params
            .iter()
            .map(|p| p.value())
            .chain(self.buffers.iter().map(|b| b.value()))
            .collect()
    }

    /// Restore a snapshot taken from an identically-built store.
    pub fn restore(&self, snapshot: &[Tensor<S>]) {
        assert_eq!(snapshot.len(), self.params.len() + self.buffers.len(), "snapshot length mismatch");
        for (p, t) in self.params.iter().zip(snapshot) {
            p.set(t.clone());
        }
        for (b, t) in self.buffers.iter().zip(&snapshot[self.params.len()..]) {
            b.set(t.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_order_is_stable() {
        let mut store: ParamStore<f32> = ParamStore::new();
        store.add_param("a", Tensor::zeros(&[2]));
        store.add_param("b", Tensor::zeros(&[3]));
        store.add_buffer("c", Tensor::zeros(&[1]));
        let names: Vec<_> = store.params().iter().map(|p| p.name().to_string()).collect();
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(store.num_scalars(), 5);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut store: ParamStore<f32> = ParamStore::new();
        store.add_param("w", Tensor::zeros(&[1]));
        store.add_param("w", Tensor::zeros(&[1]));
    }

    #[test]
    fn snapshot_round_trip() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let p = store.add_param("w", Tensor::from_vec(&[2], vec![1.0, 2.0]));
        let snap = store.snapshot();
        p.set(Tensor::from_vec(&[2], vec![9.0, 9.0]));
        store.restore(&snap);
        assert_eq!(p.value().data(), &[1.0, 2.0]);
    }
}
