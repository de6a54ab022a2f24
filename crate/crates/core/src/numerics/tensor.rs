//! Dense row-major f64 tensors with an optional gradient buffer.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::NumericsError;

/// A dense tensor. `data` is row-major; `grad`, when present, has the same
/// length as `data`. Scalars use an empty shape and a single element.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

/// Shared handle used to register a tensor as a graph leaf and keep access
/// to its data and accumulated gradient afterwards.
pub type TensorRef = Rc<RefCell<Tensor>>;

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(NumericsError::ShapeMismatch(format!(
                "data length {} does not match shape {:?} (expected {})",
                data.len(),
                shape,
                expect
            )));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![x],
            requires_grad: false,
            grad: None,
        }
    }

    /// Seeded N(0, std^2) initialization.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("valid std");
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Rows of a rank-2 tensor; rank-1 tensors count as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            1 => 1,
            _ => panic!("rows() on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => panic!("cols() on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.data.len());
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|x| *x = 0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn into_ref(self) -> TensorRef {
        Rc::new(RefCell::new(self))
    }
}

/// A named parameter bound to a shared tensor.
#[derive(Clone)]
pub struct Param {
    pub name: String,
    pub tensor: TensorRef,
}

/// Insertion-ordered set of named parameters. The order is the checkpoint
/// record order, so it must be stable across runs.
#[derive(Default)]
pub struct ParamSet {
    items: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under `name` and returns the shared handle.
    /// Panics on duplicate names: parameter names are compile-time choices.
    pub fn insert(&mut self, name: &str, tensor: Tensor) -> TensorRef {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let handle = tensor.into_ref();
        self.index.insert(name.to_string(), self.items.len());
        self.items.push(Param {
            name: name.to_string(),
            tensor: Rc::clone(&handle),
        });
        handle
    }

    pub fn get(&self, name: &str) -> Option<TensorRef> {
        self.index.get(name).map(|&i| Rc::clone(&self.items[i].tensor))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn trainable(&self) -> Vec<Param> {
        self.items
            .iter()
            .filter(|p| p.tensor.borrow().requires_grad)
            .cloned()
            .collect()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.items
            .iter()
            .filter(|p| p.tensor.borrow().requires_grad)
            .map(|p| p.name.clone())
            .collect()
    }

    /// Total number of scalar elements across all parameters.
    pub fn total_elems(&self) -> usize {
        self.items.iter().map(|p| p.tensor.borrow().len()).sum()
    }

    pub fn trainable_elems(&self) -> usize {
        self.items
            .iter()
            .filter(|p| p.tensor.borrow().requires_grad)
            .map(|p| p.tensor.borrow().len())
            .sum()
    }

    /// Resets gradients of all trainable parameters to zero.
    pub fn zero_grads(&self) {
        for p in &self.items {
            let mut t = p.tensor.borrow_mut();
            if t.requires_grad {
                t.zero_grad();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_mismatch_rejected() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "message should carry the shape: {msg}");
    }

    #[test]
    fn grad_accumulates_across_calls() {
        let mut t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad();
        t.accumulate_grad(&[0.5, 0.5]);
        t.accumulate_grad(&[0.5, 1.0]);
        assert_eq!(t.grad.as_deref(), Some(&[1.0, 1.5][..]));
        t.zero_grad();
        assert_eq!(t.grad.as_deref(), Some(&[0.0, 0.0][..]));
    }

    #[test]
    fn param_set_tracks_trainables() {
        let mut ps = ParamSet::new();
        ps.insert("a", Tensor::zeros(vec![2, 2]).with_grad());
        ps.insert("b", Tensor::zeros(vec![3]));
        assert_eq!(ps.trainable_names(), vec!["a".to_string()]);
        assert_eq!(ps.total_elems(), 7);
        assert_eq!(ps.trainable_elems(), 4);
    }
}
