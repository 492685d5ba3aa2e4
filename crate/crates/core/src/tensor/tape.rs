use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Element, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Index of a trainable tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Element = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Replaces the value of a parameter, keeping its name and flags.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.tensors[id.0];
        if slot.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter {} has shape {:?}, replacement has {:?}",
                self.names[id.0],
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value.with_requires_grad(true);
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Backward rule of a recorded operation.
pub trait BackwardOp<T: Element> {
    /// Gradients with respect to each input, in input order. Entries may be
    /// `None` when `needs[i]` is false.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;

    /// Digest of the non-differentiable branch decisions taken in forward
    /// (relu signs, pooling argmax). `None` for smooth operations.
    fn branch_fingerprint(&self, _inputs: &[&Tensor<T>]) -> Option<u64> {
        None
    }
}

enum Origin<T: Element> {
    Leaf {
        param: Option<ParamId>,
    },
    Op {
        name: &'static str,
        inputs: Vec<Var>,
        rule: Box<dyn BackwardOp<T>>,
    },
}

struct Node<T: Element> {
    value: Tensor<T>,
    origin: Origin<T>,
}

/// Ordered record of executed operations. Nodes are appended as operations
/// run, so the record is always in topological order.
pub struct Tape<T: Element = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, origin: Origin<T>) -> Var {
        self.nodes.push(Node { value, origin });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Records an input tensor. Its `requires_grad` flag decides whether
    /// [`Tape::backward`] reports a gradient for it.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Origin::Leaf { param: None })
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Records a trainable parameter so its gradient flows back into `store`.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let mut value = store.get(id).clone();
        value.zero_grad();
        value.set_requires_grad(true);
        self.push(value, Origin::Leaf { param: Some(id) })
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::contract("variable does not belong to this tape"));
        }
        Ok(())
    }

    /// Value of a recorded variable.
    ///
    /// Panics if `var` was produced by a different tape.
    pub fn value(&self, var: Var) -> &Tensor<T> {
        self.get(var).expect("foreign variable")
    }

    pub fn get(&self, var: Var) -> Result<&Tensor<T>> {
        self.check(var)?;
        Ok(&self.nodes[var.index].value)
    }

    /// Name of the operation that produced `var`, `None` for leaves.
    pub fn op_name(&self, var: Var) -> Option<&'static str> {
        match &self.nodes.get(var.index)?.origin {
            Origin::Op { name, .. } => Some(name),
            Origin::Leaf { .. } => None,
        }
    }

    pub fn inputs_of(&self, var: Var) -> &[Var] {
        match self.nodes.get(var.index).map(|n| &n.origin) {
            Some(Origin::Op { inputs, .. }) => inputs,
            _ => &[],
        }
    }

    /// Appends an operation. Rejects non-finite outputs.
    pub fn record(
        &mut self,
        name: &'static str,
        inputs: Vec<Var>,
        value: Tensor<T>,
        rule: impl BackwardOp<T> + 'static,
    ) -> Result<Var> {
        for &v in &inputs {
            self.check(v)?;
        }
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push(
            value,
            Origin::Op {
                name,
                inputs,
                rule: Box::new(rule),
            },
        ))
    }

    fn needs_grad(&self) -> Vec<bool> {
        let mut needs = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            needs[i] = match &node.origin {
                Origin::Leaf { .. } => node.value.requires_grad(),
                Origin::Op { inputs, .. } => inputs.iter().any(|v| needs[v.index]),
            };
        }
        needs
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Gradients for leaves that require them are returned; fan-out is
    /// handled by additive accumulation.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let loss_node = &self.nodes[loss.index];
        if !loss_node.value.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar [1] loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        if matches!(loss_node.origin, Origin::Leaf { .. }) {
            return Err(Error::EmptyTape);
        }

        let needs = self.needs_grad();
        let mut pending: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        pending[loss.index] = Some(Tensor::scalar(T::one()));

        for index in (0..=loss.index).rev() {
            let Some(grad) = pending[index].take() else {
                continue;
            };
            let node = &self.nodes[index];
            match &node.origin {
                Origin::Leaf { .. } => {
                    if node.value.requires_grad() {
                        leaves[index] = Some(grad);
                    }
                }
                Origin::Op { name, inputs, rule } => {
                    if !needs[index] {
                        continue;
                    }
                    let values: Vec<&Tensor<T>> =
                        inputs.iter().map(|v| &self.nodes[v.index].value).collect();
                    let input_needs: Vec<bool> = inputs.iter().map(|v| needs[v.index]).collect();
                    let input_grads = rule.backward(&values, &node.value, &grad, &input_needs)?;
                    if input_grads.len() != inputs.len() {
                        return Err(Error::contract(format!(
                            "backward rule of `{name}` returned {} gradients for {} inputs",
                            input_grads.len(),
                            inputs.len()
                        )));
                    }
                    for (input, g) in inputs.iter().zip(input_grads) {
                        let Some(g) = g else { continue };
                        if !needs[input.index] {
                            continue;
                        }
                        if g.shape() != self.nodes[input.index].value.shape() {
                            return Err(Error::contract(format!(
                                "backward rule of `{name}` produced gradient {:?} for input {:?}",
                                g.shape(),
                                self.nodes[input.index].value.shape()
                            )));
                        }
                        match &mut pending[input.index] {
                            Some(acc) => acc
                                .data_mut()
                                .iter_mut()
                                .zip(g.data())
                                .for_each(|(a, b)| *a += *b),
                            slot => *slot = Some(g),
                        }
                    }
                }
            }
        }

        Ok(Gradients {
            tape: self.id,
            grads: leaves,
        })
    }

    /// [`Tape::backward`], then adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        for (index, node) in self.nodes.iter().enumerate() {
            if let (Origin::Leaf { param: Some(id) }, Some(g)) = (&node.origin, &grads.grads[index])
            {
                store.get_mut(*id).accumulate_grad(g.data())?;
            }
        }
        Ok(grads)
    }

    /// Digest of every branch decision recorded so far. Two evaluations with
    /// equal signatures took the same piecewise-smooth path.
    pub fn branch_signature(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        for node in &self.nodes {
            if let Origin::Op { inputs, rule, .. } = &node.origin {
                let values: Vec<&Tensor<T>> =
                    inputs.iter().map(|v| &self.nodes[v.index].value).collect();
                if let Some(fp) = rule.branch_fingerprint(&values) {
                    fp.hash(&mut hasher);
                }
            }
        }
        hasher.finish()
    }
}

/// Leaf gradients produced by one backward sweep.
pub struct Gradients<T: Element = f32> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn wrt(&self, var: Var) -> Option<&Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{add, mul, sum};

    #[test]
    fn detached_loss_is_an_empty_tape_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::scalar(1.0).with_requires_grad(true));
        assert!(matches!(tape.backward(x), Err(Error::EmptyTape)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones(&[3]).unwrap().with_requires_grad(true));
        let y = add(&mut tape, x, x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn foreign_variables_are_rejected() {
        let mut a = Tape::<f32>::new();
        let mut b = Tape::<f32>::new();
        let x = a.leaf(Tensor::ones(&[1]).unwrap());
        let y = b.leaf(Tensor::ones(&[1]).unwrap());
        assert!(add(&mut a, x, y).is_err());
    }

    #[test]
    fn params_accumulate_into_store() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_slice(&[2], &[1.0, 2.0]).unwrap());
        for _ in 0..2 {
            let mut tape = Tape::new();
            let w = tape.param(&store, id);
            let sq = mul(&mut tape, w, w).unwrap();
            let loss = sum(&mut tape, sq).unwrap();
            tape.backward_into(loss, &mut store).unwrap();
        }
        assert_eq!(store.get(id).grad_data().unwrap(), &[4.0, 8.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_slice(&[2], &[1.0, 2.0]).unwrap().with_requires_grad(true));
        let c = tape.constant(Tensor::from_slice(&[2], &[3.0, 4.0]).unwrap());
        let p = mul(&mut tape, x, c).unwrap();
        let loss = sum(&mut tape, p).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[3.0, 4.0]);
        assert!(g.wrt(c).is_none());
    }
}
