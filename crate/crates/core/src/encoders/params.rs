//! Named parameter storage and per-pass binding into a [`Graph`].

use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormConfig, Graph, Mode, Var};
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// Optimised by gradient descent.
    Weight,
    /// Persistent state that is not optimised (batch-norm running statistics).
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

/// Ordered collection of every learnable weight and buffer of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { entries: Vec::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor<T>) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            kind,
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Ids of [`ParamKind::Weight`] entries in registration order.
    pub fn trainable(&self) -> Vec<ParamId> {
        self.ids().filter(|id| self.entries[id.0].kind == ParamKind::Weight).collect()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Replaces the value of entry `id`, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.entries[id.0];
        if slot.tensor.shape() != value.shape() {
            return Err(shape_err!(
                "parameter `{}`: expected {:?}, got {:?}",
                slot.name,
                slot.tensor.shape(),
                value.shape()
            ));
        }
        slot.tensor = value;
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }
}

/// Architecture hyperparameters that are not learned.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchHyper {
    pub leaky_slope: f64,
    pub batch_norm: BatchNormConfig,
}

impl Default for ArchHyper {
    fn default() -> Self {
        ArchHyper {
            leaky_slope: 0.01,
            batch_norm: BatchNormConfig::default(),
        }
    }
}

/// One forward pass: binds store entries into a graph on first use and
/// collects batch-norm running-stat updates for the caller to apply.
pub struct Forward<'a, T: Scalar> {
    pub graph: &'a mut Graph<T>,
    store: &'a ParamStore<T>,
    vars: Vec<Option<Var>>,
    mode: Mode,
    track_grad: bool,
    hyper: ArchHyper,
    updates: Vec<(ParamId, Tensor<T>)>,
}

/// Result of a forward pass: which graph node holds each parameter, and
/// the running statistics that train mode produced.
pub struct Binding<T> {
    vars: Vec<Option<Var>>,
    updates: Vec<(ParamId, Tensor<T>)>,
}

impl<'a, T: Scalar> Forward<'a, T> {
    pub fn new(
        graph: &'a mut Graph<T>,
        store: &'a ParamStore<T>,
        mode: Mode,
        hyper: ArchHyper,
        track_grad: bool,
    ) -> Self {
        Forward {
            graph,
            vars: vec![None; store.len()],
            store,
            mode,
            track_grad,
            hyper,
            updates: Vec::new(),
        }
    }

    /// Inference pass: eval mode, no gradients.
    pub fn eval(graph: &'a mut Graph<T>, store: &'a ParamStore<T>, hyper: ArchHyper) -> Self {
        Self::new(graph, store, Mode::Eval, hyper, false)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn hyper(&self) -> ArchHyper {
        self.hyper
    }

    pub fn leaky_slope(&self) -> T {
        T::of(self.hyper.leaky_slope)
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn var(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let entry = &self.store.entries[id.0];
        let grad = self.track_grad && entry.kind == ParamKind::Weight;
        let v = self.graph.leaf(entry.tensor.clone(), grad);
        self.vars[id.0] = Some(v);
        v
    }

    pub(crate) fn record_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.updates.push((id, value));
    }

    pub fn finish(self) -> Binding<T> {
        Binding {
            vars: self.vars,
            updates: self.updates,
        }
    }
}

impl<T: Scalar> Binding<T> {
    pub fn var(&self, id: ParamId) -> Option<Var> {
        self.vars[id.0]
    }

    /// Writes train-mode running statistics back into the store.
    pub fn apply_updates(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (id, value) in self.updates.drain(..) {
            store.set(id, value)?;
        }
        Ok(())
    }

    /// Gradient of every trainable entry after `graph.backward`; entries the
    /// pass never touched get zeros.
    pub fn gradients(&self, graph: &Graph<T>, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        store
            .trainable()
            .into_iter()
            .map(|id| {
                self.vars[id.0]
                    .and_then(|v| graph.grad(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(store.get(id).shape().to_vec()))
            })
            .collect()
    }
}

/// Runs an eval-mode forward over `input` in chunks along the batch
/// dimension and concatenates the outputs. Valid because eval-mode outputs
/// do not depend on the other members of the batch.
pub fn run_eval_chunked<T: Scalar>(
    store: &ParamStore<T>,
    hyper: ArchHyper,
    input: &Tensor<T>,
    chunk: usize,
    mut f: impl FnMut(&mut Forward<'_, T>, Var) -> Result<Var>,
) -> Result<Tensor<T>> {
    if input.ndim() == 0 {
        return Err(invalid!("batched input must have a batch dimension"));
    }
    let batch = input.shape()[0];
    let per = input.numel() / batch;
    let mut out_data = Vec::new();
    let mut out_tail: Option<Vec<usize>> = None;
    for start in (0..batch).step_by(chunk.max(1)) {
        let end = (start + chunk.max(1)).min(batch);
        let mut shape = input.shape().to_vec();
        shape[0] = end - start;
        let piece = Tensor::new(shape, input.data()[start * per..end * per].to_vec())?;
        let mut graph = Graph::new();
        let mut cx = Forward::eval(&mut graph, store, hyper);
        let x = cx.graph.constant(piece);
        let y = f(&mut cx, x)?;
        let value = cx.graph.value(y);
        out_tail.get_or_insert_with(|| value.shape()[1..].to_vec());
        out_data.extend_from_slice(value.data());
    }
    let mut shape = vec![batch];
    shape.extend(out_tail.unwrap_or_default());
    Tensor::new(shape, out_data)
}
