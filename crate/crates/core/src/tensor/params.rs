use std::collections::BTreeMap;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Registration order is stable and defines checkpoint layout.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
    trainable: Vec<bool>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            trainable: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        self.trainable.push(true);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.trainable[id.0] = trainable;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces a tensor's values, keeping its shape.
    pub fn assign(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        let current = &self.tensors[id.0];
        if current.shape() != value.shape() {
            return Err(Error::shape("assign", current.shape(), value.shape()));
        }
        self.tensors[id.0] = value;
        Ok(())
    }
}

/// Gradient for one parameter: dense, or row-sparse for embedding tables.
#[derive(Clone, Debug, PartialEq)]
pub enum GradBuf<S> {
    Dense(Vec<S>),
    Rows {
        width: usize,
        rows: BTreeMap<usize, Vec<S>>,
    },
}

impl<S: Scalar> GradBuf<S> {
    pub fn to_dense(&self, numel: usize) -> Vec<S> {
        match self {
            GradBuf::Dense(v) => v.clone(),
            GradBuf::Rows { width, rows } => {
                let mut out = vec![S::zero(); numel];
                for (&r, vals) in rows {
                    out[r * width..(r + 1) * width].copy_from_slice(vals);
                }
                out
            }
        }
    }

    fn values(&self) -> Box<dyn Iterator<Item = &S> + '_> {
        match self {
            GradBuf::Dense(v) => Box::new(v.iter()),
            GradBuf::Rows { rows, .. } => Box::new(rows.values().flatten()),
        }
    }

    fn scale(&mut self, c: S) {
        match self {
            GradBuf::Dense(v) => v.iter_mut().for_each(|x| *x *= c),
            GradBuf::Rows { rows, .. } => rows.values_mut().flatten().for_each(|x| *x *= c),
        }
    }

    fn add(&mut self, other: &GradBuf<S>, numel: usize) {
        match (&mut *self, other) {
            (GradBuf::Dense(a), GradBuf::Dense(b)) => {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
            }
            (GradBuf::Rows { rows: a, .. }, GradBuf::Rows { rows: b, width }) => {
                for (&r, vals) in b {
                    let dst = a.entry(r).or_insert_with(|| vec![S::zero(); *width]);
                    dst.iter_mut().zip(vals).for_each(|(x, y)| *x += *y);
                }
            }
            (me, other) => {
                let mut dense = me.to_dense(numel);
                dense
                    .iter_mut()
                    .zip(other.to_dense(numel))
                    .for_each(|(x, y)| *x += y);
                *me = GradBuf::Dense(dense);
            }
        }
    }
}

/// Per-parameter gradients, indexed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<S> {
    bufs: Vec<Option<GradBuf<S>>>,
    numels: Vec<usize>,
}

impl<S: Scalar> Gradients<S> {
    pub fn empty(store: &ParamStore<S>) -> Self {
        Gradients {
            bufs: vec![None; store.len()],
            numels: store.tensors.iter().map(Tensor::numel).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&GradBuf<S>> {
        self.bufs[id.0].as_ref()
    }

    pub fn dense(&self, id: ParamId) -> Option<Vec<S>> {
        self.get(id).map(|g| g.to_dense(self.numels[id.0]))
    }

    pub fn accumulate(&mut self, id: ParamId, grad: GradBuf<S>) {
        let numel = self.numels[id.0];
        match &mut self.bufs[id.0] {
            Some(existing) => existing.add(&grad, numel),
            slot @ None => *slot = Some(grad),
        }
    }

    /// Adds every gradient of `other` into `self`.
    pub fn merge(&mut self, other: &Gradients<S>) {
        for (i, g) in other.bufs.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g.clone());
            }
        }
    }

    pub fn scale(&mut self, c: S) {
        self.bufs.iter_mut().flatten().for_each(|g| g.scale(c));
    }

    pub fn global_norm(&self) -> S {
        self.bufs
            .iter()
            .flatten()
            .flat_map(|g| g.values())
            .map(|&x| x * x)
            .sum::<S>()
            .sqrt()
    }

    /// First parameter holding a non-finite gradient entry.
    pub fn first_non_finite(&self) -> Option<ParamId> {
        self.bufs.iter().enumerate().find_map(|(i, g)| {
            g.as_ref()
                .filter(|g| g.values().any(|x| !x.is_finite()))
                .map(|_| ParamId(i))
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &GradBuf<S>)> {
        self.bufs
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}
