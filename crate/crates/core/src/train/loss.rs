use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Var};

/// A loss on the score difference of a (positive, negative) pair.
pub trait PairwiseLoss<S: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    fn value(&self, pos: f64, neg: f64) -> f64;

    /// Graph node for `[1×1]` score nodes.
    fn node(&self, g: &mut Graph<'_, S>, pos: Var, neg: Var) -> Result<Var>;
}

/// `max(0, margin - (pos - neg))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hinge {
    pub margin: f64,
}

/// `log(1 + exp(-(pos - neg)))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Logistic;

impl<S: Scalar> PairwiseLoss<S> for Hinge {
    fn name(&self) -> &'static str {
        "hinge"
    }

    fn value(&self, pos: f64, neg: f64) -> f64 {
        (self.margin - (pos - neg)).max(0.0)
    }

    fn node(&self, g: &mut Graph<'_, S>, pos: Var, neg: Var) -> Result<Var> {
        let gap = g.sub(neg, pos)?;
        let shifted = g.add_scalar(gap, S::of(self.margin));
        Ok(g.relu(shifted))
    }
}

impl<S: Scalar> PairwiseLoss<S> for Logistic {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn value(&self, pos: f64, neg: f64) -> f64 {
        let x = neg - pos;
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }

    fn node(&self, g: &mut Graph<'_, S>, pos: Var, neg: Var) -> Result<Var> {
        let gap = g.sub(neg, pos)?;
        Ok(g.softplus(gap))
    }
}

pub type LossFactory<S> = fn(margin: f64) -> Box<dyn PairwiseLoss<S>>;

/// Pairwise losses by name.
pub struct LossRegistry<S> {
    factories: BTreeMap<&'static str, LossFactory<S>>,
}

impl<S: Scalar> LossRegistry<S> {
    /// `hinge` (uses the margin) and `logistic`.
    pub fn builtin() -> Self {
        let mut r = LossRegistry {
            factories: BTreeMap::new(),
        };
        r.register("hinge", |margin| Box::new(Hinge { margin }));
        r.register("logistic", |_| Box::new(Logistic));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: LossFactory<S>) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn build(&self, name: &str, margin: f64) -> Result<Box<dyn PairwiseLoss<S>>> {
        self.factories.get(name).map(|f| f(margin)).ok_or_else(|| {
            Error::Config(format!("unknown loss `{name}` (known: {})", self.names().join(", ")))
        })
    }
}
