use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, Scalar, Var};

use super::ParamInit;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

#[derive(Clone, Debug)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
    activation: Activation,
}

/// Affine layers with per-layer nonlinearity; the last layer is linear with one output.
#[derive(Clone, Debug)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
}

impl Mlp {
    /// `sizes = [in, hidden.., 1]`; hidden layers use `hidden_activation`.
    pub fn new<S: Scalar>(
        init: &mut ParamInit<'_, S>,
        sizes: &[usize],
        hidden_activation: Activation,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || *sizes.last().unwrap() != 1 {
            return Err(Error::Config(format!(
                "ranking MLP sizes {sizes:?} must be positive and end in 1"
            )));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let last = i + 2 == sizes.len();
                Layer {
                    weight: init.uniform(&format!("layer{i}.weight"), vec![w[0], w[1]], w[0]),
                    bias: init.uniform(&format!("layer{i}.bias"), vec![w[1]], w[0]),
                    activation: if last { Activation::Identity } else { hidden_activation },
                }
            })
            .collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    /// Weight and bias of the final (linear) layer.
    pub fn output_layer(&self) -> (ParamId, ParamId) {
        let l = self.layers.last().unwrap();
        (l.weight, l.bias)
    }

    pub fn first_layer_weight(&self) -> ParamId {
        self.layers[0].weight
    }

    /// Scores a `[1×in]` row; returns a `[1×1]` node.
    pub fn score<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        if g.shape(x) != [1, self.input_dim()] {
            return Err(Error::shape("mlp_score", g.shape(x), &[1, self.input_dim()]));
        }
        let mut h = x;
        for layer in &self.layers {
            let w = g.param(layer.weight);
            let b = g.param(layer.bias);
            h = g.matmul(h, w)?;
            h = g.add_row(h, b)?;
            h = match layer.activation {
                Activation::Tanh => g.tanh(h),
                Activation::Relu => g.relu(h),
                Activation::Identity => h,
            };
        }
        Ok(h)
    }
}
