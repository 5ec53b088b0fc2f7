use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Padding, ParamId, Scalar, Var};

use super::ParamInit;

/// Geometry of the (conv → relu → max-pool) stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvStackConfig {
    pub in_channels: usize,
    pub filters: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub pool_sizes: Vec<usize>,
    pub pool_strides: Vec<usize>,
}

impl Default for ConvStackConfig {
    fn default() -> Self {
        ConvStackConfig {
            in_channels: 2,
            filters: vec![16, 16],
            kernel_sizes: vec![3, 3],
            conv_strides: vec![1, 1],
            pool_sizes: vec![2, 2],
            pool_strides: vec![2, 2],
        }
    }
}

impl ConvStackConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.filters.len();
        let lens = [
            self.kernel_sizes.len(),
            self.conv_strides.len(),
            self.pool_sizes.len(),
            self.pool_strides.len(),
        ];
        if n == 0 || lens.iter().any(|&l| l != n) {
            return Err(Error::Config(format!(
                "conv stack needs equal-length stage lists, got filters={n} others={lens:?}"
            )));
        }
        let all = [
            &self.filters,
            &self.kernel_sizes,
            &self.conv_strides,
            &self.pool_sizes,
            &self.pool_strides,
        ];
        if self.in_channels == 0 || all.iter().any(|v| v.contains(&0)) {
            return Err(Error::Config("conv stack sizes must be positive".into()));
        }
        Ok(())
    }

    /// Flattened feature length for an `H×W` input, or a dimension error if a
    /// stage would shrink the map below its pooling window.
    pub fn output_dim(&self, h: usize, w: usize) -> Result<usize> {
        let (mut h, mut w) = (h, w);
        for i in 0..self.filters.len() {
            let s = self.conv_strides[i];
            h = h.div_ceil(s);
            w = w.div_ceil(s);
            let (k, ps) = (self.pool_sizes[i], self.pool_strides[i]);
            if h < k || w < k {
                return Err(Error::dim(
                    "cnn_turn_features",
                    format!("stage {i} map {h}x{w} smaller than pool window {k}"),
                ));
            }
            h = (h - k) / ps + 1;
            w = (w - k) / ps + 1;
        }
        Ok(self.filters.last().unwrap() * h * w)
    }
}

#[derive(Clone, Debug)]
struct Stage {
    kernel: ParamId,
    bias: ParamId,
    conv_stride: usize,
    pool: usize,
    pool_stride: usize,
}

/// CNN over a stacked 2-channel interaction image.
#[derive(Clone, Debug)]
pub struct ConvStack {
    pub config: ConvStackConfig,
    stages: Vec<Stage>,
}

impl ConvStack {
    pub fn new<S: Scalar>(init: &mut ParamInit<'_, S>, config: &ConvStackConfig) -> Result<Self> {
        config.validate()?;
        let mut c_in = config.in_channels;
        let mut stages = Vec::new();
        for i in 0..config.filters.len() {
            let (c_out, k) = (config.filters[i], config.kernel_sizes[i]);
            let fan_in = c_in * k * k;
            let mut st = init.sub(&format!("stage{i}"));
            stages.push(Stage {
                kernel: st.uniform("kernel", vec![c_out, c_in, k, k], fan_in),
                bias: st.uniform("bias", vec![c_out], fan_in),
                conv_stride: config.conv_strides[i],
                pool: config.pool_sizes[i],
                pool_stride: config.pool_strides[i],
            });
            c_in = c_out;
        }
        Ok(ConvStack {
            config: config.clone(),
            stages,
        })
    }

    pub fn output_dim(&self, h: usize, w: usize) -> Result<usize> {
        self.config.output_dim(h, w)
    }

    /// `m[C×H×W]` → flattened `[1×feature_dim]` row.
    pub fn features<S: Scalar>(&self, g: &mut Graph<'_, S>, m: Var) -> Result<Var> {
        let s = g.shape(m).to_vec();
        if s.len() != 3 || s[0] != self.config.in_channels {
            return Err(Error::dim(
                "cnn_turn_features",
                format!("expected {}×H×W input, got {s:?}", self.config.in_channels),
            ));
        }
        let dim = self.output_dim(s[1], s[2])?;
        let mut x = m;
        for st in &self.stages {
            let k = g.param(st.kernel);
            let b = g.param(st.bias);
            x = g.conv2d(x, k, Some(b), st.conv_stride, Padding::Same)?;
            x = g.relu(x);
            x = g.max_pool2d(x, st.pool, st.pool_stride)?;
        }
        g.reshape(x, vec![1, dim])
    }
}
