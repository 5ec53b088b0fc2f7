use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{ParamId, ParamStore, Scalar, Tensor};

/// Samples `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))` values.
pub fn uniform_fan_in<S: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor<S> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::of(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("positive extents")
}

/// Registers parameters under a common name prefix with fan-in initialisation.
pub struct ParamInit<'a, S> {
    pub store: &'a mut ParamStore<S>,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, S: Scalar> ParamInit<'a, S> {
    pub fn new(store: &'a mut ParamStore<S>, rng: &'a mut ChaCha8Rng, prefix: impl Into<String>) -> Self {
        ParamInit {
            store,
            rng,
            prefix: prefix.into(),
        }
    }

    pub fn sub(&mut self, name: &str) -> ParamInit<'_, S> {
        ParamInit {
            store: self.store,
            rng: self.rng,
            prefix: join(&self.prefix, name),
        }
    }

    pub fn uniform(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> ParamId {
        let t = uniform_fan_in(self.rng, shape, fan_in);
        self.store.add(join(&self.prefix, name), t)
    }

    pub fn constant(&mut self, name: &str, shape: Vec<usize>, value: f64) -> ParamId {
        self.store.add(join(&self.prefix, name), Tensor::filled(shape, S::of(value)))
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
