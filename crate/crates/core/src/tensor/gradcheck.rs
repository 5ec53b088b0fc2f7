//! Central finite-difference checks of reverse-mode gradients (64-bit only).

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

/// Magnitude below which gradient errors are measured absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// (tensor index, element index, analytic, numeric) of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    fn record(&mut self, tensor: usize, elem: usize, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        let err = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            if err >= self.max_rel_error {
                self.worst = Some((tensor, elem, analytic, numeric));
            }
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Checks gradients with respect to a set of leaf inputs.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let empty = ParamStore::new();
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(&empty);
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new(&empty);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (ti, grad) in analytic.iter().enumerate() {
        for (ei, &analytic) in grad.iter().enumerate() {
            let orig = work[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + eps;
            let up = eval(&work)?;
            work[ti].data_mut()[ei] = orig - eps;
            let down = eval(&work)?;
            work[ti].data_mut()[ei] = orig;
            report.record(ti, ei, analytic, (up - down) / (2.0 * eps));
        }
    }
    Ok(report)
}

/// Checks gradients with respect to stored parameters.
///
/// `coords_per_param` limits how many evenly spaced entries of each tensor
/// are perturbed; `None` checks every entry.
pub fn check_params<F>(
    store: &ParamStore<f64>,
    eps: f64,
    coords_per_param: Option<usize>,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    check_params_except(store, eps, coords_per_param, |_, _| false, f)
}

/// Like [`check_params`], skipping coordinates for which `skip(param, element)`
/// holds (e.g. rows the forward pass treats as constants).
pub fn check_params_except<F, K>(
    store: &ParamStore<f64>,
    eps: f64,
    coords_per_param: Option<usize>,
    skip: K,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
    K: Fn(ParamId, usize) -> bool,
{
    let mut g = Graph::new(store);
    let loss = f(&mut g)?;
    g.backward(loss)?;
    let grads = g.param_gradients();
    drop(g);

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::inference(s);
        let loss = f(&mut g)?;
        Ok(g.value(loss).item())
    };

    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        let numel = store.get(id).numel();
        let analytic = grads.dense(id).unwrap_or_else(|| vec![0.0; numel]);
        let step = coords_per_param.map_or(1, |k| (numel / k.max(1)).max(1));
        for ei in (0..numel).step_by(step).filter(|&ei| !skip(id, ei)) {
            let orig = work.get(id).data()[ei];
            work.get_mut(id).data_mut()[ei] = orig + eps;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[ei] = orig - eps;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[ei] = orig;
            report.record(id.index(), ei, analytic[ei], (up - down) / (2.0 * eps));
        }
    }
    Ok(report)
}
