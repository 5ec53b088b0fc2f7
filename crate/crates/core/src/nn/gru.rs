use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, Scalar, Tensor, Var};

use super::ParamInit;

/// Single-direction GRU cell parameters.
#[derive(Clone, Debug)]
pub struct Gru {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

impl Gru {
    pub fn new<S: Scalar>(init: &mut ParamInit<'_, S>, input_dim: usize, hidden_dim: usize) -> Self {
        let (i, h) = (input_dim, hidden_dim);
        Gru {
            input_dim,
            hidden_dim,
            w_z: init.uniform("w_z", vec![i, h], i),
            w_r: init.uniform("w_r", vec![i, h], i),
            w_h: init.uniform("w_h", vec![i, h], i),
            u_z: init.uniform("u_z", vec![h, h], h),
            u_r: init.uniform("u_r", vec![h, h], h),
            u_h: init.uniform("u_h", vec![h, h], h),
            b_z: init.uniform("b_z", vec![h], i),
            b_r: init.uniform("b_r", vec![h], i),
            b_h: init.uniform("b_h", vec![h], i),
        }
    }

    /// One step `h' = (1 - z)·h + z·h~` for row vectors `x[1×in]`, `h[1×hid]`.
    pub fn step<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var, h: Var) -> Result<Var> {
        if g.shape(x) != [1, self.input_dim] || g.shape(h) != [1, self.hidden_dim] {
            return Err(Error::shape("gru_cell_step", g.shape(x), g.shape(h)));
        }
        let (w_z, w_r, w_h) = (g.param(self.w_z), g.param(self.w_r), g.param(self.w_h));
        let (b_z, b_r, b_h) = (g.param(self.b_z), g.param(self.b_r), g.param(self.b_h));
        let xz = g.matmul(x, w_z)?;
        let xz = g.add_row(xz, b_z)?;
        let xr = g.matmul(x, w_r)?;
        let xr = g.add_row(xr, b_r)?;
        let xh = g.matmul(x, w_h)?;
        let xh = g.add_row(xh, b_h)?;
        self.recur(g, xz, xr, xh, h)
    }

    /// Recurrent half of a step, given input projections with biases applied.
    fn recur<S: Scalar>(&self, g: &mut Graph<'_, S>, xz: Var, xr: Var, xh: Var, h: Var) -> Result<Var> {
        let (u_z, u_r, u_h) = (g.param(self.u_z), g.param(self.u_r), g.param(self.u_h));
        let hz = g.matmul(h, u_z)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);
        let hr = g.matmul(h, u_r)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, h)?;
        let hh = g.matmul(rh, u_h)?;
        let cand = g.add(xh, hh)?;
        let cand = g.tanh(cand);
        let delta = g.sub(cand, h)?;
        let delta = g.mul(z, delta)?;
        g.add(h, delta)
    }

    /// Runs over rows `order` of `seq` from a zero state; returns states in visit order.
    fn scan<S: Scalar>(
        &self,
        g: &mut Graph<'_, S>,
        seq: Var,
        order: impl Iterator<Item = usize>,
    ) -> Result<Vec<Var>> {
        let (w_z, w_r, w_h) = (g.param(self.w_z), g.param(self.w_r), g.param(self.w_h));
        let (b_z, b_r, b_h) = (g.param(self.b_z), g.param(self.b_r), g.param(self.b_h));
        let xz = g.matmul(seq, w_z)?;
        let xz = g.add_row(xz, b_z)?;
        let xr = g.matmul(seq, w_r)?;
        let xr = g.add_row(xr, b_r)?;
        let xh = g.matmul(seq, w_h)?;
        let xh = g.add_row(xh, b_h)?;
        let mut h = g.constant(Tensor::zeros(vec![1, self.hidden_dim]));
        let mut states = Vec::new();
        for t in order {
            let z = g.rows(xz, t, 1)?;
            let r = g.rows(xr, t, 1)?;
            let c = g.rows(xh, t, 1)?;
            h = self.recur(g, z, r, c, h)?;
            states.push(h);
        }
        Ok(states)
    }

    /// Unidirectional pass over the first `len` rows of `seq[L×in]`.
    /// Output is `L×hidden` with zero rows past `len`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, seq: Var, len: usize) -> Result<Var> {
        let rows = check_seq(g, seq, self.input_dim)?;
        if len == 0 {
            return Ok(g.constant(Tensor::zeros(vec![rows, self.hidden_dim])));
        }
        let states = self.scan(g, seq, 0..len)?;
        let out = g.concat(&states, 0)?;
        pad_rows(g, out, rows)
    }
}

/// Bidirectional GRU; per-position outputs are `[forward ; backward]`.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub fwd: Gru,
    pub bwd: Gru,
}

impl BiGru {
    pub fn new<S: Scalar>(init: &mut ParamInit<'_, S>, input_dim: usize, hidden_dim: usize) -> Self {
        BiGru {
            fwd: Gru::new(&mut init.sub("fwd"), input_dim, hidden_dim),
            bwd: Gru::new(&mut init.sub("bwd"), input_dim, hidden_dim),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden_dim + self.bwd.hidden_dim
    }

    /// `seq[L×in]` with a trailing-padding mask; padded positions output zeros
    /// and the backward direction starts at the last real token.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, seq: Var, mask: &[bool]) -> Result<Var> {
        let rows = check_seq(g, seq, self.fwd.input_dim)?;
        if mask.len() != rows {
            return Err(Error::dim(
                "bigru",
                format!("mask of length {} for {rows} positions", mask.len()),
            ));
        }
        let len = trailing_mask_len(mask)?;
        if len == 0 {
            return Ok(g.constant(Tensor::zeros(vec![rows, self.output_dim()])));
        }
        let fwd = self.fwd.scan(g, seq, 0..len)?;
        let mut bwd = self.bwd.scan(g, seq, (0..len).rev())?;
        bwd.reverse();
        let f = g.concat(&fwd, 0)?;
        let b = g.concat(&bwd, 0)?;
        let both = g.concat(&[f, b], 1)?;
        pad_rows(g, both, rows)
    }
}

/// Number of leading `true` entries; rejects masks with gaps.
pub(crate) fn trailing_mask_len(mask: &[bool]) -> Result<usize> {
    let len = mask.iter().take_while(|&&m| m).count();
    if mask[len..].iter().any(|&m| m) {
        return Err(Error::Contract(format!(
            "mask {mask:?} is not a prefix of real positions followed by padding"
        )));
    }
    Ok(len)
}

fn check_seq<S: Scalar>(g: &Graph<'_, S>, seq: Var, input_dim: usize) -> Result<usize> {
    let s = g.shape(seq);
    if s.len() != 2 || s[1] != input_dim {
        return Err(Error::shape("gru input", s, &[s[0], input_dim]));
    }
    Ok(s[0])
}

/// Appends zero rows until `x` has `rows` rows.
pub(crate) fn pad_rows<S: Scalar>(g: &mut Graph<'_, S>, x: Var, rows: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s[0] == rows {
        return Ok(x);
    }
    let mut pad_shape = s;
    pad_shape[0] = rows - pad_shape[0];
    let zeros = g.constant(Tensor::zeros(pad_shape));
    g.concat(&[x, zeros], 0)
}
