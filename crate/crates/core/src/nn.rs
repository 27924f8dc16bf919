//! Layer helpers shared by the chain encoder and the decoder.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Graph, Tensor, Var};

/// Added to masked attention scores before the softmax.
pub(crate) const MASKED: f64 = -1e30;

pub(crate) fn init_uniform<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, shape: &[usize], d: usize, rng: &mut R) {
    let bound = 1.0 / (d as f64).sqrt();
    store.insert(name, Tensor::uniform(shape, bound, rng));
}

/// `x · W + b` with the bias broadcast over rows.
pub(crate) fn linear(g: &mut Graph, store: &ParamStore, w: &str, b: &str, x: Var) -> Result<Var> {
    let wv = g.param(store, w)?;
    let bv = g.param(store, b)?;
    let y = g.matmul(x, wv)?;
    g.add_row(y, bv)
}

/// Multi-head scaled dot-product self-attention over the rows of `x`.
///
/// Projections live at `{prefix}.wq/.wk/.wv/.wo`; head `h` owns the column
/// block `h·d/heads .. (h+1)·d/heads`. With `causal`, row `i` attends to rows
/// `≤ i` only. Returns the output and, when asked, the head-averaged
/// attention matrix.
pub(crate) fn self_attention(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    heads: usize,
    causal: bool,
    want_weights: bool,
) -> Result<(Var, Option<Tensor>)> {
    let d = g.value(x).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Argument(format!("{heads} heads do not divide width {d}")));
    }
    let n = g.value(x).rows();
    let dh = d / heads;
    let wq = g.param(store, &format!("{prefix}.wq"))?;
    let wk = g.param(store, &format!("{prefix}.wk"))?;
    let wv = g.param(store, &format!("{prefix}.wv"))?;
    let wo = g.param(store, &format!("{prefix}.wo"))?;
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let mask = causal.then(|| causal_mask(n));
    let scale = 1.0 / (dh as f64).sqrt();

    let mut outs = Vec::with_capacity(heads);
    let mut avg = want_weights.then(|| Tensor::zeros(&[n, n]));
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let s = g.matmul(qh, kt)?;
        let mut s = g.scale(s, scale);
        if let Some(m) = &mask {
            s = g.add_const(s, m)?;
        }
        let p = g.softmax_rows(s)?;
        if let Some(a) = avg.as_mut() {
            a.add_assign(g.value(p))?;
        }
        outs.push(g.matmul(p, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    let out = g.matmul(cat, wo)?;
    Ok((out, avg.map(|a| a.scale(1.0 / heads as f64))))
}

pub(crate) fn causal_mask(n: usize) -> Tensor {
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            m.row_mut(i)[j] = MASKED;
        }
    }
    m
}

/// Sinusoidal position encodings for positions `start..start+len`.
pub(crate) fn positional_encoding(start: usize, len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, d]);
    for r in 0..len {
        let pos = (start + r) as f64;
        let row = t.row_mut(r);
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos / 10000f64.powf(2.0 * pair / d as f64);
            row[i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}
