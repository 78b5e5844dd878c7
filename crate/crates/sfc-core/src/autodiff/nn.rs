//! Neural building blocks on top of the graph: GRU cell, sinusoidal
//! positional encoding, and a value-level masked softmax.

use rand::Rng;

use super::graph::{Graph, TensorId};
use super::optim::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// GRU cell operating on row batches: inputs (k x d_in), states
/// (k x d_hidden). Parameters are shared across rows.
///
///   z = sigmoid(a W_z + h U_z + b_z)
///   r = sigmoid(a W_r + h U_r + b_r)
///   h~ = tanh(a W_h + (r . h) U_h + b_h)
///   h' = (1 - z) . h + z . h~
///
/// Biases are zero-initialized extras over the bias-free update equations.
pub struct GruCell {
    pub d_in: usize,
    pub d_hidden: usize,
    wz: TensorId,
    uz: TensorId,
    bz: TensorId,
    wr: TensorId,
    ur: TensorId,
    br: TensorId,
    wh: TensorId,
    uh: TensorId,
    bh: TensorId,
}

impl GruCell {
    /// Create the cell's nine parameters in `store` under `prefix`.
    /// Weights are uniform(+-sqrt(1/fan_in)); biases zero.
    pub fn init_params<R: Rng>(
        store: &mut ParameterStore,
        prefix: &str,
        d_in: usize,
        d_hidden: usize,
        rng: &mut R,
    ) {
        for gate in ["z", "r", "h"] {
            store.init_uniform(&format!("{prefix}.w{gate}"), d_in, d_hidden, rng);
            store.init_uniform(&format!("{prefix}.u{gate}"), d_hidden, d_hidden, rng);
            store.init_zeros(&format!("{prefix}.b{gate}"), 1, d_hidden);
        }
    }

    /// Bind the cell's parameters from `store` into `g`.
    pub fn bind(
        g: &mut Graph,
        store: &ParameterStore,
        prefix: &str,
        d_in: usize,
        d_hidden: usize,
    ) -> Result<GruCell> {
        let mut get = |name: &str| -> Result<TensorId> {
            let full = format!("{prefix}.{name}");
            Ok(g.param(&full, store.get(&full)?))
        };
        Ok(GruCell {
            d_in,
            d_hidden,
            wz: get("wz")?,
            uz: get("uz")?,
            bz: get("bz")?,
            wr: get("wr")?,
            ur: get("ur")?,
            br: get("br")?,
            wh: get("wh")?,
            uh: get("uh")?,
            bh: get("bh")?,
        })
    }

    /// One state transition for a batch of rows.
    pub fn step(&self, g: &mut Graph, a: TensorId, h: TensorId) -> Result<TensorId> {
        let (ar, ac) = g.value(a).shape();
        let (hr, hc) = g.value(h).shape();
        if ac != self.d_in || hc != self.d_hidden || ar != hr {
            return Err(Error::ShapeMismatch(format!(
                "gru_step: input {ar}x{ac}, state {hr}x{hc}, expected k x {} and k x {}",
                self.d_in, self.d_hidden
            )));
        }
        let z = {
            let xa = g.matmul(a, self.wz);
            let xh = g.matmul(h, self.uz);
            let s = g.add(xa, xh);
            let s = g.add_bias(s, self.bz);
            g.sigmoid(s)
        };
        let r = {
            let xa = g.matmul(a, self.wr);
            let xh = g.matmul(h, self.ur);
            let s = g.add(xa, xh);
            let s = g.add_bias(s, self.br);
            g.sigmoid(s)
        };
        let h_tilde = {
            let xa = g.matmul(a, self.wh);
            let rh = g.mul(r, h);
            let xh = g.matmul(rh, self.uh);
            let s = g.add(xa, xh);
            let s = g.add_bias(s, self.bh);
            g.tanh(s)
        };
        let keep = g.one_minus(z);
        let kept = g.mul(keep, h);
        let new = g.mul(z, h_tilde);
        Ok(g.add(kept, new))
    }
}

/// Sinusoidal positional encoding of a node index:
/// pe[2i] = sin(index / 10000^(2i/dim)), pe[2i+1] = cos(same argument).
pub fn positional_encoding(index: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "positional encoding dim must be even and positive, got {dim}"
        )));
    }
    let mut pe = vec![0.0; dim];
    for i in 0..dim / 2 {
        let angle = index as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
        pe[2 * i] = angle.sin();
        pe[2 * i + 1] = angle.cos();
    }
    Ok(pe)
}

/// Value-level masked softmax with max-subtraction; false entries exactly 0.
pub fn masked_softmax_values(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "masked_softmax: {} scores vs {} mask entries",
            scores.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument("masked_softmax: all-false mask".into()));
    }
    let mut g = Graph::new();
    let x = g.constant(Tensor::row_vector(scores.to_vec()));
    let y = g.masked_softmax(x, mask)?;
    Ok(g.value(y).row(0).to_vec())
}
