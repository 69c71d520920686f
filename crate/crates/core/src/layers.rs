//! Small graph-building helpers shared by the encoder, fusion and heads.

use crate::diffcore::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `w·x + b·1ᵀ` for `w: r×c`, `x: c×n`, `b: r×1`.
pub fn linear<S: Scalar>(g: &mut Graph<S>, w: Var, b: Var, x: Var) -> Result<Var> {
    let wx = g.matmul(w, x)?;
    let n = g.shape(x)[1];
    let ones = g.constant(Tensor::ones(vec![1, n]));
    let bias = g.matmul(b, ones)?;
    g.add(wx, bias)
}

/// Binds `{prefix}.w` and `{prefix}.b` and applies them to `x`.
pub fn dense<S: Scalar>(g: &mut Graph<S>, store: &ParamStore<S>, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    linear(g, w, b, x)
}

/// `n × width` matrix whose row `i` is the one-hot vector of `ids[i]`.
pub fn one_hot_rows<S: Scalar>(ids: &[u32], width: usize) -> Result<Tensor<S>> {
    let mut data = vec![S::zero(); ids.len() * width];
    for (i, &id) in ids.iter().enumerate() {
        let id = id as usize;
        if id >= width {
            return Err(Error::Contract(format!("token id {id} outside vocabulary of {width}")));
        }
        data[i * width + id] = S::one();
    }
    Tensor::new(vec![ids.len(), width], data)
}

/// `total × n` selector whose product with a matrix keeps its first `n` columns.
pub fn leading_columns<S: Scalar>(total: usize, n: usize) -> Tensor<S> {
    let mut t = Tensor::zeros(vec![total, n]);
    for j in 0..n.min(total) {
        t.data_mut()[j * n + j] = S::one();
    }
    t
}

/// Checks that a bound parameter has the expected shape.
pub fn expect_shape<S: Scalar>(g: &Graph<S>, v: Var, name: &str, expected: &[usize]) -> Result<()> {
    if g.shape(v) != expected {
        return Err(Error::shape(name, g.shape(v), expected));
    }
    Ok(())
}
