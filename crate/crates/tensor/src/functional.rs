//! Composite differentiable functions built from graph primitives.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Per-channel softmax over pixel locations followed by the expected pixel
/// coordinate, with columns and rows mapped affinely onto `[-1, 1]`.
///
/// Input `[C, H, W]`, output `[2C]` ordered `(col_0, row_0, col_1, row_1, ...)`.
pub fn spatial_soft_argmax(g: &Graph, features: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(TensorError::Invalid(format!(
            "spatial_soft_argmax: temperature must be positive, got {temperature}"
        )));
    }
    let shape = g.shape(features);
    let [c, h, w] = shape[..] else {
        return Err(TensorError::Invalid(format!(
            "spatial_soft_argmax: expected [C, H, W], got {shape:?}"
        )));
    };
    let flat = g.reshape(features, &[c, h * w])?;
    let logits = g.scale(flat, 1.0 / temperature);
    // Row maxima only shift the logits; softmax is invariant to them.
    let maxima: Vec<f64> = g
        .value(logits)
        .data()
        .chunks_exact(h * w)
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let shift = g.constant(crate::kernels::expand_cols(&Tensor::vector(maxima), h * w)?);
    let e = g.exp(g.sub(logits, shift)?);
    let norm = g.expand_cols(g.sum_cols(e)?, h * w)?;
    let probs = g.div(e, norm)?;
    let coords = g.constant(coordinate_grid(h, w));
    let expected = g.matmul(probs, coords)?;
    g.reshape(expected, &[2 * c])
}

fn axis(n: usize, i: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// `[H*W, 2]` table of (column, row) coordinates in `[-1, 1]`.
pub fn coordinate_grid(h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(h * w * 2);
    for i in 0..h {
        for j in 0..w {
            data.push(axis(w, j));
            data.push(axis(h, i));
        }
    }
    Tensor::new(vec![h * w, 2], data).expect("grid shape")
}
