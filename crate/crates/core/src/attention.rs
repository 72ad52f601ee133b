//! Dense reference attention kernels.
//!
//! Two fusion semantics are modelled: concatenating a second key/value source
//! into one softmax (a normalized mixture of the per-source attentions), and
//! summing two independent cross-attentions (unnormalized). They are
//! algebraically different, and these kernels pin that difference down.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

fn check_operands(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<()> {
    if q.cols() == 0 {
        return Err(Error::OperandShape("query width must be positive"));
    }
    if q.cols() != k.cols() {
        return Err(Error::OperandShape("query and key widths differ"));
    }
    if k.rows() != v.rows() {
        return Err(Error::OperandShape("key and value row counts differ"));
    }
    if k.rows() == 0 {
        return Err(Error::OperandShape("at least one key is required"));
    }
    if [q, k, v].iter().any(|m| m.as_slice().iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Row-wise `softmax(q kᵀ / √d)`, shape `L_q × L_k`.
pub fn attention_weights(q: &Matrix, k: &Matrix) -> Result<Matrix> {
    if q.cols() != k.cols() || q.cols() == 0 || k.rows() == 0 {
        return Err(Error::OperandShape("incompatible query/key shapes"));
    }
    let scale = 1.0 / libm::sqrt(q.cols() as f64);
    let mut w = Matrix::zeros(q.rows(), k.rows());
    for i in 0..q.rows() {
        let qi = q.row(i);
        let logits: Vec<f64> = (0..k.rows())
            .map(|j| qi.iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out = w.row_mut(i);
        let mut z = 0.0;
        for (o, l) in out.iter_mut().zip(&logits) {
            *o = libm::exp(l - max);
            z += *o;
        }
        out.iter_mut().for_each(|o| *o /= z);
    }
    Ok(w)
}

/// `softmax(q kᵀ / √d) v`.
pub fn scaled_dot_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    check_operands(q, k, v)?;
    attention_weights(q, k)?.matmul(v)
}

/// Attention of `q` over the row-concatenation of a main and a reference
/// key/value source. Either source may be empty, but not both.
pub fn concat_kv_attention(
    q: &Matrix,
    k_main: &Matrix,
    v_main: &Matrix,
    k_ref: &Matrix,
    v_ref: &Matrix,
) -> Result<Matrix> {
    if k_main.rows() != v_main.rows() || k_ref.rows() != v_ref.rows() {
        return Err(Error::OperandShape("key and value row counts differ"));
    }
    if v_main.cols() != v_ref.cols() {
        return Err(Error::OperandShape("value widths differ"));
    }
    let k = k_main.concat_rows(k_ref)?;
    let v = v_main.concat_rows(v_ref)?;
    scaled_dot_attention(q, &k, &v)
}

/// Sum of two independent cross-attentions sharing the query, e.g. a text
/// branch and an embedding branch.
pub fn dual_cross_attention(
    q: &Matrix,
    k_text: &Matrix,
    v_text: &Matrix,
    k_emb: &Matrix,
    v_emb: &Matrix,
) -> Result<Matrix> {
    let text = scaled_dot_attention(q, k_text, v_text)?;
    let emb = scaled_dot_attention(q, k_emb, v_emb)?;
    if text.cols() != emb.cols() {
        return Err(Error::OperandShape("value widths differ"));
    }
    let data = text.as_slice().iter().zip(emb.as_slice()).map(|(a, b)| a + b).collect();
    Matrix::from_vec(text.rows(), text.cols(), data)
}
