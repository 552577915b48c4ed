//! Attention masks and masked scaled dot-product attention.

use crate::error::{shape, Error, Result};
use crate::tensor::Tensor;

/// Boolean `[query_len × key_len]` matrix of permitted attention edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn all(rows: usize, cols: usize) -> Self {
        Self { rows, cols, allowed: vec![true; rows * cols] }
    }

    /// Fails with a mask error when any query row has no permitted key.
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(shape(format!("mask of {} entries for {rows}×{cols}", allowed.len())));
        }
        let m = Self { rows, cols, allowed };
        m.validate()?;
        Ok(m)
    }

    /// Mask that hides the given key positions from every query.
    pub fn without_keys(len: usize, hidden: impl Fn(usize) -> bool) -> Self {
        let mut m = Self::all(len, len);
        for j in (0..len).filter(|&j| hidden(j)) {
            m.forbid_key(j);
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.rows {
            if !self.row(i).iter().any(|&a| a) {
                return Err(Error::Mask(format!("query row {i} has no permitted key")));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allows(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.cols + key]
    }

    pub fn row(&self, query: usize) -> &[bool] {
        &self.allowed[query * self.cols..(query + 1) * self.cols]
    }

    pub fn forbid_key(&mut self, key: usize) {
        for i in 0..self.rows {
            self.allowed[i * self.cols + key] = false;
        }
    }

    pub fn forbid(&mut self, query: usize, key: usize) {
        self.allowed[query * self.cols + key] = false;
    }

    /// Number of keys visible to at least one query.
    pub fn visible_keys(&self) -> usize {
        (0..self.cols).filter(|&j| (0..self.rows).any(|i| self.allows(i, j))).count()
    }

    /// Prepends `slots` always-visible positions (for example a context slot).
    pub fn with_leading_slots(&self, slots: usize) -> Self {
        let rows = self.rows + slots;
        let cols = self.cols + slots;
        let mut allowed = vec![true; rows * cols];
        for i in 0..rows {
            for j in slots..cols {
                // slot rows see whatever key is visible to some original query
                allowed[i * cols + j] = if i >= slots {
                    self.allows(i - slots, j - slots)
                } else {
                    (0..self.rows).any(|q| self.allows(q, j - slots))
                };
            }
        }
        Self { rows, cols, allowed }
    }
}

/// Raw forward pass: returns the `[n×d]` output and the `heads×n×m` probabilities.
pub(crate) fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    m: usize,
    d: usize,
    heads: usize,
    mask: &AttentionMask,
) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; n * d];
    let mut probs = vec![0.0; heads * n * m];
    let mut scores = vec![0.0; m];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            let qi = &q[i * d + off..i * d + off + dh];
            let mut mx = f64::NEG_INFINITY;
            for j in 0..m {
                if mask.allows(i, j) {
                    let kj = &k[j * d + off..j * d + off + dh];
                    let s = crate::kernels::dot(qi, kj) * scale;
                    scores[j] = s;
                    mx = mx.max(s);
                }
            }
            let mut z = 0.0;
            let p = &mut probs[(h * n + i) * m..(h * n + i + 1) * m];
            for j in 0..m {
                if mask.allows(i, j) {
                    let e = (scores[j] - mx).exp();
                    p[j] = e;
                    z += e;
                }
            }
            let o = &mut out[i * d + off..i * d + off + dh];
            for j in 0..m {
                if mask.allows(i, j) {
                    p[j] /= z;
                    let vj = &v[j * d + off..j * d + off + dh];
                    for (ov, &vv) in o.iter_mut().zip(vj) {
                        *ov += p[j] * vv;
                    }
                }
            }
        }
    }
    (out, probs)
}

pub(crate) fn check_attention_dims(
    q: &[usize],
    k: &[usize],
    v: &[usize],
    mask: &AttentionMask,
    heads: usize,
) -> Result<(usize, usize, usize)> {
    if q.len() != 2 || k.len() != 2 || v.len() != 2 {
        return Err(shape("attention operands must be matrices"));
    }
    let (n, d) = (q[0], q[1]);
    let m = k[0];
    if k[1] != d || v[1] != d || v[0] != m {
        return Err(shape(format!("attention q {q:?}, k {k:?}, v {v:?} disagree")));
    }
    if mask.rows() != n || mask.cols() != m {
        return Err(shape(format!(
            "mask {}×{} for {n} queries and {m} keys",
            mask.rows(),
            mask.cols()
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(shape(format!("model dim {d} not divisible into {heads} heads")));
    }
    mask.validate()?;
    Ok((n, m, d))
}

/// Single-head masked attention: each output row is a softmax-weighted
/// combination of the value rows whose keys the mask permits.
pub fn masked_self_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: &AttentionMask,
) -> Result<Tensor> {
    let (n, m, d) = check_attention_dims(q.shape(), k.shape(), v.shape(), mask, 1)?;
    let (out, _) = attention_forward(q.data(), k.data(), v.data(), n, m, d, 1, mask);
    Tensor::matrix(n, d, out)
}
