//! The momentum-contrast objective: InfoNCE loss against a FIFO queue of
//! negative key embeddings.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// InfoNCE: −log( exp(q·k⁺/τ) / (exp(q·k⁺/τ) + Σᵢ exp(q·nᵢ/τ)) ).
/// Inputs are expected unit-normalized. Accumulates in f64.
pub fn contrastive_loss(q: &[f32], k_pos: &[f32], queue: &Array2<f32>, tau: f32) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    let tau = tau as f64;
    let pos = dot(q, k_pos) / tau;
    let mut logits = vec![pos];
    for row in queue.axis_iter(Axis(0)) {
        logits.push(dot(q, row.as_slice().unwrap()) / tau);
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    Ok(lse - pos)
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Batched InfoNCE with the gradient w.r.t. the (normalized) queries.
/// `q`, `k` are (B, D) unit rows, `queue` is (K, D). Returns (mean loss, dq).
pub fn contrastive_loss_batch(
    q: &Array2<f32>,
    k: &Array2<f32>,
    queue: &Array2<f32>,
    tau: f32,
) -> Result<(f64, Array2<f32>)> {
    if tau <= 0.0 {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    let (b, d) = q.dim();
    let kq = queue.nrows();
    let tau64 = tau as f64;
    let l_neg = q.dot(&queue.t()); // (B, K)
    let mut loss = 0.0f64;
    let mut dq = Array2::<f32>::zeros((b, d));
    for i in 0..b {
        let pos = dot(q.row(i).as_slice().unwrap(), k.row(i).as_slice().unwrap()) / tau64;
        let mut logits = Vec::with_capacity(kq + 1);
        logits.push(pos);
        for j in 0..kq {
            logits.push(l_neg[[i, j]] as f64 / tau64);
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|&l| (l - m).exp()).sum();
        loss += m + z.ln() - pos;
        // softmax probabilities; d(loss)/d(logit_j) = p_j − 1[j = pos]
        let inv_scale = 1.0 / (tau64 * b as f64);
        for (j, &l) in logits.iter().enumerate() {
            let mut p = (l - m).exp() / z;
            if j == 0 {
                p -= 1.0;
            }
            let coef = (p * inv_scale) as f32;
            let src = if j == 0 { k.row(i) } else { queue.row(j - 1) };
            let mut dst = dq.row_mut(i);
            dst.scaled_add(coef, &src);
        }
    }
    Ok((loss / b as f64, dq))
}

/// Row-wise L2 normalization; returns the normalized rows and the original
/// norms (for the backward pass).
pub fn normalize_rows(x: &Array2<f32>) -> (Array2<f32>, Array1<f32>) {
    let mut out = x.clone();
    let mut norms = Array1::zeros(x.nrows());
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let n = row.iter().map(|&v| v * v).sum::<f32>().sqrt().max(1e-12);
        row.mapv_inplace(|v| v / n);
        norms[i] = n;
    }
    (out, norms)
}

/// Backward through row-wise L2 normalization: dx = (dz − z(z·dz)) / ‖x‖.
pub fn normalize_rows_backward(
    z: &Array2<f32>,
    norms: &Array1<f32>,
    dz: &Array2<f32>,
) -> Array2<f32> {
    let mut dx = dz.clone();
    for i in 0..z.nrows() {
        let zi = z.row(i);
        let proj: f32 = zi.iter().zip(dz.row(i).iter()).map(|(&a, &b)| a * b).sum();
        let n = norms[i];
        let mut row = dx.row_mut(i);
        for (d, &zv) in row.iter_mut().zip(zi.iter()) {
            *d = (*d - zv * proj) / n;
        }
    }
    dx
}

/// Fixed-capacity FIFO of unit-normalized key embeddings, pre-filled with
/// random unit vectors so the size is always K.
#[derive(Debug, Clone)]
pub struct EmbeddingQueue {
    data: Array2<f32>, // (K, D)
    head: usize,
}

impl EmbeddingQueue {
    pub fn new(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Self {
        let mut data = Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.0..1.0f32));
        let (normed, _) = normalize_rows(&data);
        data = normed;
        Self { data, head: 0 }
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn as_matrix(&self) -> &Array2<f32> {
        &self.data
    }

    /// Overwrites the oldest rows with a new key batch.
    pub fn push_batch(&mut self, keys: &Array2<f32>) {
        let k = self.data.nrows();
        for row in keys.axis_iter(Axis(0)) {
            self.data.row_mut(self.head).assign(&row);
            self.head = (self.head + 1) % k;
        }
    }
}
