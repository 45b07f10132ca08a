//! Supervised contrastive loss over L2-normalized embeddings.
//!
//! For anchor `i` with positives `P(i)` (same label, not `i`) the term is
//! `log sum_{a != i} exp(z_i.z_a / tau) - mean_{p in P(i)} z_i.z_p / tau`.
//! The loss averages that term over all anchors; anchors without positives
//! contribute zero.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Row-wise L2 normalization. Returns the normalized rows and the norms.
pub fn l2_normalize(u: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = u.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(1e-12));
    let z = u / &norms.view().insert_axis(Axis(1));
    (z, norms)
}

/// Loss and gradient with respect to already-normalized embeddings `z`.
pub fn supcon_loss(z: &Array2<f64>, labels: &[u8], temperature: f64) -> Result<(f64, Array2<f64>)> {
    let n = z.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} embeddings", labels.len())));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!("contrastive batch needs at least 2 samples, got {n}")));
    }
    let sim = z.dot(&z.t()) / temperature;
    let mut g = Array2::<f64>::zeros((n, n));
    let mut total = 0.0;
    for i in 0..n {
        let n_pos = (0..n).filter(|&j| j != i && labels[j] == labels[i]).count();
        if n_pos == 0 {
            continue;
        }
        let row = sim.row(i);
        let max = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&j| j != i).map(|j| (row[j] - max).exp()).sum();
        let lse = max + denom.ln();
        let pos_mean = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .map(|j| row[j])
            .sum::<f64>()
            / n_pos as f64;
        total += lse - pos_mean;
        for j in (0..n).filter(|&j| j != i) {
            let soft = (row[j] - lse).exp();
            let target = if labels[j] == labels[i] { 1.0 / n_pos as f64 } else { 0.0 };
            g[[i, j]] = (soft - target) / n as f64;
        }
    }
    let sym = &g + &g.t();
    let grad = sym.dot(z) / temperature;
    Ok((total / n as f64, grad))
}

/// Loss on raw projections: normalizes rows, then applies [`supcon_loss`].
/// The gradient is taken with respect to the raw projections.
pub fn supcon_loss_raw(u: &Array2<f64>, labels: &[u8], temperature: f64) -> Result<(f64, Array2<f64>)> {
    let (z, norms) = l2_normalize(u);
    let (loss, gz) = supcon_loss(&z, labels, temperature)?;
    let dots = (&z * &gz).sum_axis(Axis(1)).insert_axis(Axis(1));
    let gu = (&gz - &z * &dots) / norms.view().insert_axis(Axis(1));
    Ok((loss, gu))
}
