//! Top-K feature selection by two-sample t-statistic magnitude.

use hardsplit_core::{Error, FeatureMatrix, Result};

/// Floor for the pooled standard deviation.
pub const POOLED_STD_FLOOR: f64 = 1e-12;

/// `|mean_1 - mean_0| / pooled_std` for every feature.
pub fn feature_scores(data: &FeatureMatrix) -> Result<Vec<f64>> {
    let n1 = data.count_label(1);
    let n0 = data.count_label(0);
    if n1 == 0 || n0 == 0 {
        return Err(Error::SingleClass(if n1 == 0 { 0 } else { 1 }));
    }
    let d = data.n_features();
    let mut sum = [vec![0.0; d], vec![0.0; d]];
    for (row, &y) in data.rows().zip(data.labels()) {
        for (s, v) in sum[y as usize].iter_mut().zip(row) {
            *s += v;
        }
    }
    let means = [
        sum[0].iter().map(|s| s / n0 as f64).collect::<Vec<_>>(),
        sum[1].iter().map(|s| s / n1 as f64).collect::<Vec<_>>(),
    ];
    let mut ss = vec![0.0; d];
    for (row, &y) in data.rows().zip(data.labels()) {
        for j in 0..d {
            let dev = row[j] - means[y as usize][j];
            ss[j] += dev * dev;
        }
    }
    let dof = (n0 + n1).saturating_sub(2).max(1) as f64;
    Ok((0..d)
        .map(|j| {
            let pooled = (ss[j] / dof).sqrt().max(POOLED_STD_FLOOR);
            (means[1][j] - means[0][j]).abs() / pooled
        })
        .collect())
}

/// Indices of the `k` best-scoring features in ascending index order;
/// ties prefer the lower index.
pub fn feature_select_topk(train: &FeatureMatrix, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > train.n_features() {
        return Err(Error::Config(format!(
            "top-k of {k} is out of range for {} features",
            train.n_features()
        )));
    }
    let scores = feature_scores(train)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    Ok(kept)
}
