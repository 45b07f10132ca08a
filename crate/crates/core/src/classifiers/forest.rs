//! Random forest of Gini-split decision trees, plus the error-proxy helper
//! used to locate difficult samples for hard-probability base classifiers.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_width, BaseClassifier, BaseConfig, BaseLearner, ScoreKind};
use crate::data::{FeatureMatrix, PredictionReport};
use crate::error::{Error, Result};
use crate::rng::{derive_indexed, seeded, Rng};
use crate::store::{BlockRef, ParamReader, ParamWriter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means ceil(sqrt(n_features)).
    pub max_features: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 8,
            min_leaf: 2,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        /// Positive-class fraction; the negative fraction is `1 - p_pos`.
        p_pos: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { p_pos } => return p_pos,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub max_depth: usize,
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Mean positive-class leaf probability over all trees.
    pub fn predict_proba(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        check_width(self.n_features, data)?;
        let n = self.trees.len() as f64;
        Ok(data
            .rows()
            .map(|x| self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / n)
            .collect())
    }
}

fn gini(n_neg: usize, n_pos: usize) -> f64 {
    let n = (n_neg + n_pos) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (a, b) = (n_neg as f64 / n, n_pos as f64 / n);
    1.0 - a * a - b * b
}

struct Builder<'a> {
    data: &'a FeatureMatrix,
    cfg: &'a ForestConfig,
    mtry: usize,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let pos = idx.iter().filter(|&&i| self.data.labels()[i] == 1).count();
        self.nodes.push(TreeNode::Leaf {
            p_pos: pos as f64 / idx.len() as f64,
        });
        self.nodes.len() - 1
    }

    /// Best (feature, threshold, weighted impurity) among sampled features.
    fn best_split(&self, idx: &[usize], rng: &mut Rng) -> Option<(usize, f64, f64)> {
        let labels = self.data.labels();
        let n = idx.len();
        let total_pos = idx.iter().filter(|&&i| labels[i] == 1).count();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut column: Vec<(f64, u8)> = Vec::with_capacity(n);
        for feature in sample(rng, self.data.n_features(), self.mtry).into_iter() {
            column.clear();
            column.extend(idx.iter().map(|&i| (self.data.row(i)[feature], labels[i])));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0;
            for cut in 1..n {
                left_pos += usize::from(column[cut - 1].1);
                let (lo, hi) = (column[cut - 1].0, column[cut].0);
                if lo == hi || cut < self.cfg.min_leaf || n - cut < self.cfg.min_leaf {
                    continue;
                }
                let right_pos = total_pos - left_pos;
                let score = (cut as f64 * gini(cut - left_pos, left_pos)
                    + (n - cut) as f64 * gini(n - cut - right_pos, right_pos))
                    / n as f64;
                if best.is_none_or(|b| score < b.2) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some((feature, threshold, score));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut Rng) -> usize {
        let labels = self.data.labels();
        let pos = idx.iter().filter(|&&i| labels[i] == 1).count();
        let parent = gini(idx.len() - pos, pos);
        if depth >= self.cfg.max_depth || parent == 0.0 || idx.len() < 2 * self.cfg.min_leaf {
            return self.leaf(&idx);
        }
        match self.best_split(&idx, rng) {
            Some((feature, threshold, score)) if score < parent - 1e-12 => {
                let (l, r): (Vec<usize>, Vec<usize>) = idx
                    .iter()
                    .partition(|&&i| self.data.row(i)[feature] <= threshold);
                let at = self.nodes.len();
                self.nodes.push(TreeNode::Leaf { p_pos: 0.0 });
                let left = self.grow(l, depth + 1, rng);
                let right = self.grow(r, depth + 1, rng);
                self.nodes[at] = TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                at
            }
            _ => self.leaf(&idx),
        }
    }
}

/// Trains `n_trees` Gini trees. With more than one tree each is fitted on a
/// bootstrap resample; a single tree sees the full data.
pub fn train_random_forest(data: &FeatureMatrix, cfg: &ForestConfig, seed: u64) -> Result<ForestModel> {
    if data.is_empty() {
        return Err(Error::Empty("forest training data".into()));
    }
    if cfg.n_trees == 0 || cfg.min_leaf == 0 {
        return Err(Error::Config("forest needs n_trees >= 1 and min_leaf >= 1".into()));
    }
    let d = data.n_features().max(1);
    let mtry = cfg
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d);
    let n = data.n_samples();
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeded(derive_indexed(seed, "tree", t as u64));
            let idx: Vec<usize> = if cfg.n_trees > 1 {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut b = Builder {
                data,
                cfg,
                mtry: if data.n_features() == 0 { 0 } else { mtry },
                nodes: Vec::new(),
            };
            b.grow(idx, 0, &mut rng);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(ForestModel {
        trees,
        n_features: data.n_features(),
        max_depth: cfg.max_depth,
    })
}

/// Proxy labels: 1 where the base classifier was wrong, 0 where it was right.
pub fn error_proxy_labels(base_report: &PredictionReport) -> Vec<u8> {
    base_report.confusion.iter().map(|c| u8::from(c.is_error())).collect()
}

/// Fits a forest that predicts where the base classifier errs and returns it
/// with its error probability for every sample of `data`. Samples scored
/// exactly 0 are the easy ones.
pub fn error_proxy_probabilities(
    data: &FeatureMatrix,
    base_report: &PredictionReport,
    cfg: &ForestConfig,
    seed: u64,
) -> Result<(ForestModel, Vec<f64>)> {
    if base_report.ids != data.ids() {
        return Err(Error::Shape("base report does not cover the data ids".into()));
    }
    let proxy = data.relabel(error_proxy_labels(base_report))?;
    let forest = train_random_forest(&proxy, cfg, seed)?;
    let probs = forest.predict_proba(data)?;
    Ok((forest, probs))
}

#[derive(Serialize, Deserialize)]
struct ForestManifest {
    n_features: usize,
    max_depth: usize,
    node_counts: Vec<usize>,
    /// Split feature per node, -1 for leaves.
    feature: BlockRef,
    threshold: BlockRef,
    left: BlockRef,
    right: BlockRef,
    p_pos: BlockRef,
}

impl ForestModel {
    pub fn save_params(&self, params: &mut ParamWriter) -> Result<serde_json::Value> {
        let total: usize = self.trees.iter().map(|t| t.nodes.len()).sum();
        let mut cols: [Vec<f64>; 5] = Default::default();
        for c in &mut cols {
            c.reserve(total);
        }
        for node in self.trees.iter().flat_map(|t| &t.nodes) {
            let row = match *node {
                TreeNode::Leaf { p_pos } => [-1.0, 0.0, 0.0, 0.0, p_pos],
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => [feature as f64, threshold, left as f64, right as f64, 0.0],
            };
            for (c, v) in cols.iter_mut().zip(row) {
                c.push(v);
            }
        }
        Ok(serde_json::to_value(ForestManifest {
            n_features: self.n_features,
            max_depth: self.max_depth,
            node_counts: self.trees.iter().map(|t| t.nodes.len()).collect(),
            feature: params.put_vec(&cols[0]),
            threshold: params.put_vec(&cols[1]),
            left: params.put_vec(&cols[2]),
            right: params.put_vec(&cols[3]),
            p_pos: params.put_vec(&cols[4]),
        })?)
    }

    pub fn load_params(manifest: &serde_json::Value, params: &ParamReader<'_>) -> Result<Self> {
        let m: ForestManifest = serde_json::from_value(manifest.clone())?;
        let total: usize = m.node_counts.iter().sum();
        let get = |b: &BlockRef| params.get_shaped(b, &[total]);
        let (feature, threshold, left, right, p_pos) = (
            get(&m.feature)?,
            get(&m.threshold)?,
            get(&m.left)?,
            get(&m.right)?,
            get(&m.p_pos)?,
        );
        let as_index = |v: f64, bound: usize| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < bound {
                Ok(v as usize)
            } else {
                Err(Error::Corrupt(format!("bad tree index {v}")))
            }
        };
        let mut trees = Vec::with_capacity(m.node_counts.len());
        let mut at = 0;
        for &count in &m.node_counts {
            let mut nodes = Vec::with_capacity(count);
            for k in at..at + count {
                nodes.push(if feature[k] < 0.0 {
                    TreeNode::Leaf { p_pos: p_pos[k] }
                } else {
                    TreeNode::Split {
                        feature: as_index(feature[k], m.n_features)?,
                        threshold: threshold[k],
                        left: as_index(left[k], count)?,
                        right: as_index(right[k], count)?,
                    }
                });
            }
            at += count;
            if nodes.is_empty() {
                return Err(Error::Corrupt("empty tree".into()));
            }
            trees.push(Tree { nodes });
        }
        if trees.is_empty() {
            return Err(Error::Corrupt("forest without trees".into()));
        }
        Ok(Self {
            trees,
            n_features: m.n_features,
            max_depth: m.max_depth,
        })
    }
}

impl BaseClassifier for ForestModel {
    fn kind(&self) -> &'static str {
        "forest"
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score_kind(&self) -> ScoreKind {
        ScoreKind::Probability
    }

    fn scores(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        self.predict_proba(data)
    }

    fn save(&self, params: &mut ParamWriter) -> Result<serde_json::Value> {
        self.save_params(params)
    }
}

pub struct ForestLearner;

impl BaseLearner for ForestLearner {
    fn name(&self) -> &'static str {
        "forest"
    }

    fn fit(&self, data: &FeatureMatrix, cfg: &BaseConfig, seed: u64) -> Result<Box<dyn BaseClassifier>> {
        Ok(Box::new(train_random_forest(data, &cfg.forest, seed)?))
    }

    fn load(&self, manifest: &serde_json::Value, params: &ParamReader<'_>) -> Result<Box<dyn BaseClassifier>> {
        Ok(Box::new(ForestModel::load_params(manifest, params)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data() -> FeatureMatrix {
        // label = x0 > 4.5, second feature is noise
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
        let labels = (0..10).map(|i| u8::from(i > 4)).collect();
        FeatureMatrix::from_rows(&rows, labels).unwrap()
    }

    /// Exhaustive scan: does some single-feature threshold classify perfectly?
    fn perfect_stump_exists(data: &FeatureMatrix) -> bool {
        (0..data.n_features()).any(|f| {
            data.rows().any(|cut| {
                let t = cut[f];
                let pred = |x: &[f64]| u8::from(x[f] > t);
                data.rows().zip(data.labels()).all(|(x, &l)| pred(x) == l)
                    || data.rows().zip(data.labels()).all(|(x, &l)| pred(x) != l)
            })
        })
    }

    #[test]
    fn root_only_tree_predicts_prior() {
        let data = line_data();
        let cfg = ForestConfig {
            n_trees: 1,
            max_depth: 0,
            ..ForestConfig::default()
        };
        let forest = train_random_forest(&data, &cfg, 3).unwrap();
        let p = forest.predict_proba(&data).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn threshold_data_is_fit_exactly() {
        let data = line_data();
        assert!(perfect_stump_exists(&data));
        let cfg = ForestConfig {
            n_trees: 1,
            max_depth: 1,
            min_leaf: 1,
            max_features: Some(2),
        };
        let forest = train_random_forest(&data, &cfg, 3).unwrap();
        let p = forest.predict_proba(&data).unwrap();
        for (v, &l) in p.iter().zip(data.labels()) {
            assert_eq!(u8::from(*v >= 0.5), l);
        }
        assert!(forest.trees[0].depth() <= 1);
    }

    #[test]
    fn forest_is_deterministic_and_averages_trees() {
        let data = line_data();
        let cfg = ForestConfig {
            n_trees: 7,
            max_depth: 3,
            min_leaf: 1,
            max_features: None,
        };
        let a = train_random_forest(&data, &cfg, 5).unwrap();
        let b = train_random_forest(&data, &cfg, 5).unwrap();
        assert_eq!(a, b);
        let p = a.predict_proba(&data).unwrap();
        for (x, &pv) in data.rows().zip(&p) {
            let mean = a.trees.iter().map(|t| t.predict(x)).sum::<f64>() / 7.0;
            assert_eq!(pv, mean);
            assert!((0.0..=1.0).contains(&pv));
        }
        assert!(a.trees.iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn error_proxy_handles_perfect_base() {
        let data = line_data();
        let probs = data.labels().iter().map(|&l| f64::from(l)).collect();
        let report = PredictionReport::for_data(&data, probs).unwrap();
        let (_, p) = error_proxy_probabilities(&data, &report, &ForestConfig::default(), 1).unwrap();
        assert!(p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn error_proxy_finds_the_error_region() {
        // base is wrong on every sample with x0 >= 30
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let data = FeatureMatrix::from_rows(&rows, labels.clone()).unwrap();
        let probs = (0..40)
            .map(|i| {
                let right = f64::from(labels[i]);
                if i >= 30 { 1.0 - right } else { right }
            })
            .collect();
        let report = PredictionReport::for_data(&data, probs).unwrap();
        let cfg = ForestConfig {
            n_trees: 25,
            max_depth: 4,
            min_leaf: 1,
            max_features: Some(2),
        };
        let (_, p) = error_proxy_probabilities(&data, &report, &cfg, 4).unwrap();
        assert!(p[30..].iter().all(|&v| v > 0.0));
        assert!(p[..20].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_proxy_has_no_easy_samples() {
        let data = line_data();
        let mut probs: Vec<f64> = data.labels().iter().map(|&l| f64::from(l)).collect();
        probs[0] = 1.0; // one error
        let report = PredictionReport::for_data(&data, probs).unwrap();
        let cfg = ForestConfig {
            n_trees: 1,
            max_depth: 0,
            ..ForestConfig::default()
        };
        let (_, p) = error_proxy_probabilities(&data, &report, &cfg, 1).unwrap();
        assert!(p.iter().all(|&v| v == 0.1));
    }

    #[test]
    fn persistence_round_trip() {
        let data = line_data();
        let forest = train_random_forest(&data, &ForestConfig::default(), 2).unwrap();
        let mut w = ParamWriter::new();
        let manifest = forest.save_params(&mut w).unwrap();
        let buf = w.into_inner();
        let back = ForestModel::load_params(&manifest, &ParamReader::new(&buf)).unwrap();
        assert_eq!(back, forest);
    }
}
