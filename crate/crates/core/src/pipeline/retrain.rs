//! Retraining strategies for the difficult samples.
//!
//! A [`Retrainer`] fits a [`DifficultHead`] on the difficult training set.
//! `guided` trains one contrastive model per confusion-cell pairing, a fifth
//! model on their concatenated embeddings and the auxiliary head on top.
//! `classic` trains a single contrastive model on all difficult samples.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use log::warn;
use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{confusion_partition, Confusion, FeatureMatrix, PredictionReport};
use crate::error::{Error, Result};
use crate::nn::{to_array, train_auxiliary, train_model, AuxiliaryClassifier, EncoderProjectionModel, NetworkShape, TrainConfig, TrainOutcome};
use crate::rng::{derive_indexed, derive_seed};
use crate::store::{ParamReader, ParamWriter};

/// Confusion cells whose union trains Models 1 to 4, in concatenation order.
pub const CONFUSION_PAIRS: [(Confusion, Confusion); 4] = [
    (Confusion::Tp, Confusion::Fp),
    (Confusion::Tn, Confusion::Fn),
    (Confusion::Tp, Confusion::Tn),
    (Confusion::Fp, Confusion::Fn),
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainConfig {
    pub shape: NetworkShape,
    /// Regime for the contrastive models.
    pub contrastive: TrainConfig,
    /// Regime for the auxiliary head.
    pub auxiliary: TrainConfig,
}

/// The trained model that decides difficult samples.
pub trait DifficultHead: Send + Sync + Debug {
    /// Registry name of the retrainer that produced this head.
    fn kind(&self) -> &'static str;

    fn input_width(&self) -> usize;

    /// Embeddings fed to the auxiliary classifier.
    fn embed(&self, data: &FeatureMatrix) -> Result<Array2<f64>>;

    fn auxiliary(&self) -> &AuxiliaryClassifier;

    /// Training summaries of every network in training order.
    fn training_outcomes(&self) -> Vec<&TrainOutcome>;

    fn predict(&self, data: &FeatureMatrix) -> Result<Vec<u8>> {
        self.auxiliary().predict(&self.embed(data)?)
    }

    fn save(&self, params: &mut ParamWriter) -> Result<serde_json::Value>;
}

pub trait Retrainer: Send + Sync {
    fn name(&self) -> &'static str;

    /// `train_report` and `val_report` are the base classifier's predictions
    /// on the difficult training and validation samples.
    fn fit(
        &self,
        train: &FeatureMatrix,
        train_report: &PredictionReport,
        val: &FeatureMatrix,
        val_report: &PredictionReport,
        cfg: &RetrainConfig,
        seed: u64,
    ) -> Result<Box<dyn DifficultHead>>;

    fn load(&self, manifest: &serde_json::Value, params: &ParamReader<'_>) -> Result<Box<dyn DifficultHead>>;
}

#[derive(Clone, Default)]
pub struct RetrainerRegistry {
    retrainers: BTreeMap<&'static str, Arc<dyn Retrainer>>,
}

impl RetrainerRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding `guided` and `classic`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(GuidedRetrainer));
        reg.register(Arc::new(ClassicRetrainer));
        reg
    }

    pub fn register(&mut self, retrainer: Arc<dyn Retrainer>) {
        self.retrainers.insert(retrainer.name(), retrainer);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Retrainer> {
        self.retrainers
            .get(name)
            .map(|r| r.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "retrainer",
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.retrainers.keys().copied().collect()
    }
}

fn check_inputs(train: &FeatureMatrix, val: &FeatureMatrix) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Empty("difficult training set".into()));
    }
    if !train.has_both_classes() {
        return Err(Error::SingleClass(train.labels()[0]));
    }
    if !val.is_empty() && val.n_features() != train.n_features() {
        return Err(Error::Shape("difficult validation width differs from training width".into()));
    }
    Ok(())
}

fn matrix_with(data: &FeatureMatrix, values: Array2<f64>) -> Result<FeatureMatrix> {
    let width = values.ncols();
    FeatureMatrix::with_ids(width, values.into_raw_vec_and_offset().0, data.labels().to_vec(), data.ids().to_vec())
}

fn fit_auxiliary(
    train_emb: &FeatureMatrix,
    val_emb: &FeatureMatrix,
    cfg: &RetrainConfig,
    seed: u64,
) -> Result<AuxiliaryClassifier> {
    train_auxiliary(
        &to_array(train_emb),
        train_emb.labels(),
        &to_array(val_emb),
        val_emb.labels(),
        &cfg.shape.auxiliary_spec()?,
        &cfg.auxiliary,
        seed,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidedHead {
    pub input_width: usize,
    /// Models 1 to 4; `None` where a confusion cell of the pairing was empty.
    pub pair_models: Vec<Option<EncoderProjectionModel>>,
    /// Width of each pairing's embedding block.
    pub block_width: usize,
    pub model5: EncoderProjectionModel,
    pub auxiliary: AuxiliaryClassifier,
}

impl GuidedHead {
    /// Blocks of Models 1 to 4 side by side; skipped models give zeros.
    pub fn concat_embeddings(&self, data: &FeatureMatrix) -> Result<Array2<f64>> {
        let w = self.block_width;
        let mut out = Array2::zeros((data.n_samples(), w * self.pair_models.len()));
        for (k, model) in self.pair_models.iter().enumerate() {
            if let Some(m) = model {
                out.slice_mut(s![.., k * w..(k + 1) * w]).assign(&m.embed(data)?);
            }
        }
        Ok(out)
    }
}

impl DifficultHead for GuidedHead {
    fn kind(&self) -> &'static str {
        "guided"
    }

    fn input_width(&self) -> usize {
        self.input_width
    }

    fn embed(&self, data: &FeatureMatrix) -> Result<Array2<f64>> {
        if data.n_features() != self.input_width {
            return Err(Error::Shape(format!(
                "guided head expects width {}, data has {}",
                self.input_width,
                data.n_features()
            )));
        }
        let concat = self.concat_embeddings(data)?;
        if concat.nrows() == 0 {
            return Ok(Array2::zeros((0, self.model5.embedding_width())));
        }
        self.model5.encoder.predict(&concat)
    }

    fn auxiliary(&self) -> &AuxiliaryClassifier {
        &self.auxiliary
    }

    fn training_outcomes(&self) -> Vec<&TrainOutcome> {
        let mut out: Vec<&TrainOutcome> = self.pair_models.iter().flatten().map(|m| &m.outcome).collect();
        out.push(&self.model5.outcome);
        out.push(&self.auxiliary.outcome);
        out
    }

    fn save(&self, params: &mut ParamWriter) -> Result<serde_json::Value> {
        let pairs = self
            .pair_models
            .iter()
            .map(|m| m.as_ref().map(|m| m.save(params)).transpose())
            .collect::<Result<Vec<_>>>()?;
        Ok(serde_json::json!({
            "input_width": self.input_width,
            "block_width": self.block_width,
            "pair_models": pairs,
            "model5": self.model5.save(params)?,
            "auxiliary": self.auxiliary.save(params)?,
        }))
    }
}

fn field<'a>(manifest: &'a serde_json::Value, key: &str) -> Result<&'a serde_json::Value> {
    manifest
        .get(key)
        .ok_or_else(|| Error::Corrupt(format!("head manifest lacks {key}")))
}

pub struct GuidedRetrainer;

impl GuidedRetrainer {
    pub fn fit_head(
        train: &FeatureMatrix,
        train_report: &PredictionReport,
        val: &FeatureMatrix,
        val_report: &PredictionReport,
        cfg: &RetrainConfig,
        seed: u64,
    ) -> Result<GuidedHead> {
        check_inputs(train, val)?;
        let train_cells = confusion_partition(train_report, train.labels())?;
        let val_cells = confusion_partition(val_report, val.labels())?;
        if train_report.ids != train.ids() || val_report.ids != val.ids() {
            return Err(Error::Shape("base reports do not cover the difficult sets".into()));
        }

        let pair_models = CONFUSION_PAIRS
            .par_iter()
            .enumerate()
            .map(|(k, &(a, b))| {
                let ids: Vec<usize> = train_cells.cell(a).union(train_cells.cell(b)).copied().collect();
                if train_cells.cell(a).is_empty() || train_cells.cell(b).is_empty() {
                    warn!(
                        "Model{} skipped: no {} samples in the difficult training set; its embedding block is zero",
                        k + 1,
                        if train_cells.cell(a).is_empty() { a.as_str() } else { b.as_str() }
                    );
                    return Ok(None);
                }
                let pair_train = train.select_ids(&ids)?;
                let val_ids: Vec<usize> = val_cells.cell(a).union(val_cells.cell(b)).copied().collect();
                let pair_val = if val_ids.is_empty() { val.clone() } else { val.select_ids(&val_ids)? };
                let model = train_model(
                    &pair_train,
                    &pair_val,
                    &cfg.shape,
                    &cfg.contrastive,
                    derive_indexed(seed, "pair-model", k as u64),
                )?;
                Ok(Some(model))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut head = GuidedHead {
            input_width: train.n_features(),
            pair_models,
            block_width: cfg.shape.embedding_width(),
            model5: EncoderProjectionModel::new(4 * cfg.shape.embedding_width(), &cfg.shape, 0)?,
            auxiliary: AuxiliaryClassifier::new(cfg.shape.embedding_width(), &cfg.shape.auxiliary_spec()?, 0)?,
        };
        if head.pair_models.iter().all(Option::is_none) {
            warn!("every confusion pairing is missing a cell; Model5 sees only zero blocks");
        }
        let concat_train = matrix_with(train, head.concat_embeddings(train)?)?;
        let concat_val = matrix_with(val, head.concat_embeddings(val)?)?;
        head.model5 = train_model(&concat_train, &concat_val, &cfg.shape, &cfg.contrastive, derive_seed(seed, "model5"))?;
        let emb_train = matrix_with(train, head.embed(train)?)?;
        let emb_val = matrix_with(val, head.embed(val)?)?;
        head.auxiliary = fit_auxiliary(&emb_train, &emb_val, cfg, derive_seed(seed, "auxiliary"))?;
        Ok(head)
    }
}

impl Retrainer for GuidedRetrainer {
    fn name(&self) -> &'static str {
        "guided"
    }

    fn fit(
        &self,
        train: &FeatureMatrix,
        train_report: &PredictionReport,
        val: &FeatureMatrix,
        val_report: &PredictionReport,
        cfg: &RetrainConfig,
        seed: u64,
    ) -> Result<Box<dyn DifficultHead>> {
        Ok(Box::new(Self::fit_head(train, train_report, val, val_report, cfg, seed)?))
    }

    fn load(&self, manifest: &serde_json::Value, params: &ParamReader<'_>) -> Result<Box<dyn DifficultHead>> {
        let input_width: usize = serde_json::from_value(field(manifest, "input_width")?.clone())?;
        let block_width: usize = serde_json::from_value(field(manifest, "block_width")?.clone())?;
        let pair_models = field(manifest, "pair_models")?
            .as_array()
            .ok_or_else(|| Error::Corrupt("pair_models is not a list".into()))?
            .iter()
            .map(|m| {
                if m.is_null() {
                    Ok(None)
                } else {
                    EncoderProjectionModel::load(m, params).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if pair_models.len() != CONFUSION_PAIRS.len() {
            return Err(Error::Corrupt(format!("expected 4 pair models, found {}", pair_models.len())));
        }
        let model5 = EncoderProjectionModel::load(field(manifest, "model5")?, params)?;
        let auxiliary = AuxiliaryClassifier::load(field(manifest, "auxiliary")?, params)?;
        if pair_models.iter().flatten().any(|m| m.input_width() != input_width || m.embedding_width() != block_width) {
            return Err(Error::Corrupt("pair model widths are inconsistent".into()));
        }
        if model5.input_width() != 4 * block_width || auxiliary.input_width() != model5.embedding_width() {
            return Err(Error::Corrupt("guided head widths are inconsistent".into()));
        }
        Ok(Box::new(GuidedHead {
            input_width,
            pair_models,
            block_width,
            model5,
            auxiliary,
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicHead {
    pub model: EncoderProjectionModel,
    pub auxiliary: AuxiliaryClassifier,
}

impl DifficultHead for ClassicHead {
    fn kind(&self) -> &'static str {
        "classic"
    }

    fn input_width(&self) -> usize {
        self.model.input_width()
    }

    fn embed(&self, data: &FeatureMatrix) -> Result<Array2<f64>> {
        self.model.embed(data)
    }

    fn auxiliary(&self) -> &AuxiliaryClassifier {
        &self.auxiliary
    }

    fn training_outcomes(&self) -> Vec<&TrainOutcome> {
        vec![&self.model.outcome, &self.auxiliary.outcome]
    }

    fn save(&self, params: &mut ParamWriter) -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "model": self.model.save(params)?,
            "auxiliary": self.auxiliary.save(params)?,
        }))
    }
}

pub struct ClassicRetrainer;

impl ClassicRetrainer {
    pub fn fit_head(
        train: &FeatureMatrix,
        val: &FeatureMatrix,
        cfg: &RetrainConfig,
        seed: u64,
    ) -> Result<ClassicHead> {
        check_inputs(train, val)?;
        let model = train_model(train, val, &cfg.shape, &cfg.contrastive, derive_seed(seed, "model"))?;
        let emb_train = matrix_with(train, model.embed(train)?)?;
        let emb_val = matrix_with(val, model.embed(val)?)?;
        let auxiliary = fit_auxiliary(&emb_train, &emb_val, cfg, derive_seed(seed, "auxiliary"))?;
        Ok(ClassicHead { model, auxiliary })
    }
}

impl Retrainer for ClassicRetrainer {
    fn name(&self) -> &'static str {
        "classic"
    }

    fn fit(
        &self,
        train: &FeatureMatrix,
        _train_report: &PredictionReport,
        val: &FeatureMatrix,
        _val_report: &PredictionReport,
        cfg: &RetrainConfig,
        seed: u64,
    ) -> Result<Box<dyn DifficultHead>> {
        Ok(Box::new(Self::fit_head(train, val, cfg, seed)?))
    }

    fn load(&self, manifest: &serde_json::Value, params: &ParamReader<'_>) -> Result<Box<dyn DifficultHead>> {
        let model = EncoderProjectionModel::load(field(manifest, "model")?, params)?;
        let auxiliary = AuxiliaryClassifier::load(field(manifest, "auxiliary")?, params)?;
        if auxiliary.input_width() != model.embedding_width() {
            return Err(Error::Corrupt("auxiliary width differs from encoder width".into()));
        }
        Ok(Box::new(ClassicHead { model, auxiliary }))
    }
}
