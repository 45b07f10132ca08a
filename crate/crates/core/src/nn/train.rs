use log::debug;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpSpec, Mode};
use super::supcon::{l2_normalize, supcon_loss_raw, DEFAULT_TEMPERATURE};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Rng};
use crate::store::{ParamReader, ParamWriter};

/// Minimum change that counts as an improvement for early stopping.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-7;

/// Validation sets are scored in chunks of this many rows so the pairwise
/// similarity matrix stays bounded.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_divisor: usize,
    pub learning_rate: f64,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 2000,
            patience: 100,
            batch_divisor: 10,
            learning_rate: 0.001,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_divisor == 0 {
            return Err(Error::Config("max_epochs and batch_divisor must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// Layer widths of the contrastive model and of the auxiliary head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkShape {
    pub encoder: Vec<usize>,
    pub projection: Vec<usize>,
    /// Hidden widths of the auxiliary head; a 2-unit sigmoid layer follows.
    pub auxiliary: Vec<usize>,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            encoder: vec![256, 128, 64, 32],
            projection: vec![16, 8],
            auxiliary: vec![64, 32, 16, 8],
        }
    }
}

impl NetworkShape {
    pub fn embedding_width(&self) -> usize {
        self.encoder.last().copied().unwrap_or(0)
    }

    pub fn auxiliary_spec(&self) -> Result<MlpSpec> {
        let mut widths = self.auxiliary.clone();
        widths.push(2);
        MlpSpec::classifier(&widths)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Best early-stopping metric (loss for contrastive models, accuracy for
    /// the auxiliary head).
    pub best_metric: f64,
    /// Early-stopping metric after each epoch.
    pub history: Vec<f64>,
}

pub fn to_array(data: &FeatureMatrix) -> Array2<f64> {
    Array2::from_shape_vec((data.n_samples(), data.n_features()), data.values().to_vec())
        .expect("feature matrix is rectangular")
}

/// Batch size `max(2, floor(n / divisor))`.
pub fn batch_size(n: usize, divisor: usize) -> usize {
    (n / divisor.max(1)).max(2)
}

/// Shuffled mini-batches with each class dealt round-robin across batches.
/// A trailing run of single-class batches is merged into the last mixed one.
pub fn stratified_batches(labels: &[u8], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let n = labels.len();
    if n == 0 {
        return Vec::new();
    }
    let n_batches = (n / batch_size.max(1)).max(1);
    let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
    pos.shuffle(rng);
    neg.shuffle(rng);
    let mut batches = vec![Vec::new(); n_batches];
    for (k, &i) in neg.iter().enumerate() {
        batches[k % n_batches].push(i);
    }
    // Continue the rotation so batch sizes stay within one of each other.
    for (k, &i) in pos.iter().enumerate() {
        batches[(neg.len() + k) % n_batches].push(i);
    }
    let mixed = |b: &[usize]| b.iter().any(|&i| labels[i] == 1) && b.iter().any(|&i| labels[i] == 0);
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(n_batches);
    let mut pending = Vec::new();
    for mut b in batches {
        if b.is_empty() {
            continue;
        }
        pending.append(&mut b);
        if mixed(&pending) {
            out.push(std::mem::take(&mut pending));
        }
    }
    if !pending.is_empty() {
        match out.last_mut() {
            Some(last) => last.append(&mut pending),
            None => out.push(pending),
        }
    }
    for b in &mut out {
        b.shuffle(rng);
    }
    out.shuffle(rng);
    out
}

fn require_both_classes(labels: &[u8], what: &str) -> Result<()> {
    match (labels.contains(&0), labels.contains(&1)) {
        (true, true) => Ok(()),
        (true, false) => Err(Error::SingleClass(0)),
        (false, true) => Err(Error::SingleClass(1)),
        (false, false) => Err(Error::Empty(what.into())),
    }
}

/// Tracks the best metric and the patience counter.
struct Stopper {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    waited: usize,
    higher_is_better: bool,
}

impl Stopper {
    fn new(patience: usize, higher_is_better: bool) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            waited: 0,
            higher_is_better,
        }
    }

    /// Records an epoch; returns whether it improved on the best so far.
    fn record(&mut self, epoch: usize, metric: f64) -> bool {
        let improved = match self.best {
            None => metric.is_finite(),
            Some(best) if self.higher_is_better => metric > best + IMPROVEMENT_TOLERANCE,
            Some(best) => metric < best - IMPROVEMENT_TOLERANCE,
        };
        if improved {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.waited = 0;
        } else {
            self.waited += 1;
        }
        improved
    }

    fn should_stop(&self) -> bool {
        self.waited >= self.patience
    }
}

/// Encoder followed by a projection network, trained with the supervised
/// contrastive loss. Only the encoder is used for embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderProjectionModel {
    pub encoder: Mlp,
    pub projection: Mlp,
    pub outcome: TrainOutcome,
}

impl EncoderProjectionModel {
    pub fn new(input_width: usize, shape: &NetworkShape, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let encoder = Mlp::new(input_width, &MlpSpec::encoder(&shape.encoder)?, &mut rng)?;
        let projection = Mlp::new(encoder.output_width(), &MlpSpec::projection(&shape.projection)?, &mut rng)?;
        Ok(Self {
            encoder,
            projection,
            outcome: TrainOutcome::default(),
        })
    }

    pub fn input_width(&self) -> usize {
        self.encoder.input_width
    }

    pub fn embedding_width(&self) -> usize {
        self.encoder.output_width()
    }

    /// Eval-mode pass: encoder output and unit-norm projection output.
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let enc = self.encoder.predict(x)?;
        let proj = self.projection.predict(&enc)?;
        Ok((enc, l2_normalize(&proj).0))
    }

    pub fn embed(&self, data: &FeatureMatrix) -> Result<Array2<f64>> {
        if data.n_features() != self.input_width() {
            return Err(Error::Shape(format!(
                "model expects width {}, data has {}",
                self.input_width(),
                data.n_features()
            )));
        }
        if data.is_empty() {
            return Ok(Array2::zeros((0, self.embedding_width())));
        }
        self.encoder.predict(&to_array(data))
    }

    /// Training-mode loss and parameter gradients (encoder then projection)
    /// for a single batch. Running statistics are not touched.
    pub fn batch_loss_and_grads(&self, x: &Array2<f64>, labels: &[u8], temperature: f64) -> Result<(f64, Vec<f64>)> {
        let (loss, ge, gp, _, _) = self.batch_step(x, labels, temperature)?;
        let mut flat = ge.flatten();
        flat.extend(gp.flatten());
        Ok((loss, flat))
    }

    #[allow(clippy::type_complexity)]
    fn batch_step(
        &self,
        x: &Array2<f64>,
        labels: &[u8],
        temperature: f64,
    ) -> Result<(
        f64,
        super::mlp::MlpGrads,
        super::mlp::MlpGrads,
        super::mlp::ForwardPass,
        super::mlp::ForwardPass,
    )> {
        let enc = self.encoder.forward(x, Mode::Train)?;
        let proj = self.projection.forward(enc.output(), Mode::Train)?;
        let (loss, gu) = supcon_loss_raw(proj.output(), labels, temperature)?;
        let (gp, genc) = self.projection.backward(&proj, &gu, false);
        let (ge, _) = self.encoder.backward(&enc, &genc, false);
        Ok((loss, ge, gp, enc, proj))
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = self.encoder.params_flat();
        p.extend(self.projection.params_flat());
        p
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        let k = self.encoder.n_params();
        if values.len() < k {
            return Err(Error::Shape("parameter vector too short".into()));
        }
        self.encoder.set_params_flat(&values[..k])?;
        self.projection.set_params_flat(&values[k..])
    }

    /// Mean contrastive loss over `x` in eval mode, scored chunk by chunk.
    pub fn eval_loss(&self, x: &Array2<f64>, labels: &[u8], temperature: f64) -> Result<f64> {
        let n = x.nrows();
        let mut total = 0.0;
        let mut weight = 0usize;
        let mut start = 0;
        while start < n {
            let mut end = (start + EVAL_CHUNK).min(n);
            if n - end < 2 {
                end = n;
            }
            if end - start >= 2 {
                let rows: Vec<usize> = (start..end).collect();
                let (_, z) = self.forward(&x.select(Axis(0), &rows))?;
                let (loss, _) = super::supcon::supcon_loss(&z, &labels[start..end], temperature)?;
                total += loss * (end - start) as f64;
                weight += end - start;
            }
            start = end;
        }
        if weight == 0 {
            return Err(Error::InvalidInput("validation set too small for a contrastive loss".into()));
        }
        Ok(total / weight as f64)
    }

    pub fn save(&self, params: &mut ParamWriter) -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "encoder": self.encoder.save(params)?,
            "projection": self.projection.save(params)?,
            "outcome": self.outcome,
        }))
    }

    pub fn load(manifest: &serde_json::Value, params: &ParamReader<'_>) -> Result<Self> {
        let field = |k: &str| manifest.get(k).ok_or_else(|| Error::Corrupt(format!("model manifest lacks {k}")));
        let encoder = Mlp::load(field("encoder")?, params)?;
        let projection = Mlp::load(field("projection")?, params)?;
        if projection.input_width != encoder.output_width() {
            return Err(Error::Corrupt("projection width does not match encoder".into()));
        }
        Ok(Self {
            encoder,
            projection,
            outcome: serde_json::from_value(field("outcome")?.clone())?,
        })
    }
}

/// Trains an encoder/projection model with mini-batch gradient descent on the
/// supervised contrastive loss, early-stopping on the validation loss.
/// Returns the parameters from the best epoch.
pub fn train_model(
    data: &FeatureMatrix,
    val: &FeatureMatrix,
    shape: &NetworkShape,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<EncoderProjectionModel> {
    cfg.validate()?;
    require_both_classes(data.labels(), "contrastive training data")?;
    if !val.is_empty() && val.n_features() != data.n_features() {
        return Err(Error::Shape("validation width differs from training width".into()));
    }
    let mut model = EncoderProjectionModel::new(data.n_features(), shape, derive_seed(seed, "init"))?;
    let mut rng = seeded(derive_seed(seed, "batches"));
    let x = to_array(data);
    let labels = data.labels();
    let vx = to_array(val);
    let use_val = val.n_samples() >= 2;
    let bs = batch_size(data.n_samples(), cfg.batch_divisor);

    let mut stopper = Stopper::new(cfg.patience, false);
    let mut best = (model.encoder.clone(), model.projection.clone());
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let mut train_total = 0.0;
        let mut train_weight = 0usize;
        for batch in stratified_batches(labels, bs, &mut rng) {
            if batch.len() < 2 {
                continue;
            }
            let bx = x.select(Axis(0), &batch);
            let by: Vec<u8> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, ge, gp, enc, _) = model.batch_step(&bx, &by, cfg.temperature)?;
            model.encoder.update_running_stats(&enc);
            model.encoder.sgd_step(&ge, cfg.learning_rate);
            model.projection.sgd_step(&gp, cfg.learning_rate);
            train_total += loss * batch.len() as f64;
            train_weight += batch.len();
        }
        if !model.encoder.all_finite() || !model.projection.all_finite() {
            return Err(Error::InvalidInput(format!("training diverged at epoch {epoch}")));
        }
        let metric = if use_val {
            model.eval_loss(&vx, val.labels(), cfg.temperature)?
        } else {
            train_total / train_weight.max(1) as f64
        };
        history.push(metric);
        if stopper.record(epoch, metric) {
            best = (model.encoder.clone(), model.projection.clone());
        }
        if stopper.should_stop() {
            break;
        }
    }
    debug!(
        "contrastive model: {} epochs, best loss {:?} at epoch {}",
        history.len(),
        stopper.best,
        stopper.best_epoch
    );
    model.encoder = best.0;
    model.projection = best.1;
    model.outcome = TrainOutcome {
        epochs_run: history.len(),
        best_epoch: stopper.best_epoch,
        best_metric: stopper.best.unwrap_or(f64::NAN),
        history,
    };
    Ok(model)
}

/// Two-output sigmoid head; the predicted label is the argmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryClassifier {
    pub network: Mlp,
    pub outcome: TrainOutcome,
}

impl AuxiliaryClassifier {
    pub fn new(input_width: usize, spec: &MlpSpec, seed: u64) -> Result<Self> {
        if spec.output_width() != 2 {
            return Err(Error::Config("auxiliary head must have two outputs".into()));
        }
        Ok(Self {
            network: Mlp::new(input_width, spec, &mut seeded(seed))?,
            outcome: TrainOutcome::default(),
        })
    }

    pub fn input_width(&self) -> usize {
        self.network.input_width
    }

    pub fn outputs(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.nrows() == 0 {
            return Ok(Array2::zeros((0, 2)));
        }
        self.network.predict(x)
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<u8>> {
        Ok(self
            .outputs(x)?
            .rows()
            .into_iter()
            .map(|r| u8::from(r[1] > r[0]))
            .collect())
    }

    pub fn accuracy(&self, x: &Array2<f64>, labels: &[u8]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let preds = self.predict(x)?;
        let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// Mean binary cross-entropy over both outputs against one-hot targets,
    /// with parameter gradients, in training mode.
    pub fn batch_loss_and_grads(&self, x: &Array2<f64>, labels: &[u8]) -> Result<(f64, Vec<f64>)> {
        let (loss, grads, _) = self.batch_step(x, labels)?;
        Ok((loss, grads.flatten()))
    }

    fn batch_step(&self, x: &Array2<f64>, labels: &[u8]) -> Result<(f64, super::mlp::MlpGrads, super::mlp::ForwardPass)> {
        if labels.len() != x.nrows() {
            return Err(Error::Shape("label count differs from batch size".into()));
        }
        let pass = self.network.forward(x, Mode::Train)?;
        let n = x.nrows() as f64;
        let logits = pass.last_pre_activation();
        let mut loss = 0.0;
        let mut grad = Array2::zeros(logits.raw_dim());
        for (i, &y) in labels.iter().enumerate() {
            for k in 0..2 {
                let t = if usize::from(y) == k { 1.0 } else { 0.0 };
                let s = logits[[i, k]];
                // log(1 + e^-s) and log(1 + e^s), stable for large |s|
                let softplus_neg = (-s).max(0.0) + (-s.abs()).exp().ln_1p();
                let softplus_pos = s.max(0.0) + (-s.abs()).exp().ln_1p();
                loss += t * softplus_neg + (1.0 - t) * softplus_pos;
                grad[[i, k]] = (pass.output()[[i, k]] - t) / n;
            }
        }
        let (grads, _) = self.network.backward(&pass, &grad, true);
        Ok((loss / n, grads, pass))
    }

    pub fn save(&self, params: &mut ParamWriter) -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "network": self.network.save(params)?,
            "outcome": self.outcome,
        }))
    }

    pub fn load(manifest: &serde_json::Value, params: &ParamReader<'_>) -> Result<Self> {
        let field = |k: &str| manifest.get(k).ok_or_else(|| Error::Corrupt(format!("auxiliary manifest lacks {k}")));
        let network = Mlp::load(field("network")?, params)?;
        if network.output_width() != 2 {
            return Err(Error::Corrupt("auxiliary head must have two outputs".into()));
        }
        Ok(Self {
            network,
            outcome: serde_json::from_value(field("outcome")?.clone())?,
        })
    }
}

/// Trains the auxiliary head with cross-entropy on one-hot targets,
/// early-stopping on validation accuracy. Returns the best-epoch parameters.
pub fn train_auxiliary(
    x: &Array2<f64>,
    labels: &[u8],
    val_x: &Array2<f64>,
    val_labels: &[u8],
    spec: &MlpSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<AuxiliaryClassifier> {
    cfg.validate()?;
    require_both_classes(labels, "auxiliary training data")?;
    if labels.len() != x.nrows() || val_labels.len() != val_x.nrows() {
        return Err(Error::Shape("label count differs from row count".into()));
    }
    if val_x.nrows() > 0 && val_x.ncols() != x.ncols() {
        return Err(Error::Shape("validation width differs from training width".into()));
    }
    let mut aux = AuxiliaryClassifier::new(x.ncols(), spec, derive_seed(seed, "init"))?;
    let mut rng = seeded(derive_seed(seed, "batches"));
    let use_val = !val_labels.is_empty();
    let bs = batch_size(labels.len(), cfg.batch_divisor);

    let mut stopper = Stopper::new(cfg.patience, true);
    let mut best = aux.network.clone();
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        for batch in stratified_batches(labels, bs, &mut rng) {
            if batch.len() < 2 {
                continue;
            }
            let bx = x.select(Axis(0), &batch);
            let by: Vec<u8> = batch.iter().map(|&i| labels[i]).collect();
            let (_, grads, pass) = aux.batch_step(&bx, &by)?;
            aux.network.update_running_stats(&pass);
            aux.network.sgd_step(&grads, cfg.learning_rate);
        }
        if !aux.network.all_finite() {
            return Err(Error::InvalidInput(format!("auxiliary training diverged at epoch {epoch}")));
        }
        let metric = if use_val {
            aux.accuracy(val_x, val_labels)?
        } else {
            aux.accuracy(x, labels)?
        };
        history.push(metric);
        if stopper.record(epoch, metric) {
            best = aux.network.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    debug!(
        "auxiliary head: {} epochs, best accuracy {:?} at epoch {}",
        history.len(),
        stopper.best,
        stopper.best_epoch
    );
    aux.network = best;
    aux.outcome = TrainOutcome {
        epochs_run: history.len(),
        best_epoch: stopper.best_epoch,
        best_metric: stopper.best.unwrap_or(f64::NAN),
        history,
    };
    Ok(aux)
}
