//! Alternating search, retraining and evaluation loops.

mod session;

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{build_vocabulary, split_samples, DatasetSplits, EncodedSample, LogBase, RawRow, Schema, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::{auc, MetricsReport};
use crate::model::{logloss, logloss_sum, ModelConfig, ModelParams, Operation};
use crate::ndcore::{AdamConfig, AdamState, GradSlot};
use crate::par::{map_chunks, Exec, CHUNK};
use crate::selection::{MaskSource, SelectionConfig, SelectionParams};

pub use session::{
    format_history, run_baseline, run_retrain, run_search, HistoryRecord, SearchOutcome, Session, TrainOutcome,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Baseline,
    Search,
    Retrain,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Search => "search",
            Mode::Retrain => "retrain",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrainInit {
    #[default]
    Random,
    /// Start from the best model of the search phase.
    Warm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lr_model: f64,
    pub wd_model: f64,
    pub lr_selection: f64,
    pub wd_selection: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub retrain_init: RetrainInit,
    pub order_t: usize,
    pub operation: Operation,
    /// Embedding width of the model.
    pub d: usize,
    pub hidden: Vec<usize>,
    /// Gate-net shape and grain; its `order` is replaced by `order_t`.
    pub selection: SelectionConfig,
    /// Keep both cores `Σ` at their initial value during search.
    pub freeze_sigma: bool,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Baseline,
            lr_model: 1e-3,
            wd_model: 0.0,
            lr_selection: 1e-3,
            wd_selection: 0.0,
            batch_size: 256,
            max_epochs: 50,
            patience: 3,
            seed: 0,
            retrain_init: RetrainInit::Random,
            order_t: 2,
            operation: Operation::Inner,
            d: 8,
            hidden: vec![64, 32],
            selection: SelectionConfig::default(),
            freeze_sigma: false,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.lr_model.is_nan() || self.lr_selection.is_nan() || self.lr_model <= 0.0 || self.lr_selection <= 0.0 {
            return fail("learning rates must be positive".into());
        }
        if self.wd_model.is_nan() || self.wd_selection.is_nan() || self.wd_model < 0.0 || self.wd_selection < 0.0 {
            return fail("weight decays must be non-negative".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return fail("batch_size and max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        if !(2..=3).contains(&self.order_t) {
            return fail(format!("order_t must be 2 or 3, got {}", self.order_t));
        }
        if self.operation == Operation::Outer && self.order_t != 2 {
            return fail("the outer product is defined for order 2 only".into());
        }
        if self.d == 0 || self.selection.d_hat == 0 || self.selection.d_prime == 0 {
            return fail("embedding widths must be at least 1".into());
        }
        Ok(())
    }

    pub fn model_adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr_model, self.wd_model)
    }

    pub fn selection_adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr_selection, self.wd_selection)
    }

    pub fn model_config(&self, data: &Dataset) -> ModelConfig {
        ModelConfig {
            n_fields: data.field_sizes.len(),
            n_values: data.n_values(),
            d: self.d,
            hidden: self.hidden.clone(),
            operation: self.operation,
            order: self.order_t,
        }
    }

    pub fn selection_config(&self) -> SelectionConfig {
        SelectionConfig {
            order: self.order_t,
            ..self.selection.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[serde(rename = "val")]
    Validation,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (train|val|test)"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        })
    }
}

/// Encoded splits plus the vocabulary shape they were encoded with.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub field_names: Vec<String>,
    pub field_sizes: Vec<usize>,
    pub train: Vec<EncodedSample>,
    pub validation: Vec<EncodedSample>,
    pub test: Vec<EncodedSample>,
}

impl Dataset {
    pub fn new(vocab: &Vocabulary, splits: DatasetSplits<EncodedSample>) -> Result<Self> {
        for s in splits.train.iter().chain(&splits.validation).chain(&splits.test) {
            vocab.validate(s)?;
        }
        Ok(Self {
            field_names: vocab.field_names(),
            field_sizes: vocab.field_sizes(),
            train: splits.train,
            validation: splits.validation,
            test: splits.test,
        })
    }

    /// Splits raw rows, builds the vocabulary on the training rows only and
    /// encodes every split with it.
    pub fn from_rows(
        schema: &Schema,
        rows: Vec<RawRow>,
        ratios: [f64; 3],
        seed: u64,
        min_count: usize,
        log_base: LogBase,
    ) -> Result<(Vocabulary, Self)> {
        let raw = split_samples(rows, ratios, seed)?;
        let vocab = build_vocabulary(&raw.train, schema, min_count, log_base)?;
        let splits = DatasetSplits {
            train: vocab.encode_all(&raw.train)?,
            validation: vocab.encode_all(&raw.validation)?,
            test: vocab.encode_all(&raw.test)?,
            ratios,
        };
        let data = Self::new(&vocab, splits)?;
        Ok((vocab, data))
    }

    pub fn n_values(&self) -> usize {
        self.field_sizes.iter().sum()
    }

    pub fn split(&self, which: Split) -> &[EncodedSample] {
        match which {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// Adam state for each slot of one parameter group, in slot order.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new<'a>(slots: impl IntoIterator<Item = &'a GradSlot>, config: AdamConfig) -> Self {
        Self {
            states: slots
                .into_iter()
                .map(|s| AdamState::new(s.value.shape(), config))
                .collect(),
        }
    }

    pub fn step(&mut self, slots: Vec<&mut GradSlot>) -> Result<()> {
        if slots.len() != self.states.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, got {}",
                self.states.len(),
                slots.len()
            )));
        }
        for (state, slot) in self.states.iter_mut().zip(slots) {
            if state.m.shape() != slot.value.shape() {
                return Err(Error::Dimension {
                    op: "adam",
                    left: state.m.shape(),
                    right: slot.value.shape(),
                });
            }
            state.step(slot);
        }
        Ok(())
    }
}

fn labels(samples: &[&EncodedSample]) -> Vec<f64> {
    samples.iter().map(|s| f64::from(s.label)).collect()
}

/// Mean loss of one batch plus its pre-update predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub logloss: f64,
    pub probabilities: Vec<f64>,
}

/// Accumulates `∂L/∂W` of the batch mean loss into `model` (not zeroed
/// first). The mask is treated as a constant.
pub fn accumulate_model_grads(
    model: &mut ModelParams,
    batch: &[&EncodedSample],
    source: MaskSource<'_>,
    exec: Exec,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::Dataset("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let n_tuples = model.n_tuples();
    let frozen: &ModelParams = model;
    let parts = map_chunks(exec, batch, CHUNK, |chunk| -> Result<_> {
        let mask = source.compute(chunk, n_tuples)?;
        let trace = frozen.forward(chunk, &mask)?;
        let y = labels(chunk);
        let (g, _) = frozen.backward(&trace, &y, scale)?;
        Ok((logloss_sum(&trace.probabilities, &y), trace.probabilities, g))
    });
    let mut loss = 0.0;
    let mut probabilities = Vec::with_capacity(batch.len());
    let mut grads = Vec::with_capacity(parts.len());
    for part in parts {
        let (l, p, g) = part?;
        loss += l;
        probabilities.extend(p);
        grads.push(g);
    }
    for g in &grads {
        model.accumulate(g)?;
    }
    Ok(BatchLoss {
        logloss: loss * scale,
        probabilities,
    })
}

/// Accumulates `∂L/∂Ŵ` of the batch mean loss under the relaxed search
/// mask into `selection`. Model gradients are discarded.
pub fn accumulate_selection_grads(
    selection: &mut SelectionParams,
    model: &ModelParams,
    batch: &[&EncodedSample],
    exec: Exec,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Dataset("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let sel: &SelectionParams = selection;
    let parts = map_chunks(exec, batch, CHUNK, |chunk| -> Result<_> {
        let (mask, cache) = sel.search_forward(chunk)?;
        let trace = model.forward(chunk, &mask)?;
        let y = labels(chunk);
        let (_, d_mask) = model.backward(&trace, &y, scale)?;
        Ok((logloss_sum(&trace.probabilities, &y), sel.search_backward(&cache, &d_mask)?))
    });
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(parts.len());
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grads.push(g);
    }
    for g in &grads {
        selection.accumulate(g)?;
    }
    Ok(loss * scale)
}

/// One optimizer step on `W` with a fixed mask source.
pub fn train_step(
    model: &mut ModelParams,
    optimizer: &mut Optimizer,
    batch: &[&EncodedSample],
    source: MaskSource<'_>,
    exec: Exec,
) -> Result<BatchLoss> {
    model.zero_grad();
    let loss = accumulate_model_grads(model, batch, source, exec)?;
    optimizer.step(model.slots_mut())?;
    Ok(loss)
}

/// Losses seen by the two halves of one search step.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchStepLosses {
    /// Validation loss before the selection update.
    pub validation: f64,
    /// Training loss before the model update, with the updated selection.
    pub train: BatchLoss,
}

/// Selection update on the validation batch, then model update on the
/// training batch. `W` and `Ŵ` are separate values, so neither step can
/// touch the other's parameters.
#[allow(clippy::too_many_arguments)]
pub fn search_step(
    model: &mut ModelParams,
    selection: &mut SelectionParams,
    model_opt: &mut Optimizer,
    selection_opt: &mut Optimizer,
    train_batch: &[&EncodedSample],
    val_batch: &[&EncodedSample],
    freeze_sigma: bool,
    exec: Exec,
) -> Result<SearchStepLosses> {
    selection.zero_grad();
    let validation = accumulate_selection_grads(selection, model, val_batch, exec)?;
    selection_opt.step(selection.trainable_slots_mut(freeze_sigma))?;

    let train = train_step(model, model_opt, train_batch, MaskSource::Search(selection), exec)?;
    Ok(SearchStepLosses { validation, train })
}

/// Predictions over `samples` in order.
pub fn predict_all(
    model: &ModelParams,
    samples: &[EncodedSample],
    source: MaskSource<'_>,
    exec: Exec,
) -> Result<Vec<f64>> {
    let n_tuples = model.n_tuples();
    let parts = map_chunks(exec, samples, CHUNK, |chunk| {
        let refs: Vec<&EncodedSample> = chunk.iter().collect();
        model.predict(&refs, &source.compute(&refs, n_tuples)?)
    });
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// AUC and logloss over `samples`, with the mean wall-clock time of a
/// `batch_size` inference batch.
pub fn evaluate(
    model: &ModelParams,
    samples: &[EncodedSample],
    source: MaskSource<'_>,
    batch_size: usize,
    exec: Exec,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty split".into()));
    }
    let mut probabilities = Vec::with_capacity(samples.len());
    let mut seconds = 0.0;
    let mut batches = 0usize;
    for batch in samples.chunks(batch_size.max(1)) {
        let start = Instant::now();
        probabilities.extend(predict_all(model, batch, source, exec)?);
        seconds += start.elapsed().as_secs_f64();
        batches += 1;
    }
    let y: Vec<f64> = samples.iter().map(|s| f64::from(s.label)).collect();
    Ok(MetricsReport {
        auc: auc(&probabilities, &y)?,
        logloss: logloss(&probabilities, &y)?,
        n_samples: samples.len(),
        mean_batch_inference_seconds: seconds / batches as f64,
    })
}
