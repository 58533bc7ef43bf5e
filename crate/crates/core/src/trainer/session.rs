use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, predict_all, search_step, train_step, Dataset, Mode, Optimizer, RetrainInit, TrainConfig};
use crate::checkpoint::Container;
use crate::data::{epoch_batches, EncodedSample, ValidationStream};
use crate::error::{Error, Result};
use crate::metrics::{auc, MetricsReport};
use crate::model::{logloss, ModelParams};
use crate::selection::{FrozenSelection, MaskSource, SelectionParams};

/// One line of training history.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub split: &'static str,
    pub logloss: f64,
    /// NaN when the split holds a single class.
    pub auc: f64,
}

/// `epoch<TAB>split<TAB>logloss<TAB>auc` lines.
pub fn format_history(records: &[HistoryRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.epoch, r.split, r.logloss, r.auc);
    }
    out
}

fn parse_history(text: &str) -> Result<Vec<HistoryRecord>> {
    let bad = || Error::Integrity("malformed history in checkpoint".into());
    text.lines()
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            let [epoch, split, logloss, auc] = cols.as_slice() else {
                return Err(bad());
            };
            Ok(HistoryRecord {
                epoch: epoch.parse().map_err(|_| bad())?,
                split: match *split {
                    "train" => "train",
                    "val" => "val",
                    _ => return Err(bad()),
                },
                logloss: logloss.parse().map_err(|_| bad())?,
                auc: auc.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
struct Best {
    epoch: usize,
    val_logloss: f64,
    model: ModelParams,
    selection: Option<SelectionParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RunState {
    mode: Mode,
    epoch: usize,
    bad_epochs: usize,
    stopped: bool,
    val_cycle: u64,
    val_pos: usize,
    best_epoch: Option<usize>,
    best_val_logloss: Option<f64>,
}

/// A training run that can be stepped an epoch at a time, checkpointed and
/// resumed.
#[derive(Clone, Debug)]
pub struct Session<'d> {
    pub config: TrainConfig,
    data: &'d Dataset,
    pub model: ModelParams,
    /// Present while searching.
    pub selection: Option<SelectionParams>,
    /// Present while retraining.
    pub frozen: Option<FrozenSelection>,
    model_opt: Optimizer,
    selection_opt: Option<Optimizer>,
    val_stream: Option<ValidationStream>,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<HistoryRecord>,
    best: Option<Best>,
    bad_epochs: usize,
    stopped: bool,
}

impl<'d> Session<'d> {
    fn start(
        mode: Mode,
        config: &TrainConfig,
        data: &'d Dataset,
        model: ModelParams,
        selection: Option<SelectionParams>,
        frozen: Option<FrozenSelection>,
    ) -> Result<Self> {
        config.validate()?;
        if data.train.is_empty() {
            return Err(Error::Dataset("training split is empty".into()));
        }
        if data.validation.is_empty() {
            return Err(Error::Dataset("validation split is empty".into()));
        }
        let config = TrainConfig { mode, ..config.clone() };
        let model_opt = Optimizer::new(model.slots(), config.model_adam());
        let (selection, selection_opt, val_stream) = match selection {
            Some(mut s) => {
                let opt = Optimizer::new(
                    s.trainable_slots_mut(config.freeze_sigma).into_iter().map(|x| &*x),
                    config.selection_adam(),
                );
                let stream = ValidationStream::new(data.validation.len(), config.batch_size, config.seed)?;
                (Some(s), Some(opt), Some(stream))
            }
            None => (None, None, None),
        };
        Ok(Self {
            config,
            data,
            model,
            selection,
            frozen,
            model_opt,
            selection_opt,
            val_stream,
            epoch: 0,
            history: Vec::new(),
            best: None,
            bad_epochs: 0,
            stopped: false,
        })
    }

    /// Plain network: every interaction kept.
    pub fn baseline(config: &TrainConfig, data: &'d Dataset) -> Result<Self> {
        let model = ModelParams::init(config.model_config(data), config.seed)?;
        Self::start(Mode::Baseline, config, data, model, None, None)
    }

    pub fn search(config: &TrainConfig, data: &'d Dataset) -> Result<Self> {
        let model = ModelParams::init(config.model_config(data), config.seed)?;
        let selection = SelectionParams::init(config.selection_config(), &data.field_sizes, config.seed)?;
        Self::start(Mode::Search, config, data, model, Some(selection), None)
    }

    /// Trains `W` from scratch (or from `warm` when configured) under a
    /// frozen selection.
    pub fn retrain(
        config: &TrainConfig,
        data: &'d Dataset,
        frozen: FrozenSelection,
        warm: Option<&ModelParams>,
    ) -> Result<Self> {
        if frozen.field_sizes() != data.field_sizes {
            return Err(Error::Config("frozen selection was built for another vocabulary".into()));
        }
        let model_config = config.model_config(data);
        let model = match (config.retrain_init, warm) {
            (RetrainInit::Random, _) => ModelParams::init(model_config, config.seed)?,
            (RetrainInit::Warm, Some(m)) if m.config == model_config => m.clone(),
            (RetrainInit::Warm, Some(_)) => {
                return Err(Error::Config("warm-start model has a different shape".into()))
            }
            (RetrainInit::Warm, None) => {
                return Err(Error::Config("retrain_init = warm needs the search model".into()))
            }
        };
        if frozen.tuples().len() != model.n_tuples() {
            return Err(Error::Config("frozen selection has a different interaction order".into()));
        }
        Self::start(Mode::Retrain, config, data, model, None, Some(frozen))
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn is_finished(&self) -> bool {
        self.stopped || self.epoch >= self.config.max_epochs
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.epoch)
    }

    pub fn best_val_logloss(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.val_logloss)
    }

    /// Best-validation model, or the current one before any epoch finished.
    pub fn best_model(&self) -> &ModelParams {
        self.best.as_ref().map_or(&self.model, |b| &b.model)
    }

    pub fn best_selection(&self) -> Option<&SelectionParams> {
        match &self.best {
            Some(b) => b.selection.as_ref(),
            None => self.selection.as_ref(),
        }
    }

    /// Mask used for validation and evaluation in this mode.
    fn source<'s>(&'s self, selection: Option<&'s SelectionParams>) -> MaskSource<'s> {
        match self.config.mode {
            Mode::Baseline => MaskSource::Ones,
            Mode::Search => MaskSource::Search(selection.expect("search keeps a selection")),
            Mode::Retrain => MaskSource::Frozen(self.frozen.as_ref().expect("retrain keeps a frozen selection")),
        }
    }

    /// Runs one epoch; returns whether training continues.
    pub fn run_epoch(&mut self) -> Result<bool> {
        if self.is_finished() {
            return Ok(false);
        }
        let exec = self.config.exec;
        let data = self.data;
        let batches = epoch_batches(data.train.len(), self.config.batch_size, self.config.seed, self.epoch as u64);
        let mut loss_sum = 0.0;
        let mut probabilities = Vec::with_capacity(data.train.len());
        let mut labels = Vec::with_capacity(data.train.len());
        for idx in &batches {
            let batch: Vec<&EncodedSample> = idx.iter().map(|&i| &data.train[i]).collect();
            let loss = match self.config.mode {
                Mode::Search => {
                    let stream = self.val_stream.as_mut().expect("search keeps a validation stream");
                    let val: Vec<&EncodedSample> = stream.next_batch().iter().map(|&i| &data.validation[i]).collect();
                    search_step(
                        &mut self.model,
                        self.selection.as_mut().expect("search keeps a selection"),
                        &mut self.model_opt,
                        self.selection_opt.as_mut().expect("search keeps an optimizer"),
                        &batch,
                        &val,
                        self.config.freeze_sigma,
                        exec,
                    )?
                    .train
                }
                Mode::Baseline => train_step(&mut self.model, &mut self.model_opt, &batch, MaskSource::Ones, exec)?,
                Mode::Retrain => {
                    let frozen = self.frozen.as_ref().expect("retrain keeps a frozen selection");
                    train_step(&mut self.model, &mut self.model_opt, &batch, MaskSource::Frozen(frozen), exec)?
                }
            };
            loss_sum += loss.logloss * batch.len() as f64;
            probabilities.extend(loss.probabilities);
            labels.extend(batch.iter().map(|s| f64::from(s.label)));
        }
        self.epoch += 1;
        self.history.push(HistoryRecord {
            epoch: self.epoch,
            split: "train",
            logloss: loss_sum / data.train.len() as f64,
            auc: auc(&probabilities, &labels).unwrap_or(f64::NAN),
        });

        let source = self.source(self.selection.as_ref());
        let val_p = predict_all(&self.model, &data.validation, source, exec)?;
        let val_y: Vec<f64> = data.validation.iter().map(|s| f64::from(s.label)).collect();
        let val_loss = logloss(&val_p, &val_y)?;
        self.history.push(HistoryRecord {
            epoch: self.epoch,
            split: "val",
            logloss: val_loss,
            auc: auc(&val_p, &val_y).unwrap_or(f64::NAN),
        });

        let improved = self.best.as_ref().is_none_or(|b| val_loss < b.val_logloss);
        if improved {
            self.best = Some(Best {
                epoch: self.epoch,
                val_logloss: val_loss,
                model: self.model.clone(),
                selection: self.selection.clone(),
            });
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.config.patience {
                self.stopped = true;
            }
        }
        Ok(!self.is_finished())
    }

    pub fn run(&mut self) -> Result<()> {
        while self.run_epoch()? {}
        Ok(())
    }

    /// Metrics of the best model on `samples` under this mode's mask.
    pub fn evaluate_best(&self, samples: &[EncodedSample]) -> Result<MetricsReport> {
        let source = self.source(self.best_selection());
        evaluate(self.best_model(), samples, source, self.config.batch_size, self.config.exec)
    }

    /// Everything needed to continue this run bit-for-bit.
    pub fn checkpoint(&self) -> Container {
        let mut c = Container::new();
        let (val_cycle, val_pos) = self.val_stream.as_ref().map_or((0, 0), |s| s.position());
        let state = RunState {
            mode: self.config.mode,
            epoch: self.epoch,
            bad_epochs: self.bad_epochs,
            stopped: self.stopped,
            val_cycle,
            val_pos,
            best_epoch: self.best_epoch(),
            best_val_logloss: self.best_val_logloss(),
        };
        c.put_json("run.state", &state);
        c.put_json("run.config", &self.config);
        c.put_bytes("run.history", format_history(&self.history));
        c.put_model("model", &self.model);
        c.put_adam("adam.model", &self.model_opt.states);
        if let Some(s) = &self.selection {
            c.put_selection("selection", s);
        }
        if let Some(o) = &self.selection_opt {
            c.put_adam("adam.selection", &o.states);
        }
        if let Some(f) = &self.frozen {
            c.put_frozen("frozen", f);
        }
        if let Some(b) = &self.best {
            c.put_model("best.model", &b.model);
            if let Some(s) = &b.selection {
                c.put_selection("best.selection", s);
            }
        }
        c
    }

    /// Continues a run from `checkpoint`. Hyperparameters come from
    /// `config`; the mode must match the checkpoint.
    pub fn resume(config: &TrainConfig, data: &'d Dataset, checkpoint: &Container) -> Result<Self> {
        config.validate()?;
        let state: RunState = checkpoint.json("run.state")?;
        let config = TrainConfig { mode: state.mode, ..config.clone() };
        let model = checkpoint.model("model")?;
        if model.config != config.model_config(data) {
            return Err(Error::Config("checkpoint model does not match the data and config".into()));
        }
        let selection = match state.mode {
            Mode::Search => Some(checkpoint.selection("selection")?),
            _ => None,
        };
        if let Some(s) = &selection {
            if s.field_sizes() != data.field_sizes {
                return Err(Error::Config("checkpoint selection does not match the vocabulary".into()));
            }
        }
        let frozen = match state.mode {
            Mode::Retrain => Some(checkpoint.frozen("frozen")?),
            _ => None,
        };
        let mut session = Self::start(state.mode, &config, data, model, selection, frozen)?;
        session.model_opt.states = checkpoint.adam("adam.model", config.model_adam())?;
        if let Some(opt) = session.selection_opt.as_mut() {
            opt.states = checkpoint.adam("adam.selection", config.selection_adam())?;
            session.val_stream = Some(ValidationStream::resume(
                data.validation.len(),
                config.batch_size,
                config.seed,
                state.val_cycle,
                state.val_pos,
            )?);
        }
        check_shapes(&session.model_opt, session.model.slots().into_iter())?;
        if let (Some(opt), Some(sel)) = (&session.selection_opt, session.selection.as_mut()) {
            check_shapes(opt, sel.trainable_slots_mut(config.freeze_sigma).into_iter().map(|s| &*s))?;
        }
        session.epoch = state.epoch;
        session.bad_epochs = state.bad_epochs;
        session.stopped = state.stopped;
        session.history = parse_history(std::str::from_utf8(checkpoint.bytes("run.history")?).map_err(|_| {
            Error::Integrity("history is not UTF-8".into())
        })?)?;
        if let (Some(epoch), Some(val_logloss)) = (state.best_epoch, state.best_val_logloss) {
            session.best = Some(Best {
                epoch,
                val_logloss,
                model: checkpoint.model("best.model")?,
                selection: match state.mode {
                    Mode::Search => Some(checkpoint.selection("best.selection")?),
                    _ => None,
                },
            });
        }
        Ok(session)
    }
}

fn check_shapes<'a>(opt: &Optimizer, slots: impl Iterator<Item = &'a crate::ndcore::GradSlot>) -> Result<()> {
    let shapes: Vec<_> = slots.map(|s| s.value.shape()).collect();
    let saved: Vec<_> = opt.states.iter().map(|s| s.m.shape()).collect();
    if shapes != saved {
        return Err(Error::Integrity("optimizer state does not match the parameters".into()));
    }
    Ok(())
}

/// Best-validation state of a finished search.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub model: ModelParams,
    pub selection: SelectionParams,
    pub history: Vec<HistoryRecord>,
    pub best_epoch: usize,
    pub best_val_logloss: f64,
}

/// Best-validation model of a baseline or retrain run with its test metrics.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub frozen: Option<FrozenSelection>,
    pub history: Vec<HistoryRecord>,
    pub best_epoch: usize,
    pub best_val_logloss: f64,
    pub test: MetricsReport,
}

pub fn run_search(data: &Dataset, config: &TrainConfig) -> Result<SearchOutcome> {
    let mut s = Session::search(config, data)?;
    s.run()?;
    Ok(SearchOutcome {
        model: s.best_model().clone(),
        selection: s.best_selection().expect("search keeps a selection").clone(),
        best_epoch: s.best_epoch().unwrap_or(0),
        best_val_logloss: s.best_val_logloss().unwrap_or(f64::NAN),
        history: s.history,
    })
}

pub fn run_retrain(
    data: &Dataset,
    frozen: FrozenSelection,
    config: &TrainConfig,
    warm: Option<&ModelParams>,
) -> Result<TrainOutcome> {
    let mut s = Session::retrain(config, data, frozen, warm)?;
    s.run()?;
    finish(s)
}

pub fn run_baseline(data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut s = Session::baseline(config, data)?;
    s.run()?;
    finish(s)
}

fn finish(s: Session<'_>) -> Result<TrainOutcome> {
    let test = s.evaluate_best(&s.data.test)?;
    Ok(TrainOutcome {
        model: s.best_model().clone(),
        best_epoch: s.best_epoch().unwrap_or(0),
        best_val_logloss: s.best_val_logloss().unwrap_or(f64::NAN),
        frozen: s.frozen,
        history: s.history,
        test,
    })
}
