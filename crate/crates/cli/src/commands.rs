use std::fs;
use std::path::{Path, PathBuf};

use fisel::checkpoint::Container;
use fisel::data::{
    generate_synthetic, read_encoded, read_raw_tsv, write_encoded, DatasetSplits, Schema, Vocabulary,
};
use fisel::metrics::{emit_reports, keep_ratio, KeepRatioReport};
use fisel::model::ModelParams;
use fisel::selection::{freeze_selection, FrozenSelection, MaskSource};
use fisel::trainer::{evaluate, format_history, Dataset, Mode, RetrainInit, Session, Split};
use fisel::{Error, Result};

use crate::config::ConfigFile;
use crate::{Cli, Command};

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.tsv";

pub fn run(cli: &Cli) -> Result<()> {
    let mut config = ConfigFile::load(cli.config.as_deref(), &cli.set)?;
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
        config.synth.seed = seed;
    }
    if let Some(grain) = cli.grain {
        config.selection.grain = grain;
    }
    match &cli.command {
        Command::Preprocess => preprocess(&config),
        Command::Baseline => train(&config, Mode::Baseline, None),
        Command::Search => search(&config),
        Command::Retrain { checkpoint } => train(&config, Mode::Retrain, checkpoint.as_deref()),
        Command::Evaluate { checkpoint } => evaluate_checkpoint(&config, checkpoint, cli.split.unwrap_or(Split::Test)),
        Command::Synth => synth(&config),
    }
}

fn out_dir(config: &ConfigFile, sub: &str) -> Result<PathBuf> {
    let dir = config.output.dir.join(sub);
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn synth_paths(config: &ConfigFile) -> (PathBuf, PathBuf, PathBuf) {
    let dir = config.output.dir.join("synth");
    (dir.join("data.tsv"), dir.join("schema.tsv"), dir.join("descriptor.json"))
}

fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{split}.tsv"))
}

fn synth(config: &ConfigFile) -> Result<()> {
    let data = generate_synthetic(&config.synthetic())?;
    out_dir(config, "synth")?;
    let (raw, schema, descriptor) = synth_paths(config);
    write(&raw, data.to_tsv())?;
    write(&schema, data.schema.to_text())?;
    write(&descriptor, data.truth.to_json())?;
    println!("wrote {} rows to {}", data.rows.len(), raw.display());
    Ok(())
}

fn preprocess(config: &ConfigFile) -> Result<()> {
    let (default_raw, default_schema, _) = synth_paths(config);
    let raw = config.data.raw.clone().unwrap_or(default_raw);
    let schema_path = config.data.schema.clone().unwrap_or(default_schema);
    let schema = Schema::load(&schema_path)?;
    let rows = read_raw_tsv(&raw, &schema)?;
    let (vocab, data) = Dataset::from_rows(
        &schema,
        rows,
        config.data.split_ratios,
        config.train.seed,
        config.data.min_count,
        config.log_base()?,
    )?;
    let dir = out_dir(config, "data")?;
    vocab.save(&dir.join(VOCAB_FILE))?;
    for split in [Split::Train, Split::Validation, Split::Test] {
        write_encoded(&split_path(&dir, split), data.split(split))?;
    }
    println!("n\t{}", vocab.n_fields());
    println!("m\t{}", vocab.n_values());
    for (name, m) in vocab.field_names().iter().zip(vocab.field_sizes()) {
        println!("m_i\t{name}\t{m}");
    }
    Ok(())
}

fn load_data(config: &ConfigFile) -> Result<(Vocabulary, Dataset)> {
    let dir = config.output.dir.join("data");
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    let splits = DatasetSplits {
        train: read_encoded(&split_path(&dir, Split::Train))?,
        validation: read_encoded(&split_path(&dir, Split::Validation))?,
        test: read_encoded(&split_path(&dir, Split::Test))?,
        ratios: config.data.split_ratios,
    };
    let data = Dataset::new(&vocab, splits)?;
    Ok((vocab, data))
}

fn save_run(session: &Session<'_>, dir: &Path) -> Result<()> {
    session.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
    write(&dir.join(HISTORY_FILE), format_history(&session.history))
}

fn report_keep_ratio(data: &Dataset, frozen: &FrozenSelection) -> Result<KeepRatioReport> {
    keep_ratio(&data.train, MaskSource::Frozen(frozen), frozen.tuples(), &data.field_names)
}

fn search(config: &ConfigFile) -> Result<()> {
    let cfg = config.train_config(Mode::Search)?;
    let (_, data) = load_data(config)?;
    let mut session = Session::search(&cfg, &data)?;
    session.run()?;
    let dir = out_dir(config, "search")?;
    save_run(&session, &dir)?;
    let selection = session
        .best_selection()
        .ok_or_else(|| Error::Contract("search finished without a selection".into()))?;
    let keep = report_keep_ratio(&data, &freeze_selection(selection))?;
    emit_reports(None, Some(&keep), &dir)?;
    println!(
        "best epoch {} val logloss {:.6}",
        session.best_epoch().unwrap_or(0),
        session.best_val_logloss().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn train(config: &ConfigFile, mode: Mode, checkpoint: Option<&Path>) -> Result<()> {
    let cfg = config.train_config(mode)?;
    let (_, data) = load_data(config)?;
    let mut session = match mode {
        Mode::Retrain => {
            let path = checkpoint
                .map(Path::to_path_buf)
                .unwrap_or_else(|| config.output.dir.join("search").join(CHECKPOINT_FILE));
            let c = Container::load(&path)?;
            let selection = c.selection("best.selection")?;
            if selection.field_sizes() != data.field_sizes {
                return Err(Error::Dataset(format!(
                    "{} was searched on a different vocabulary",
                    path.display()
                )));
            }
            let warm = match cfg.retrain_init {
                RetrainInit::Warm => Some(c.model("best.model")?),
                RetrainInit::Random => None,
            };
            Session::retrain(&cfg, &data, freeze_selection(&selection), warm.as_ref())?
        }
        _ => Session::baseline(&cfg, &data)?,
    };
    session.run()?;
    let dir = out_dir(config, &mode.to_string())?;
    save_run(&session, &dir)?;
    let metrics = session.evaluate_best(&data.test)?;
    let keep = session.frozen.as_ref().map(|f| report_keep_ratio(&data, f)).transpose()?;
    emit_reports(Some(&metrics), keep.as_ref(), &dir)?;
    println!(
        "best epoch {} val logloss {:.6} test auc {:.6} logloss {:.6}",
        session.best_epoch().unwrap_or(0),
        session.best_val_logloss().unwrap_or(f64::NAN),
        metrics.auc,
        metrics.logloss
    );
    Ok(())
}

fn evaluate_checkpoint(config: &ConfigFile, path: &Path, split: Split) -> Result<()> {
    let c = Container::load(path)?;
    let (vocab, data) = load_data(config)?;
    let model: ModelParams = if c.contains("best.model") {
        c.model("best.model")?
    } else {
        c.model("model")?
    };
    if model.config.n_fields != vocab.n_fields() || model.config.n_values != vocab.n_values() {
        return Err(Error::Dataset(format!(
            "checkpoint expects n={} m={}, vocabulary has n={} m={}",
            model.config.n_fields,
            model.config.n_values,
            vocab.n_fields(),
            vocab.n_values()
        )));
    }
    let frozen = if c.contains("frozen") {
        Some(c.frozen("frozen")?)
    } else if c.contains("best.selection") {
        Some(freeze_selection(&c.selection("best.selection")?))
    } else {
        None
    };
    if let Some(f) = &frozen {
        if f.field_sizes() != vocab.field_sizes() {
            return Err(Error::Dataset("checkpoint selection does not match the vocabulary".into()));
        }
    }
    let source = frozen.as_ref().map_or(MaskSource::Ones, MaskSource::Frozen);
    let samples = data.split(split);
    let batch_size = config.train.batch_size.max(1);
    let metrics = evaluate(&model, samples, source, batch_size, config.train.exec)?;
    let keep = keep_ratio(samples, source, model.tuples(), &data.field_names)?;
    let dir = out_dir(config, "evaluate")?;
    let files = emit_reports(Some(&metrics), Some(&keep), &dir)?;
    println!("{split}: auc {:.6} logloss {:.6} n {}", metrics.auc, metrics.logloss, metrics.n_samples);
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
