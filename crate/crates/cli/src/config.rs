//! TOML run configuration. Every section and key is optional; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use fisel::data::{LogBase, SyntheticConfig};
use fisel::model::Operation;
use fisel::par::Exec;
use fisel::selection::{Grain, SelectionConfig};
use fisel::trainer::{Mode, RetrainInit, TrainConfig};
use fisel::Error;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub data: DataSection,
    pub model: ModelSection,
    pub selection: SelectionSection,
    pub train: TrainSection,
    pub output: OutputSection,
    pub synth: SynthSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Raw TSV, label first. Defaults to the output of `synth`.
    pub raw: Option<PathBuf>,
    /// Schema file. Defaults to the output of `synth`.
    pub schema: Option<PathBuf>,
    pub min_count: usize,
    pub split_ratios: [f64; 3],
    pub log_base: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            raw: None,
            schema: None,
            min_count: 1,
            split_ratios: [0.8, 0.1, 0.1],
            log_base: std::f64::consts::E,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d: usize,
    pub hidden_sizes: Vec<usize>,
    pub operation: Operation,
    pub order_t: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            d: t.d,
            hidden_sizes: t.hidden,
            operation: t.operation,
            order_t: t.order_t,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub d_hat: usize,
    pub d_prime: usize,
    /// Gate MLP hidden widths; `[2 * d_prime]` when absent.
    pub hidden: Option<Vec<usize>>,
    pub bias: bool,
    pub grain: Grain,
    pub sigma_init: f64,
    pub freeze_sigma: bool,
}

impl Default for SelectionSection {
    fn default() -> Self {
        let s = SelectionConfig::default();
        Self {
            d_hat: s.d_hat,
            d_prime: s.d_prime,
            hidden: s.hidden,
            bias: s.bias,
            grain: s.grain,
            sigma_init: s.sigma_init,
            freeze_sigma: false,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Optional; must agree with the subcommand when given.
    pub mode: Option<Mode>,
    pub lr_model: f64,
    pub lr_selection: f64,
    pub wd_model: f64,
    pub wd_selection: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub retrain_init: RetrainInit,
    pub exec: Exec,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            mode: None,
            lr_model: t.lr_model,
            lr_selection: t.lr_selection,
            wd_model: t.wd_model,
            wd_selection: t.wd_selection,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
            retrain_init: t.retrain_init,
            exec: t.exec,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_fields: usize,
    pub values_per_field: usize,
    pub n_samples: usize,
    pub planted_pairs: Vec<[usize; 2]>,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            n_fields: 6,
            values_per_field: 10,
            n_samples: 20_000,
            planted_pairs: vec![[0, 1], [2, 3], [1, 4]],
            noise: 0.5,
            seed: 0,
        }
    }
}

impl ConfigFile {
    /// Reads `path` (if any), applies `KEY=VALUE` overrides and validates
    /// the result against the schema.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Error> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
    }

    pub fn train_config(&self, mode: Mode) -> Result<TrainConfig, Error> {
        if let Some(m) = self.train.mode {
            if m != mode {
                return Err(Error::Config(format!(
                    "config sets train.mode = {m} but the command runs {mode}"
                )));
            }
        }
        let t = &self.train;
        let s = &self.selection;
        let cfg = TrainConfig {
            mode,
            lr_model: t.lr_model,
            wd_model: t.wd_model,
            lr_selection: t.lr_selection,
            wd_selection: t.wd_selection,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
            retrain_init: t.retrain_init,
            order_t: self.model.order_t,
            operation: self.model.operation,
            d: self.model.d,
            hidden: self.model.hidden_sizes.clone(),
            selection: SelectionConfig {
                d_hat: s.d_hat,
                d_prime: s.d_prime,
                hidden: s.hidden.clone(),
                bias: s.bias,
                order: self.model.order_t,
                grain: s.grain,
                sigma_init: s.sigma_init,
            },
            freeze_sigma: s.freeze_sigma,
            exec: t.exec,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn log_base(&self) -> Result<LogBase, Error> {
        let b = self.data.log_base;
        if !b.is_finite() || b <= 1.0 {
            return Err(Error::Config(format!("data.log_base must be a finite number above 1, got {b}")));
        }
        Ok(LogBase(b))
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        let s = &self.synth;
        SyntheticConfig {
            n_fields: s.n_fields,
            values_per_field: s.values_per_field,
            n_samples: s.n_samples,
            planted_pairs: s.planted_pairs.iter().map(|p| (p[0], p[1])).collect(),
            noise: s.noise,
            seed: s.seed,
        }
    }
}

/// `section.key=value`; the value is read as a TOML literal and falls back
/// to a bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), Error> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not KEY=VALUE")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key '{key}'")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{p}' in '{key}' is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_library() {
        let c = ConfigFile::load(None, &[]).unwrap();
        assert_eq!(c.train_config(Mode::Search).unwrap(), TrainConfig {
            mode: Mode::Search,
            ..TrainConfig::default()
        });
    }

    #[test]
    fn overrides_are_typed() {
        let sets = [
            "train.lr_model=0.01".to_string(),
            "model.hidden_sizes=[16]".to_string(),
            "selection.grain=field".to_string(),
            "model.operation=\"outer\"".to_string(),
        ];
        let c = ConfigFile::load(None, &sets).unwrap();
        let t = c.train_config(Mode::Baseline).unwrap();
        assert_eq!(t.lr_model, 0.01);
        assert_eq!(t.hidden, vec![16]);
        assert_eq!(t.selection.grain, Grain::Field);
        assert_eq!(t.operation, Operation::Outer);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in ["train.lr_modle=1", "nosuch.key=1", "model=3"] {
            assert!(matches!(ConfigFile::load(None, &[bad.to_string()]), Err(Error::Config(_))), "{bad}");
        }
        assert!(ConfigFile::load(None, &["novalue".to_string()]).is_err());
    }

    #[test]
    fn mode_must_agree_with_the_command() {
        let c = ConfigFile::load(None, &["train.mode=search".to_string()]).unwrap();
        assert!(c.train_config(Mode::Search).is_ok());
        assert!(matches!(c.train_config(Mode::Retrain), Err(Error::Config(_))));
    }

    #[test]
    fn log_base_is_checked() {
        let c = ConfigFile::load(None, &["data.log_base=1".to_string()]).unwrap();
        assert!(c.log_base().is_err());
        let c = ConfigFile::load(None, &["data.log_base=2".to_string()]).unwrap();
        assert_eq!(c.log_base().unwrap(), LogBase(2.0));
    }
}
