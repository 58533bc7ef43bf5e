//! AUC, the keep-ratio statistic and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::EncodedSample;
use crate::error::{Error, Result};
use crate::model::FieldTuples;
use crate::par::{map_chunks, Exec, CHUNK};
use crate::selection::MaskSource;

/// Area under the ROC curve from the Mann–Whitney statistic with average
/// ranks for ties.
///
/// Counts are kept as integers and divided once, so the result is bitwise
/// equal to the pairwise definition `(#{s⁺ > s⁻} + ½·#{s⁺ = s⁻}) / (P·N)`.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "auc",
            left: (scores.len(), 1),
            right: (labels.len(), 1),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // 2·(wins) + ties, accumulated per group of equal scores
    let mut twice: u128 = 0;
    let mut neg_below: u128 = 0;
    let (mut pos_total, mut neg_total) = (0u128, 0u128);
    let mut start = 0;
    while start < order.len() {
        let score = scores[order[start]];
        let mut end = start;
        let (mut pos, mut neg) = (0u128, 0u128);
        while end < order.len() && scores[order[end]] == score {
            if labels[order[end]] > 0.5 {
                pos += 1;
            } else {
                neg += 1;
            }
            end += 1;
        }
        twice += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        pos_total += pos;
        neg_total += neg;
        start = end;
    }
    if pos_total == 0 || neg_total == 0 {
        return Err(Error::UndefinedMetric(
            "auc needs at least one positive and one negative label".into(),
        ));
    }
    Ok(twice as f64 / (2 * pos_total * neg_total) as f64)
}

/// Test and evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub logloss: f64,
    pub n_samples: usize,
    pub mean_batch_inference_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairGrain {
    Field,
    Value,
    Hybrid,
}

impl std::fmt::Display for PairGrain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairGrain::Field => "field",
            PairGrain::Value => "value",
            PairGrain::Hybrid => "hybrid",
        })
    }
}

/// Fraction of samples whose binary mask keeps each interaction tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct KeepRatioReport {
    pub field_names: Vec<String>,
    pub tuples: FieldTuples,
    pub ratios: Vec<f64>,
    pub grains: Vec<PairGrain>,
    pub n_samples: usize,
}

impl KeepRatioReport {
    /// Ratio of the tuple made of these fields, in any order.
    pub fn get(&self, fields: &[usize]) -> Option<f64> {
        let mut key = fields.to_vec();
        key.sort_unstable();
        self.tuples
            .iter()
            .position(|t| t == key.as_slice())
            .map(|p| self.ratios[p])
    }
}

pub fn keep_ratio(
    samples: &[EncodedSample],
    source: MaskSource<'_>,
    tuples: &FieldTuples,
    field_names: &[String],
) -> Result<KeepRatioReport> {
    keep_ratio_with(Exec::default(), samples, source, tuples, field_names)
}

pub fn keep_ratio_with(
    exec: Exec,
    samples: &[EncodedSample],
    source: MaskSource<'_>,
    tuples: &FieldTuples,
    field_names: &[String],
) -> Result<KeepRatioReport> {
    if samples.is_empty() {
        return Err(Error::UndefinedMetric("keep ratio over an empty split".into()));
    }
    let n_tuples = tuples.len();
    let partial = map_chunks(exec, samples, CHUNK, |chunk| -> Result<Vec<usize>> {
        let refs: Vec<&EncodedSample> = chunk.iter().collect();
        let mask = source.compute(&refs, n_tuples)?;
        let mut kept = vec![0usize; n_tuples];
        for b in 0..mask.rows() {
            for (k, &v) in kept.iter_mut().zip(mask.row(b)) {
                if v == 1.0 {
                    *k += 1;
                } else if v != 0.0 {
                    return Err(Error::Contract(format!(
                        "keep ratio needs a binary mask, found {v}"
                    )));
                }
            }
        }
        Ok(kept)
    });
    let mut kept = vec![0usize; n_tuples];
    for part in partial {
        for (k, c) in kept.iter_mut().zip(part?) {
            *k += c;
        }
    }
    let grains = (0..n_tuples)
        .map(|p| match source {
            MaskSource::Ones | MaskSource::Zeros => PairGrain::Field,
            MaskSource::Search(_) => PairGrain::Hybrid,
            MaskSource::Frozen(f) => {
                if f.alpha_star[p] {
                    PairGrain::Field
                } else {
                    PairGrain::Value
                }
            }
        })
        .collect();
    Ok(KeepRatioReport {
        field_names: field_names.to_vec(),
        tuples: tuples.clone(),
        ratios: kept.iter().map(|&k| k as f64 / samples.len() as f64).collect(),
        grains,
        n_samples: samples.len(),
    })
}

pub const METRICS_FILE: &str = "metrics.tsv";
pub const TIMING_FILE: &str = "timing.tsv";
pub const KEEP_GRID_FILE: &str = "keep_ratio_grid.tsv";
pub const KEEP_PAIRS_FILE: &str = "keep_ratio_pairs.tsv";

/// Writes the report files into `dir` and returns their paths.
///
/// Wall-clock timing goes to its own file so the other files are identical
/// across reruns.
pub fn emit_reports(
    metrics: Option<&MetricsReport>,
    keep: Option<&KeepRatioReport>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        files.push(path);
        Ok(())
    };
    if let Some(m) = metrics {
        put(
            METRICS_FILE,
            format!("auc\t{}\nlogloss\t{}\nn_samples\t{}\n", m.auc, m.logloss, m.n_samples),
        )?;
        put(
            TIMING_FILE,
            format!("mean_batch_inference_seconds\t{}\n", m.mean_batch_inference_seconds),
        )?;
    }
    if let Some(k) = keep {
        if k.tuples.order() == 2 {
            put(KEEP_GRID_FILE, keep_grid(k))?;
        }
        put(KEEP_PAIRS_FILE, keep_pairs(k))?;
    }
    Ok(files)
}

fn keep_grid(k: &KeepRatioReport) -> String {
    let n = k.field_names.len();
    let mut out = String::from("field");
    for name in &k.field_names {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..n {
        out.push_str(&k.field_names[i]);
        for j in 0..n {
            if i == j {
                out.push_str("\tN/A");
            } else {
                let _ = write!(out, "\t{}", k.get(&[i, j]).unwrap_or(f64::NAN));
            }
        }
        out.push('\n');
    }
    out
}

fn keep_pairs(k: &KeepRatioReport) -> String {
    let mut out = String::from("fields\tkeep_ratio\tgrain\n");
    for (p, t) in k.tuples.iter().enumerate() {
        let names: Vec<&str> = t.iter().map(|&f| k.field_names[f].as_str()).collect();
        let _ = writeln!(out, "{}\t{}\t{}", names.join(","), k.ratios[p], k.grains[p]);
    }
    out
}
