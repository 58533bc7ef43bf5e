use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::schema::{RawRow, Schema};
use crate::error::{Error, Result};
use crate::ndcore::sigmoid;
use crate::rng::{stream, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_fields: usize,
    pub values_per_field: usize,
    pub n_samples: usize,
    pub planted_pairs: Vec<(usize, usize)>,
    pub noise: f64,
    pub seed: u64,
}

/// What generated the labels: the planted pairs and their weight tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SyntheticConfig,
    /// One `values_per_field²` row-major table per planted pair.
    pub weights: Vec<Vec<f64>>,
}

impl GroundTruth {
    /// Noise-free logit of a sample given its per-field local values.
    pub fn logit(&self, values: &[usize]) -> f64 {
        let k = self.config.values_per_field;
        self.config
            .planted_pairs
            .iter()
            .zip(&self.weights)
            .map(|(&(i, j), w)| w[values[i] * k + values[j]])
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub schema: Schema,
    pub rows: Vec<RawRow>,
    /// Local value index per field for each row, parallel to `rows`.
    pub values: Vec<Vec<usize>>,
    pub truth: GroundTruth,
}

impl SyntheticData {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let _ = write!(out, "{}", row.label);
            for v in &row.values {
                let _ = write!(out, "\t{}", v.as_deref().unwrap_or(""));
            }
            out.push('\n');
        }
        out
    }
}

fn draw_rows(truth: &GroundTruth) -> (Vec<RawRow>, Vec<Vec<usize>>) {
    let config = &truth.config;
    let (n, k) = (config.n_fields, config.values_per_field);
    let mut rng = stream(config.seed, Stream::SynthSamples, 0);
    let mut rows = Vec::with_capacity(config.n_samples);
    let mut values = Vec::with_capacity(config.n_samples);
    for s in 0..config.n_samples {
        let v: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let eps: f64 = StandardNormal.sample(&mut rng);
        let p = sigmoid(truth.logit(&v) + config.noise * eps);
        let label = u8::from(rng.random::<f64>() < p);
        rows.push(RawRow {
            line: s + 1,
            label,
            values: v.iter().map(|x| Some(format!("v{x}"))).collect(),
        });
        values.push(v);
    }
    (rows, values)
}

/// Uniform categorical fields whose labels depend only on the planted field
/// pairs through random `N(0,1)` weight tables.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    let n = config.n_fields;
    let k = config.values_per_field;
    if n < 2 || k < 2 {
        return Err(Error::Config(
            "synthetic data needs at least 2 fields and 2 values per field".into(),
        ));
    }
    let mut planted = config.planted_pairs.clone();
    for p in &mut planted {
        if p.0 > p.1 {
            *p = (p.1, p.0);
        }
        if p.0 == p.1 || p.1 >= n {
            return Err(Error::Config(format!("invalid planted pair {p:?} for {n} fields")));
        }
    }
    let mut table_rng = stream(config.seed, Stream::SynthTables, 0);
    let weights: Vec<Vec<f64>> = planted
        .iter()
        .map(|_| {
            (0..k * k)
                .map(|_| StandardNormal.sample(&mut table_rng))
                .collect()
        })
        .collect();
    let truth = GroundTruth {
        config: SyntheticConfig {
            planted_pairs: planted,
            ..config.clone()
        },
        weights,
    };

    let (rows, values) = draw_rows(&truth);
    Ok(SyntheticData {
        schema: Schema::categorical((0..n).map(|i| format!("f{i}"))),
        rows,
        values,
        truth,
    })
}
