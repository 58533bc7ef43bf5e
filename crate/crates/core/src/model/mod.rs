//! The deep sparse network: embedding lookup, gated interactions, MLP
//! predictor and logloss, with a hand-written backward pass.

mod interaction;

use serde::{Deserialize, Serialize};

pub use interaction::{pairwise_inner, pairwise_outer, FieldTuples, InteractionLayer, Operation};

use crate::data::EncodedSample;
use crate::error::{Error, Result};
use crate::ndcore::{sigmoid, DenseMatrix, GradSlot, Mlp, MlpCache, MlpGrads};
use crate::rng::{stream, Stream};

pub const PROB_CLAMP: f64 = 1e-7;
const EMBEDDING_INIT: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_fields: usize,
    pub n_values: usize,
    pub d: usize,
    pub hidden: Vec<usize>,
    pub operation: Operation,
    pub order: usize,
}

impl ModelConfig {
    pub fn interaction_layer(&self) -> Result<InteractionLayer> {
        InteractionLayer::new(self.n_fields, self.d, self.order, self.operation)
    }

    /// Predictor input width: stacked embeddings plus interaction slots.
    pub fn input_width(&self) -> Result<usize> {
        Ok(self.n_fields * self.d + self.interaction_layer()?.output_len())
    }
}

/// `W = {E, θ}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embedding: GradSlot,
    pub mlp: Mlp,
    layer: InteractionLayer,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub ids: Vec<usize>,
    /// `batch × n·d`
    pub embedded: DenseMatrix,
    /// `batch × tuples·width`, before gating
    pub interactions: DenseMatrix,
    /// `batch × tuples`
    pub mask: DenseMatrix,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    cache: MlpCache,
}

/// Gradients for `W`. Embedding gradients are kept per looked-up row:
/// `rows.row(k)` belongs to embedding row `ids[k]`.
#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub ids: Vec<usize>,
    pub rows: DenseMatrix,
    pub mlp: MlpGrads,
}

impl ModelParams {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Stream::ModelInit, 0);
        let embedding = DenseMatrix::uniform(config.n_values, config.d, EMBEDDING_INIT, &mut rng);
        let mut sizes = vec![config.input_width()?];
        sizes.extend(&config.hidden);
        sizes.push(1);
        let mlp = Mlp::init(&sizes, &mut rng);
        Self::from_parts(config, embedding, mlp)
    }

    /// Assembles parameters, rejecting inconsistent widths up front.
    pub fn from_parts(config: ModelConfig, embedding: DenseMatrix, mlp: Mlp) -> Result<Self> {
        let layer = config.interaction_layer()?;
        let width = config.n_fields * config.d + layer.output_len();
        if embedding.shape() != (config.n_values, config.d) {
            return Err(Error::Config(format!(
                "embedding table is {:?}, config wants ({}, {})",
                embedding.shape(),
                config.n_values,
                config.d
            )));
        }
        if mlp.input_dim() != width || mlp.output_dim() != 1 {
            return Err(Error::Config(format!(
                "predictor maps {} -> {}, assembled input is {width} wide and output must be 1",
                mlp.input_dim(),
                mlp.output_dim()
            )));
        }
        Ok(Self {
            config,
            embedding: GradSlot::new(embedding),
            mlp,
            layer,
        })
    }

    pub fn tuples(&self) -> &FieldTuples {
        self.layer.tuples()
    }

    pub fn n_tuples(&self) -> usize {
        self.layer.tuples().len()
    }

    pub fn param_count(&self) -> usize {
        self.embedding.value.len() + self.mlp.param_count()
    }

    /// Row lookup `e_i = E[id_i]`, stacked per sample.
    pub fn embed(&self, samples: &[&EncodedSample]) -> Result<(Vec<usize>, DenseMatrix)> {
        let (n, d) = (self.config.n_fields, self.config.d);
        let mut ids = Vec::with_capacity(samples.len() * n);
        let mut out = DenseMatrix::zeros(samples.len(), n * d);
        for (b, s) in samples.iter().enumerate() {
            if s.value_ids.len() != n {
                return Err(Error::Contract(format!(
                    "sample has {} fields, model expects {n}",
                    s.value_ids.len()
                )));
            }
            let row = out.row_mut(b);
            for (f, &id) in s.value_ids.iter().enumerate() {
                if id >= self.config.n_values {
                    return Err(Error::Index {
                        what: "embedding table",
                        index: id,
                        len: self.config.n_values,
                    });
                }
                row[f * d..(f + 1) * d].copy_from_slice(self.embedding.value.row(id));
                ids.push(id);
            }
        }
        Ok((ids, out))
    }

    fn assemble(&self, samples: &[&EncodedSample], mask: &DenseMatrix) -> Result<(Vec<usize>, DenseMatrix, DenseMatrix, DenseMatrix)> {
        let p = self.n_tuples();
        if mask.shape() != (samples.len(), p) {
            return Err(Error::Dimension {
                op: "mask",
                left: (samples.len(), p),
                right: mask.shape(),
            });
        }
        let (ids, embedded) = self.embed(samples)?;
        let nd = self.config.n_fields * self.config.d;
        let w = self.layer.width();
        let mut inter = DenseMatrix::zeros(samples.len(), self.layer.output_len());
        let mut input = DenseMatrix::zeros(samples.len(), nd + self.layer.output_len());
        for b in 0..samples.len() {
            self.layer.forward(embedded.row(b), inter.row_mut(b));
            let row = input.row_mut(b);
            row[..nd].copy_from_slice(embedded.row(b));
            let gated = &mut row[nd..];
            let v = inter.row(b);
            for q in 0..p {
                let m = mask.get(b, q);
                for k in q * w..(q + 1) * w {
                    gated[k] = m * v[k];
                }
            }
        }
        Ok((ids, embedded, inter, input))
    }

    /// Forward pass keeping intermediates for [`ModelParams::backward`].
    pub fn forward(&self, samples: &[&EncodedSample], mask: &DenseMatrix) -> Result<ForwardTrace> {
        let (ids, embedded, interactions, input) = self.assemble(samples, mask)?;
        let (out, cache) = self.mlp.forward(&input)?;
        let logits = out.into_vec();
        let probabilities = logits.iter().map(|&z| sigmoid(z)).collect();
        Ok(ForwardTrace {
            ids,
            embedded,
            interactions,
            mask: mask.clone(),
            logits,
            probabilities,
            cache,
        })
    }

    /// Probabilities only.
    pub fn predict(&self, samples: &[&EncodedSample], mask: &DenseMatrix) -> Result<Vec<f64>> {
        let (_, _, _, input) = self.assemble(samples, mask)?;
        Ok(self.mlp.infer(&input)?.as_slice().iter().map(|&z| sigmoid(z)).collect())
    }

    /// Backward pass of `scale · Σ logloss` over the traced samples. Returns
    /// gradients for `W` and the gradient with respect to the mask.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        labels: &[f64],
        scale: f64,
    ) -> Result<(ModelGrads, DenseMatrix)> {
        let batch = trace.probabilities.len();
        if labels.len() != batch {
            return Err(Error::Dimension {
                op: "labels",
                left: (batch, 1),
                right: (labels.len(), 1),
            });
        }
        let dlogit = DenseMatrix::from_vec(
            batch,
            1,
            trace
                .probabilities
                .iter()
                .zip(labels)
                .map(|(p, y)| (p - y) * scale)
                .collect(),
        )?;
        let (dx, mlp) = self.mlp.backward(&trace.cache, &dlogit)?;

        let (n, d) = (self.config.n_fields, self.config.d);
        let nd = n * d;
        let p = self.n_tuples();
        let w = self.layer.width();
        let mut rows = DenseMatrix::zeros(batch * n, d);
        let mut d_mask = DenseMatrix::zeros(batch, p);
        let mut d_inter = vec![0.0; self.layer.output_len()];
        for b in 0..batch {
            let dxr = dx.row(b);
            let d_gated = &dxr[nd..];
            let v = trace.interactions.row(b);
            for q in 0..p {
                let m = trace.mask.get(b, q);
                let mut dm = 0.0;
                for k in q * w..(q + 1) * w {
                    dm += v[k] * d_gated[k];
                    d_inter[k] = m * d_gated[k];
                }
                d_mask.set(b, q, dm);
            }
            let d_emb = &mut rows.as_mut_slice()[b * nd..(b + 1) * nd];
            d_emb.copy_from_slice(&dxr[..nd]);
            self.layer.backward(trace.embedded.row(b), &d_inter, d_emb);
        }
        Ok((
            ModelGrads {
                ids: trace.ids.clone(),
                rows,
                mlp,
            },
            d_mask,
        ))
    }

    /// Scatter-adds gradients into the parameter slots.
    pub fn accumulate(&mut self, grads: &ModelGrads) -> Result<()> {
        for (k, &id) in grads.ids.iter().enumerate() {
            self.embedding.accumulate_row(id, grads.rows.row(k));
        }
        self.mlp.accumulate(&grads.mlp)
    }

    pub fn zero_grad(&mut self) {
        for s in self.slots_mut() {
            s.zero_grad();
        }
    }

    pub fn slots_mut(&mut self) -> Vec<&mut GradSlot> {
        let mut v = vec![&mut self.embedding];
        v.extend(self.mlp.slots_mut());
        v
    }

    pub fn slots(&self) -> Vec<&GradSlot> {
        let mut v = vec![&self.embedding];
        v.extend(self.mlp.slots());
        v
    }
}

/// Sum of clamped per-sample logloss.
pub fn logloss_sum(probabilities: &[f64], labels: &[f64]) -> f64 {
    probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum()
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1-1e-7]`.
pub fn logloss(probabilities: &[f64], labels: &[f64]) -> Result<f64> {
    if probabilities.len() != labels.len() {
        return Err(Error::Dimension {
            op: "logloss",
            left: (probabilities.len(), 1),
            right: (labels.len(), 1),
        });
    }
    if labels.is_empty() {
        return Err(Error::UndefinedMetric("logloss of zero samples".into()));
    }
    Ok(logloss_sum(probabilities, labels) / labels.len() as f64)
}
