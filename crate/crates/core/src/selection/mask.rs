use super::{diag_contract, gate_binary, FrozenSelection, Grain, SelectionGrads, SelectionParams};
use crate::data::EncodedSample;
use crate::error::{Error, Result};
use crate::ndcore::{sigmoid_grad, DenseMatrix, MlpCache};

/// Where the per-sample, per-tuple interaction mask comes from.
#[derive(Clone, Copy, Debug)]
pub enum MaskSource<'a> {
    /// Every interaction kept (plain network).
    Ones,
    /// Every interaction dropped.
    Zeros,
    /// Relaxed hybrid mask of a selection under search.
    Search(&'a SelectionParams),
    /// Binary mask of a frozen selection.
    Frozen(&'a FrozenSelection),
}

/// Intermediates of the search mask for the backward pass.
#[derive(Clone, Debug)]
pub struct SearchCache {
    value_ids: Vec<usize>,
    u: DenseMatrix,
    u_cache: MlpCache,
    field_ids: Vec<usize>,
    g: DenseMatrix,
    g_cache: MlpCache,
    /// Field gate logits and bits per tuple.
    pub field_logits: Vec<f64>,
    pub field_bits: Vec<f64>,
    /// `batch × tuples`
    pub value_logits: DenseMatrix,
    pub value_bits: DenseMatrix,
    pub weights: Vec<f64>,
}

impl MaskSource<'_> {
    /// `samples.len() × n_tuples` mask without gradient bookkeeping.
    pub fn compute(&self, samples: &[&EncodedSample], n_tuples: usize) -> Result<DenseMatrix> {
        let mask = match self {
            MaskSource::Ones => DenseMatrix::filled(samples.len(), n_tuples, 1.0),
            MaskSource::Zeros => DenseMatrix::zeros(samples.len(), n_tuples),
            MaskSource::Search(sel) => sel.search_forward(samples)?.0,
            MaskSource::Frozen(frozen) => frozen.mask(samples)?,
        };
        if mask.cols() != n_tuples {
            return Err(Error::Config(format!(
                "selection covers {} interaction tuples, model has {n_tuples}",
                mask.cols()
            )));
        }
        Ok(mask)
    }
}

fn value_ids(samples: &[&EncodedSample]) -> Vec<usize> {
    samples
        .iter()
        .flat_map(|s| s.value_ids.iter().copied())
        .collect()
}

/// Accumulates `g · ∂logit/∂(factors, σ)` for one tuple whose factor rows
/// live at `rows` of `u`.
fn contract_backward(
    u: &DenseMatrix,
    rows: &[usize],
    sigma: &[f64],
    g: f64,
    d_u: &mut DenseMatrix,
    d_sigma: &mut [f64],
) {
    for r in 0..sigma.len() {
        let mut all = 1.0;
        for &k in rows {
            all *= u.get(k, r);
        }
        d_sigma[r] += g * all;
        for (s, &k) in rows.iter().enumerate() {
            let mut others = 1.0;
            for (s2, &k2) in rows.iter().enumerate() {
                if s2 != s {
                    others *= u.get(k2, r);
                }
            }
            let cur = d_u.get(k, r);
            d_u.set(k, r, cur + g * sigma[r] * others);
        }
    }
}

impl SelectionParams {
    fn check_fields(&self, samples: &[&EncodedSample]) -> Result<usize> {
        let n = self.field_net.rows();
        for s in samples {
            if s.value_ids.len() != n {
                return Err(Error::Contract(format!(
                    "sample has {} fields, selection expects {n}",
                    s.value_ids.len()
                )));
            }
        }
        Ok(n)
    }

    /// Relaxed hybrid mask `w·A_f + (1−w)·A_v` with STE-binarized gates.
    pub fn search_forward(&self, samples: &[&EncodedSample]) -> Result<(DenseMatrix, SearchCache)> {
        let n = self.check_fields(samples)?;
        let batch = samples.len();
        let p = self.tuples.len();

        let field_ids: Vec<usize> = (0..n).collect();
        let (g, g_cache) = self.field_net.project(&field_ids)?;
        let sigma_f = self.field_net.sigma.value.as_slice();
        let mut field_logits = Vec::with_capacity(p);
        for t in self.tuples.iter() {
            let rows: Vec<&[f64]> = t.iter().map(|&f| g.row(f)).collect();
            field_logits.push(diag_contract(sigma_f, &rows));
        }
        let field_bits: Vec<f64> = field_logits.iter().map(|&l| gate_binary(l)).collect();

        let ids = value_ids(samples);
        let (u, u_cache) = self.value_net.project(&ids)?;
        let sigma_v = self.value_net.sigma.value.as_slice();
        let mut value_logits = DenseMatrix::zeros(batch, p);
        let mut value_bits = DenseMatrix::zeros(batch, p);
        let mut mask = DenseMatrix::zeros(batch, p);
        let weights: Vec<f64> = (0..p).map(|q| self.hybrid_weight(q)).collect();
        let mut rows: Vec<&[f64]> = Vec::with_capacity(self.tuples.order());
        for b in 0..batch {
            for (q, t) in self.tuples.iter().enumerate() {
                rows.clear();
                rows.extend(t.iter().map(|&f| u.row(b * n + f)));
                let l = diag_contract(sigma_v, &rows);
                let bit = gate_binary(l);
                value_logits.set(b, q, l);
                value_bits.set(b, q, bit);
                let w = weights[q];
                mask.set(b, q, w * field_bits[q] + (1.0 - w) * bit);
            }
        }
        Ok((
            mask,
            SearchCache {
                value_ids: ids,
                u,
                u_cache,
                field_ids,
                g,
                g_cache,
                field_logits,
                field_bits,
                value_logits,
                value_bits,
                weights,
            },
        ))
    }

    /// Maps a mask gradient onto `Ŵ`. Gates pass gradients straight through.
    pub fn search_backward(&self, cache: &SearchCache, d_mask: &DenseMatrix) -> Result<SelectionGrads> {
        let (batch, p) = cache.value_bits.shape();
        if d_mask.shape() != (batch, p) {
            return Err(Error::Dimension {
                op: "search_backward",
                left: (batch, p),
                right: d_mask.shape(),
            });
        }
        let hybrid = self.config.grain == Grain::Hybrid;
        let alpha = self.alpha.value.as_slice();
        let mut d_alpha = vec![0.0; p];
        let mut d_field = vec![0.0; p];
        let mut d_value = DenseMatrix::zeros(batch, p);
        for b in 0..batch {
            for q in 0..p {
                let g = d_mask.get(b, q);
                let w = cache.weights[q];
                if hybrid {
                    d_alpha[q] += g * sigmoid_grad(alpha[q]) * (cache.field_bits[q] - cache.value_bits.get(b, q));
                }
                d_field[q] += g * w;
                d_value.set(b, q, g * (1.0 - w));
            }
        }
        let (value, field) = self.logits_backward(cache, &d_field, &d_value)?;
        Ok(SelectionGrads {
            value,
            field,
            alpha: d_alpha,
        })
    }

    /// Backward from gate-logit gradients to both gate nets.
    pub fn logits_backward(
        &self,
        cache: &SearchCache,
        d_field_logits: &[f64],
        d_value_logits: &DenseMatrix,
    ) -> Result<(super::GateGrads, super::GateGrads)> {
        let n = cache.field_ids.len();
        let batch = d_value_logits.rows();

        let mut d_g = DenseMatrix::zeros(cache.g.rows(), cache.g.cols());
        let mut d_sigma_f = vec![0.0; self.field_net.d_prime()];
        for (q, t) in self.tuples.iter().enumerate() {
            if d_field_logits[q] != 0.0 {
                contract_backward(
                    &cache.g,
                    t,
                    self.field_net.sigma.value.as_slice(),
                    d_field_logits[q],
                    &mut d_g,
                    &mut d_sigma_f,
                );
            }
        }

        let mut d_u = DenseMatrix::zeros(cache.u.rows(), cache.u.cols());
        let mut d_sigma_v = vec![0.0; self.value_net.d_prime()];
        let mut rows = Vec::with_capacity(self.tuples.order());
        for b in 0..batch {
            for (q, t) in self.tuples.iter().enumerate() {
                let g = d_value_logits.get(b, q);
                if g == 0.0 {
                    continue;
                }
                rows.clear();
                rows.extend(t.iter().map(|&f| b * n + f));
                contract_backward(
                    &cache.u,
                    &rows,
                    self.value_net.sigma.value.as_slice(),
                    g,
                    &mut d_u,
                    &mut d_sigma_v,
                );
            }
        }

        let mut value = self.value_net.backward(&cache.value_ids, &cache.u_cache, &d_u)?;
        value.sigma = d_sigma_v;
        let mut field = self.field_net.backward(&cache.field_ids, &cache.g_cache, &d_g)?;
        field.sigma = d_sigma_f;
        Ok((value, field))
    }
}

impl FrozenSelection {
    /// Exact binary mask: the field bit where `alpha_star`, else the value bit.
    pub fn mask(&self, samples: &[&EncodedSample]) -> Result<DenseMatrix> {
        let n = self.field_net.rows();
        let p = self.tuples.len();
        let mut mask = DenseMatrix::zeros(samples.len(), p);
        let needs_values = self.alpha_star.iter().any(|&a| !a);
        let u = if needs_values {
            for s in samples {
                if s.value_ids.len() != n {
                    return Err(Error::Contract(format!(
                        "sample has {} fields, selection expects {n}",
                        s.value_ids.len()
                    )));
                }
            }
            Some(self.value_net.project_infer(&value_ids(samples))?)
        } else {
            None
        };
        let sigma_v = self.value_net.sigma.value.as_slice();
        let mut rows: Vec<&[f64]> = Vec::with_capacity(self.tuples.order());
        for b in 0..samples.len() {
            for (q, t) in self.tuples.iter().enumerate() {
                let bit = if self.alpha_star[q] {
                    self.field_bits[q]
                } else {
                    let u = u.as_ref().expect("value factors computed");
                    rows.clear();
                    rows.extend(t.iter().map(|&f| u.row(b * n + f)));
                    gate_binary(diag_contract(sigma_v, &rows))
                };
                mask.set(b, q, bit);
            }
        }
        Ok(mask)
    }
}

