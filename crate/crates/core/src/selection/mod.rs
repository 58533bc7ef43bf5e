//! Field-level and value-level gate networks, straight-through binarization,
//! the relaxed hybrid mask used during search, and the frozen mask used for
//! retraining and inference.

mod gates;
mod mask;

use serde::{Deserialize, Serialize};

pub use gates::{
    dense_reconstruct_oracle, diag_contract, FieldSelectionNet, GateGrads, GateNet,
    ValueSelectionNet, DENSE_ORACLE_LIMIT,
};
pub use mask::{MaskSource, SearchCache};

use crate::error::{Error, Result};
use crate::model::FieldTuples;
use crate::ndcore::{step, DenseMatrix, GradSlot};
use crate::rng::{stream, Stream};

/// Which grain decides each tuple.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grain {
    /// Hybrid weight pinned to one: field gates only.
    Field,
    /// Hybrid weight pinned to zero: value gates only.
    Value,
    /// Learned per-tuple choice.
    #[default]
    Hybrid,
}

impl std::str::FromStr for Grain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "field" => Ok(Grain::Field),
            "value" => Ok(Grain::Value),
            "hybrid" => Ok(Grain::Hybrid),
            other => Err(Error::Config(format!("unknown grain '{other}'"))),
        }
    }
}

impl std::fmt::Display for Grain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Grain::Field => "field",
            Grain::Value => "value",
            Grain::Hybrid => "hybrid",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub d_hat: usize,
    pub d_prime: usize,
    /// Hidden widths of the projection nets; `None` means `[2·d']`.
    pub hidden: Option<Vec<usize>>,
    pub bias: bool,
    pub order: usize,
    pub grain: Grain,
    /// Initial value of every entry of both cores `Σ`.
    #[serde(default = "default_sigma_init")]
    pub sigma_init: f64,
}

fn default_sigma_init() -> f64 {
    1.0
}

impl SelectionConfig {
    pub fn hidden(&self) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| vec![2 * self.d_prime])
    }
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            d_hat: 8,
            d_prime: 16,
            hidden: None,
            bias: true,
            order: 2,
            grain: Grain::Hybrid,
            sigma_init: 1.0,
        }
    }
}

/// Maps global value ids to fields.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct FieldIndex {
    offsets: Vec<usize>,
    n_values: usize,
}

impl FieldIndex {
    fn new(field_sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(field_sizes.len());
        let mut acc = 0;
        for &m in field_sizes {
            offsets.push(acc);
            acc += m;
        }
        Self {
            offsets,
            n_values: acc,
        }
    }

    fn field_of(&self, id: usize) -> Option<usize> {
        (id < self.n_values).then(|| self.offsets.partition_point(|&o| o <= id) - 1)
    }

    fn sizes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.offsets.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(&last) = self.offsets.last() {
            v.push(self.n_values - last);
        }
        v
    }

    /// Rejects out-of-range ids and tuples that repeat a field.
    fn check_distinct(&self, ids: &[usize]) -> Result<()> {
        let mut fields = Vec::with_capacity(ids.len());
        for &id in ids {
            let f = self.field_of(id).ok_or(Error::Index {
                what: "value id",
                index: id,
                len: self.n_values,
            })?;
            if fields.contains(&f) {
                return Err(Error::Contract(format!(
                    "value ids {ids:?} repeat field {f}; gates are defined across distinct fields"
                )));
            }
            fields.push(f);
        }
        Ok(())
    }
}

/// `Ŵ`: both gate networks plus the relaxed hybrid weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionParams {
    pub config: SelectionConfig,
    pub value_net: ValueSelectionNet,
    pub field_net: FieldSelectionNet,
    /// `1 × tuples` relaxed hybrid logits.
    pub alpha: GradSlot,
    tuples: FieldTuples,
    index: FieldIndex,
}

/// Gradients for `Ŵ`.
#[derive(Clone, Debug)]
pub struct SelectionGrads {
    pub value: GateGrads,
    pub field: GateGrads,
    pub alpha: Vec<f64>,
}

/// Straight-through gate: 1 for a strictly positive logit.
pub fn gate_binary(logit: f64) -> f64 {
    step(logit)
}

impl SelectionParams {
    pub fn init(config: SelectionConfig, field_sizes: &[usize], seed: u64) -> Result<Self> {
        let index = FieldIndex::new(field_sizes);
        let tuples = FieldTuples::new(field_sizes.len(), config.order)?;
        let mut rng = stream(seed, Stream::SelectionInit, 0);
        let value_net = GateNet::init(index.n_values, &config, &mut rng);
        let field_net = GateNet::init(field_sizes.len(), &config, &mut rng);
        let alpha = GradSlot::new(DenseMatrix::zeros(1, tuples.len()));
        Ok(Self {
            config,
            value_net,
            field_net,
            alpha,
            tuples,
            index,
        })
    }

    pub fn from_parts(
        config: SelectionConfig,
        field_sizes: &[usize],
        value_net: GateNet,
        field_net: GateNet,
        alpha: DenseMatrix,
    ) -> Result<Self> {
        let index = FieldIndex::new(field_sizes);
        let tuples = FieldTuples::new(field_sizes.len(), config.order)?;
        if value_net.rows() != index.n_values
            || field_net.rows() != field_sizes.len()
            || alpha.shape() != (1, tuples.len())
            || value_net.d_prime() != field_net.d_prime()
        {
            return Err(Error::Config(
                "selection parameters do not match the vocabulary".into(),
            ));
        }
        Ok(Self {
            config,
            value_net,
            field_net,
            alpha: GradSlot::new(alpha),
            tuples,
            index,
        })
    }

    pub fn tuples(&self) -> &FieldTuples {
        &self.tuples
    }

    pub fn field_sizes(&self) -> Vec<usize> {
        self.index.sizes()
    }

    pub fn n_values(&self) -> usize {
        self.index.n_values
    }

    pub fn field_of(&self, id: usize) -> Option<usize> {
        self.index.field_of(id)
    }

    /// Hybrid weight of tuple `p`: `σ(α_c[p])`, or the pinned 1/0.
    pub fn hybrid_weight(&self, p: usize) -> f64 {
        match self.config.grain {
            Grain::Field => 1.0,
            Grain::Value => 0.0,
            Grain::Hybrid => crate::ndcore::sigmoid(self.alpha.value.as_slice()[p]),
        }
    }

    /// Value-level gate logit for two ids from different fields.
    pub fn value_gate_logit(&self, id_a: usize, id_b: usize) -> Result<f64> {
        self.index.check_distinct(&[id_a, id_b])?;
        self.value_net.logit(&[id_a, id_b])
    }

    /// Field-level gate logit for two distinct fields.
    pub fn field_gate_logit(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.field_net.rows();
        if i == j {
            return Err(Error::Contract(format!(
                "field pair ({i}, {i}) lies on the fixed identity diagonal"
            )));
        }
        if i >= n || j >= n {
            return Err(Error::Index {
                what: "field",
                index: i.max(j),
                len: n,
            });
        }
        self.field_net.logit(&[i, j])
    }

    /// Value-level gate logit for `t` ids from `t` distinct fields.
    pub fn general_order_logit(&self, ids: &[usize]) -> Result<f64> {
        if ids.len() < 2 {
            return Err(Error::Contract("a gate tuple needs at least two ids".into()));
        }
        self.index.check_distinct(ids)?;
        self.value_net.logit(ids)
    }

    pub fn param_count(&self) -> usize {
        self.value_net.param_count() + self.field_net.param_count() + self.alpha.value.len()
    }

    /// Slots updated by the selection optimizer, in a fixed order. Pinned
    /// hybrid weights and frozen cores are left out.
    pub fn trainable_slots_mut(&mut self, freeze_sigma: bool) -> Vec<&mut GradSlot> {
        let mut v = self.value_net.slots_mut(!freeze_sigma);
        v.extend(self.field_net.slots_mut(!freeze_sigma));
        if self.config.grain == Grain::Hybrid {
            v.push(&mut self.alpha);
        }
        v
    }

    pub fn slots(&self) -> Vec<&GradSlot> {
        let mut v = self.value_net.slots();
        v.extend(self.field_net.slots());
        v.push(&self.alpha);
        v
    }

    pub fn zero_grad(&mut self) {
        for s in self.value_net.slots_mut(true) {
            s.zero_grad();
        }
        for s in self.field_net.slots_mut(true) {
            s.zero_grad();
        }
        self.alpha.zero_grad();
    }

    pub fn accumulate(&mut self, g: &SelectionGrads) -> Result<()> {
        self.value_net.accumulate(&g.value, true)?;
        self.field_net.accumulate(&g.field, true)?;
        for (a, b) in self.alpha.grad.as_mut_slice().iter_mut().zip(&g.alpha) {
            *a += b;
        }
        Ok(())
    }
}

/// Exact count of trainable scalars in `Ŵ`.
pub fn selection_param_count(selection: &SelectionParams) -> usize {
    selection.param_count()
}

/// Discretized selection: per tuple, keep the field gate (`alpha_star`) or
/// the value gate, with both gate nets frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenSelection {
    pub config: SelectionConfig,
    pub alpha_star: Vec<bool>,
    pub value_net: ValueSelectionNet,
    pub field_net: FieldSelectionNet,
    tuples: FieldTuples,
    index: FieldIndex,
    field_bits: Vec<f64>,
}

/// `alpha_star[p] = α_c[p] > 0` (pinned grains map to all-one/all-zero).
pub fn freeze_selection(selection: &SelectionParams) -> FrozenSelection {
    let alpha_star = (0..selection.tuples.len())
        .map(|p| match selection.config.grain {
            Grain::Field => true,
            Grain::Value => false,
            Grain::Hybrid => selection.alpha.value.as_slice()[p] > 0.0,
        })
        .collect();
    let mut clean = selection.clone();
    clean.zero_grad();
    FrozenSelection::from_parts(
        clean.config,
        &selection.field_sizes(),
        alpha_star,
        clean.value_net,
        clean.field_net,
    )
    .expect("parameters of a live selection are consistent")
}

impl FrozenSelection {
    pub fn from_parts(
        config: SelectionConfig,
        field_sizes: &[usize],
        alpha_star: Vec<bool>,
        value_net: GateNet,
        field_net: GateNet,
    ) -> Result<Self> {
        let index = FieldIndex::new(field_sizes);
        let tuples = FieldTuples::new(field_sizes.len(), config.order)?;
        if alpha_star.len() != tuples.len()
            || value_net.rows() != index.n_values
            || field_net.rows() != field_sizes.len()
        {
            return Err(Error::Config(
                "frozen selection does not match the vocabulary".into(),
            ));
        }
        let ids: Vec<usize> = (0..field_sizes.len()).collect();
        let g = field_net.project_infer(&ids)?;
        let sigma = field_net.sigma.value.as_slice();
        let field_bits = tuples
            .iter()
            .map(|t| {
                let rows: Vec<&[f64]> = t.iter().map(|&f| g.row(f)).collect();
                gate_binary(diag_contract(sigma, &rows))
            })
            .collect();
        Ok(Self {
            config,
            alpha_star,
            value_net,
            field_net,
            tuples,
            index,
            field_bits,
        })
    }

    pub fn tuples(&self) -> &FieldTuples {
        &self.tuples
    }

    pub fn field_sizes(&self) -> Vec<usize> {
        self.index.sizes()
    }

    /// Binary field gate per tuple.
    pub fn field_bits(&self) -> &[f64] {
        &self.field_bits
    }

    pub fn slots(&self) -> Vec<&GradSlot> {
        let mut v = self.value_net.slots();
        v.extend(self.field_net.slots());
        v
    }
}
