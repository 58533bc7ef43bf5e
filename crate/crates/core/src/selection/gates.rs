use rand::Rng;

use crate::error::{Error, Result};
use crate::ndcore::{guard, matmul, DenseMatrix, GradSlot, Mlp, MlpCache, MlpGrads};

use super::SelectionConfig;

const TABLE_INIT: f64 = 0.1;

/// Largest dense gate tensor the oracle will build.
pub const DENSE_ORACLE_LIMIT: u128 = 1 << 24;

/// Decomposed gate network: a small embedding table, a projection net and a
/// diagonal core. The gate logit of an index tuple is
/// `Σ_r σ[r] · Π_s net(table[id_s])[r]`, evaluated only for the tuples a
/// batch touches.
#[derive(Clone, Debug, PartialEq)]
pub struct GateNet {
    pub table: GradSlot,
    pub net: Mlp,
    /// `1 × d'` diagonal of the core tensor.
    pub sigma: GradSlot,
}

/// Gate over value ids (`m` table rows).
pub type ValueSelectionNet = GateNet;
/// Gate over field ids (`n` table rows).
pub type FieldSelectionNet = GateNet;

#[derive(Clone, Debug)]
pub struct GateGrads {
    /// Table row of each gradient row in `rows`.
    pub ids: Vec<usize>,
    pub rows: DenseMatrix,
    pub net: MlpGrads,
    pub sigma: Vec<f64>,
}

impl GateNet {
    pub fn init<R: Rng + ?Sized>(rows: usize, config: &SelectionConfig, rng: &mut R) -> Self {
        let table = DenseMatrix::uniform(rows, config.d_hat, TABLE_INIT, rng);
        let mut sizes = vec![config.d_hat];
        sizes.extend(config.hidden());
        sizes.push(config.d_prime);
        let net = Mlp::init_with_bias(&sizes, config.bias, rng);
        Self {
            table: GradSlot::new(table),
            net,
            sigma: GradSlot::new(DenseMatrix::filled(1, config.d_prime, config.sigma_init)),
        }
    }

    pub fn from_parts(table: DenseMatrix, net: Mlp, sigma: DenseMatrix) -> Result<Self> {
        if net.input_dim() != table.cols() || sigma.shape() != (1, net.output_dim()) {
            return Err(Error::Config(format!(
                "gate net maps {} -> {}, table is {:?}, sigma is {:?}",
                net.input_dim(),
                net.output_dim(),
                table.shape(),
                sigma.shape()
            )));
        }
        Ok(Self {
            table: GradSlot::new(table),
            net,
            sigma: GradSlot::new(sigma),
        })
    }

    pub fn rows(&self) -> usize {
        self.table.value.rows()
    }

    pub fn d_prime(&self) -> usize {
        self.sigma.value.cols()
    }

    pub fn param_count(&self) -> usize {
        self.table.value.len() + self.net.param_count() + self.sigma.value.len()
    }

    fn gather(&self, ids: &[usize]) -> Result<DenseMatrix> {
        let d_hat = self.table.value.cols();
        let mut x = DenseMatrix::zeros(ids.len(), d_hat);
        for (k, &id) in ids.iter().enumerate() {
            if id >= self.rows() {
                return Err(Error::Index {
                    what: "gate table",
                    index: id,
                    len: self.rows(),
                });
            }
            x.row_mut(k).copy_from_slice(self.table.value.row(id));
        }
        Ok(x)
    }

    /// Factor rows `net(table[id])` for each id, with a backward cache.
    pub fn project(&self, ids: &[usize]) -> Result<(DenseMatrix, MlpCache)> {
        self.net.forward(&self.gather(ids)?)
    }

    pub fn project_infer(&self, ids: &[usize]) -> Result<DenseMatrix> {
        self.net.infer(&self.gather(ids)?)
    }

    /// Gate logit of one index tuple of any order.
    pub fn logit(&self, ids: &[usize]) -> Result<f64> {
        let u = self.project_infer(ids)?;
        let rows: Vec<&[f64]> = (0..ids.len()).map(|k| u.row(k)).collect();
        Ok(diag_contract(self.sigma.value.as_slice(), &rows))
    }

    /// Backpropagates factor-row gradients `d_proj` to the table and net.
    pub fn backward(&self, ids: &[usize], cache: &MlpCache, d_proj: &DenseMatrix) -> Result<GateGrads> {
        let (dx, net) = self.net.backward(cache, d_proj)?;
        Ok(GateGrads {
            ids: ids.to_vec(),
            rows: dx,
            net,
            sigma: vec![0.0; self.d_prime()],
        })
    }

    pub fn accumulate(&mut self, g: &GateGrads, include_sigma: bool) -> Result<()> {
        for (k, &id) in g.ids.iter().enumerate() {
            self.table.accumulate_row(id, g.rows.row(k));
        }
        self.net.accumulate(&g.net)?;
        if include_sigma {
            for (a, b) in self.sigma.grad.as_mut_slice().iter_mut().zip(&g.sigma) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn slots_mut(&mut self, include_sigma: bool) -> Vec<&mut GradSlot> {
        let mut v = vec![&mut self.table];
        v.extend(self.net.slots_mut());
        if include_sigma {
            v.push(&mut self.sigma);
        }
        v
    }

    pub fn slots(&self) -> Vec<&GradSlot> {
        let mut v = vec![&self.table];
        v.extend(self.net.slots());
        v.push(&self.sigma);
        v
    }
}

/// `Σ_r sigma[r] · (f_1[r] · f_2[r] · ... · f_t[r])`. The product is formed
/// before scaling so that the pairwise case is exactly symmetric.
#[inline]
pub fn diag_contract(sigma: &[f64], factors: &[&[f64]]) -> f64 {
    let mut acc = 0.0;
    for (r, &s) in sigma.iter().enumerate() {
        let mut prod = factors[0][r];
        for f in &factors[1..] {
            prod *= f[r];
        }
        acc += s * prod;
    }
    acc
}

/// Builds the full gate tensor of `net` at `order` by mode products on the
/// dense factor matrix. Test oracle only: refuses anything above `limit`
/// elements.
pub fn dense_reconstruct_oracle(net: &GateNet, order: usize, limit: u128) -> Result<Vec<f64>> {
    let m = net.rows();
    guard::check((m as u128).pow(order as u32), limit)?;
    let ids: Vec<usize> = (0..m).collect();
    let u = net.project_infer(&ids)?;
    let sigma = net.sigma.value.as_slice();
    // U·diag(Σ)
    let mut scaled = u.clone();
    for r in 0..m {
        for (v, s) in scaled.row_mut(r).iter_mut().zip(sigma) {
            *v *= s;
        }
    }
    let ut = u.transpose();
    match order {
        2 => Ok(matmul(&scaled, &ut)?.into_vec()),
        3 => {
            // slice a: (U with columns scaled by (UΣ)[a,:]) · Uᵀ
            let mut out = Vec::with_capacity(m * m * m);
            for a in 0..m {
                let mut w = u.clone();
                for r in 0..m {
                    for (v, s) in w.row_mut(r).iter_mut().zip(scaled.row(a)) {
                        *v *= s;
                    }
                }
                out.extend_from_slice(matmul(&w, &ut)?.as_slice());
            }
            Ok(out)
        }
        t => Err(Error::Config(format!("dense oracle supports order 2 or 3, got {t}"))),
    }
}
