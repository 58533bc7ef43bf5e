use rand::Rng;

use super::matrix::{DenseMatrix, GradSlot};
use super::ops::{matmul, matmul_vjp, relu, relu_vjp};
use crate::error::{Error, Result};

/// Affine layer `y = x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: GradSlot,
    pub bias: Option<GradSlot>,
}

impl Linear {
    /// Uniform init in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = GradSlot::new(DenseMatrix::uniform(fan_in, fan_out, bound, rng));
        let bias = bias.then(|| GradSlot::new(DenseMatrix::uniform(1, fan_out, bound, rng)));
        Self { weight, bias }
    }

    pub fn from_parts(weight: DenseMatrix, bias: Option<DenseMatrix>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.rows() != 1 || b.cols() != weight.cols() {
                return Err(Error::Dimension {
                    op: "Linear::from_parts",
                    left: weight.shape(),
                    right: b.shape(),
                });
            }
        }
        Ok(Self {
            weight: GradSlot::new(weight),
            bias: bias.map(GradSlot::new),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut y = matmul(x, &self.weight.value)?;
        let Some(bias) = &self.bias else {
            return Ok(y);
        };
        let b = bias.value.as_slice();
        for r in 0..y.rows() {
            for (v, bv) in y.row_mut(r).iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(y)
    }
}

/// Multi-layer perceptron: ReLU after every layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<DenseMatrix>,
    pre: Vec<DenseMatrix>,
}

/// Per-layer `(dW, db)`; `db` is computed even for bias-free layers and
/// ignored when accumulating.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<(DenseMatrix, DenseMatrix)>,
}

impl MlpGrads {
    pub fn add_assign(&mut self, other: &MlpGrads) -> Result<()> {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.add_assign(ow)?;
            b.add_assign(ob)?;
        }
        Ok(())
    }
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`, every layer with a bias.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        Self::init_with_bias(sizes, true, rng)
    }

    pub fn init_with_bias<R: Rng + ?Sized>(sizes: &[usize], bias: bool, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let layers = sizes
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], bias, rng))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.value.len() + l.bias.as_ref().map_or(0, |b| b.value.len()))
            .sum()
    }

    pub fn infer(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h)?;
            if i < last {
                h = relu(&h);
            }
        }
        Ok(h)
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<(DenseMatrix, MlpCache)> {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h)?;
            inputs.push(h);
            h = if i < last { relu(&z) } else { z.clone() };
            pre.push(z);
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    /// Returns the gradient with respect to the input and per-layer
    /// parameter gradients. Parameter slots are not touched.
    pub fn backward(&self, cache: &MlpCache, dout: &DenseMatrix) -> Result<(DenseMatrix, MlpGrads)> {
        let last = self.layers.len() - 1;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = dout.clone();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                g = relu_vjp(&cache.pre[i], &g)?;
            }
            let layer = &self.layers[i];
            let (dx, dw) = matmul_vjp(&cache.inputs[i], &layer.weight.value, &g)?;
            let mut db = DenseMatrix::zeros(1, g.cols());
            for r in 0..g.rows() {
                for (a, b) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                    *a += b;
                }
            }
            grads.push((dw, db));
            g = dx;
        }
        grads.reverse();
        Ok((g, MlpGrads { layers: grads }))
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        DenseMatrix::zeros(l.in_dim(), l.out_dim()),
                        DenseMatrix::zeros(1, l.out_dim()),
                    )
                })
                .collect(),
        }
    }

    pub fn accumulate(&mut self, grads: &MlpGrads) -> Result<()> {
        for (layer, (dw, db)) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weight.accumulate(dw)?;
            if let Some(b) = &mut layer.bias {
                b.accumulate(db)?;
            }
        }
        Ok(())
    }

    pub fn slots_mut(&mut self) -> impl Iterator<Item = &mut GradSlot> {
        self.layers
            .iter_mut()
            .flat_map(|l| std::iter::once(&mut l.weight).chain(l.bias.as_mut()))
    }

    pub fn slots(&self) -> impl Iterator<Item = &GradSlot> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(&l.weight).chain(l.bias.as_ref()))
    }
}
