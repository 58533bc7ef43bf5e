use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::DenseMatrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    #[default]
    Inner,
    Outer,
}

/// Field index tuples `i_1 < i_2 < ... < i_t` in lexicographic order.
/// This order indexes gates, hybrid weights and interaction slots everywhere.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldTuples {
    order: usize,
    flat: Vec<usize>,
}

impl FieldTuples {
    pub fn new(n_fields: usize, order: usize) -> Result<Self> {
        if order < 2 || order > n_fields {
            return Err(Error::Config(format!(
                "interaction order {order} needs 2 <= t <= n = {n_fields}"
            )));
        }
        let mut flat = Vec::new();
        let mut idx: Vec<usize> = (0..order).collect();
        loop {
            flat.extend_from_slice(&idx);
            // advance to the next combination
            let mut k = order;
            while k > 0 && idx[k - 1] == n_fields - order + k - 1 {
                k -= 1;
            }
            if k == 0 {
                break;
            }
            idx[k - 1] += 1;
            for j in k..order {
                idx[j] = idx[j - 1] + 1;
            }
        }
        Ok(Self { order, flat })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.flat.len() / self.order
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    #[inline]
    pub fn get(&self, p: usize) -> &[usize] {
        &self.flat[p * self.order..(p + 1) * self.order]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.flat.chunks(self.order)
    }

    /// Position of an unordered pair `(i, j)` when `order == 2`.
    pub fn pair_index(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.iter().position(|t| t == [a, b])
    }
}

/// Interaction layer over stacked field embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionLayer {
    d: usize,
    op: Operation,
    tuples: FieldTuples,
}

impl InteractionLayer {
    pub fn new(n_fields: usize, d: usize, order: usize, op: Operation) -> Result<Self> {
        if op == Operation::Outer && order != 2 {
            return Err(Error::Config(
                "the outer-product interaction is defined for order 2 only".into(),
            ));
        }
        Ok(Self {
            d,
            op,
            tuples: FieldTuples::new(n_fields, order)?,
        })
    }

    pub fn tuples(&self) -> &FieldTuples {
        &self.tuples
    }

    /// Values produced per tuple: 1 for inner, `d²` for outer.
    pub fn width(&self) -> usize {
        match self.op {
            Operation::Inner => 1,
            Operation::Outer => self.d * self.d,
        }
    }

    pub fn output_len(&self) -> usize {
        self.tuples.len() * self.width()
    }

    /// `emb` holds one sample's `n × d` embeddings.
    pub fn forward(&self, emb: &[f64], out: &mut [f64]) {
        let d = self.d;
        let w = self.width();
        for (p, t) in self.tuples.iter().enumerate() {
            let slot = &mut out[p * w..(p + 1) * w];
            match self.op {
                Operation::Inner => {
                    // sum_k prod_s e_{t_s}[k]; the dot product for pairs
                    let mut acc = 0.0;
                    for k in 0..d {
                        let mut prod = emb[t[0] * d + k];
                        for &f in &t[1..] {
                            prod *= emb[f * d + k];
                        }
                        acc += prod;
                    }
                    slot[0] = acc;
                }
                Operation::Outer => {
                    let (ei, ej) = (&emb[t[0] * d..(t[0] + 1) * d], &emb[t[1] * d..(t[1] + 1) * d]);
                    for a in 0..d {
                        for b in 0..d {
                            slot[a * d + b] = ei[a] * ej[b];
                        }
                    }
                }
            }
        }
    }

    /// Adds the embedding gradient implied by `d_out` into `d_emb`.
    pub fn backward(&self, emb: &[f64], d_out: &[f64], d_emb: &mut [f64]) {
        let d = self.d;
        let w = self.width();
        for (p, t) in self.tuples.iter().enumerate() {
            let g = &d_out[p * w..(p + 1) * w];
            match self.op {
                Operation::Inner => {
                    let g = g[0];
                    if g == 0.0 {
                        continue;
                    }
                    for k in 0..d {
                        for (s, &f) in t.iter().enumerate() {
                            let mut others = 1.0;
                            for (s2, &f2) in t.iter().enumerate() {
                                if s2 != s {
                                    others *= emb[f2 * d + k];
                                }
                            }
                            d_emb[f * d + k] += g * others;
                        }
                    }
                }
                Operation::Outer => {
                    let (i, j) = (t[0], t[1]);
                    for a in 0..d {
                        for b in 0..d {
                            let gab = g[a * d + b];
                            d_emb[i * d + a] += gab * emb[j * d + b];
                            d_emb[j * d + b] += gab * emb[i * d + a];
                        }
                    }
                }
            }
        }
    }

    fn apply_rows(&self, embedded: &DenseMatrix) -> Result<DenseMatrix> {
        let n = embedded.cols() / self.d.max(1);
        if n * self.d != embedded.cols() {
            return Err(Error::Dimension {
                op: "interactions",
                left: embedded.shape(),
                right: (n, self.d),
            });
        }
        let mut out = DenseMatrix::zeros(embedded.rows(), self.output_len());
        for b in 0..embedded.rows() {
            self.forward(embedded.row(b), out.row_mut(b));
        }
        Ok(out)
    }
}

/// `⟨e_i, e_j⟩` for every pair `i < j`; `embedded` is `batch × n·d`.
pub fn pairwise_inner(embedded: &DenseMatrix, n_fields: usize) -> Result<DenseMatrix> {
    let d = embedded.cols() / n_fields.max(1);
    InteractionLayer::new(n_fields, d, 2, Operation::Inner)?.apply_rows(embedded)
}

/// Flattened `e_i e_jᵀ` for every pair `i < j`, `d²` values per pair.
pub fn pairwise_outer(embedded: &DenseMatrix, n_fields: usize) -> Result<DenseMatrix> {
    let d = embedded.cols() / n_fields.max(1);
    InteractionLayer::new(n_fields, d, 2, Operation::Outer)?.apply_rows(embedded)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ndcore::finite_diff_grad;

    #[test]
    fn tuple_enumeration() {
        let t = FieldTuples::new(4, 2).unwrap();
        let all: Vec<Vec<usize>> = t.iter().map(<[usize]>::to_vec).collect();
        assert_eq!(
            all,
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        assert_eq!(FieldTuples::new(5, 3).unwrap().len(), 10);
        assert_eq!(FieldTuples::new(3, 3).unwrap().len(), 1);
        assert!(FieldTuples::new(3, 4).is_err());
        assert_eq!(t.pair_index(3, 1), Some(4));
    }

    #[test]
    fn inner_examples() {
        assert_eq!(FieldTuples::new(3, 2).unwrap().len(), 3);
        let e = DenseMatrix::from_rows(&[[1.0, 0.0, 0.0, 1.0], [1.0, 2.0, 3.0, 4.0]]);
        let v = pairwise_inner(&e, 2).unwrap();
        assert_eq!(v.get(0, 0), 0.0);
        assert_eq!(v.get(1, 0), 11.0);
    }

    #[test]
    fn outer_examples() {
        let e = DenseMatrix::from_rows(&[[1.0, 0.0, 0.0, 1.0]]);
        let v = pairwise_outer(&e, 2).unwrap();
        assert_eq!(v.row(0), &[0.0, 1.0, 0.0, 0.0]);
        let e1 = DenseMatrix::from_rows(&[[0.5, -2.0, 3.0]]);
        assert_eq!(pairwise_outer(&e1, 3).unwrap(), pairwise_inner(&e1, 3).unwrap());
    }

    proptest! {
        #[test]
        fn outer_trace_is_inner(xs in proptest::collection::vec(-2.0f64..2.0, 9)) {
            let e = DenseMatrix::from_vec(1, 9, xs).unwrap();
            let inner = pairwise_inner(&e, 3).unwrap();
            let outer = pairwise_outer(&e, 3).unwrap();
            for p in 0..3 {
                let block = &outer.row(0)[p * 9..(p + 1) * 9];
                let tr = block[0] + block[4] + block[8];
                prop_assert!((tr - inner.get(0, p)).abs() < 1e-12);
            }
        }

        #[test]
        fn inner_is_symmetric(a in proptest::collection::vec(-2.0f64..2.0, 4), b in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let ab: Vec<f64> = a.iter().chain(&b).copied().collect();
            let ba: Vec<f64> = b.iter().chain(&a).copied().collect();
            let x = pairwise_inner(&DenseMatrix::from_vec(1, 8, ab).unwrap(), 2).unwrap();
            let y = pairwise_inner(&DenseMatrix::from_vec(1, 8, ba).unwrap(), 2).unwrap();
            prop_assert_eq!(x, y);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (order, op) in [(2, Operation::Inner), (3, Operation::Inner), (2, Operation::Outer)] {
            let layer = InteractionLayer::new(4, 3, order, op).unwrap();
            let emb = DenseMatrix::uniform(1, 12, 2.0, &mut rng);
            let w = DenseMatrix::uniform(1, layer.output_len(), 2.0, &mut rng);
            let f = |e: &DenseMatrix| {
                let mut out = vec![0.0; layer.output_len()];
                layer.forward(e.as_slice(), &mut out);
                out.iter().zip(w.as_slice()).map(|(a, b)| a * b).sum::<f64>()
            };
            let mut d_emb = vec![0.0; 12];
            layer.backward(emb.as_slice(), w.as_slice(), &mut d_emb);
            let fd = finite_diff_grad(f, &emb, 1e-5);
            for (a, n) in d_emb.iter().zip(fd.as_slice()) {
                assert!((a - n).abs() < 1e-7, "{order} {op:?}: {a} vs {n}");
            }
        }
        assert!(InteractionLayer::new(4, 3, 3, Operation::Outer).is_err());
    }
}
