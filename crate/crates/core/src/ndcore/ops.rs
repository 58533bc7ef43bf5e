use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut c = DenseMatrix::zeros(n, m);
    let bd = b.as_slice();
    let cd = c.as_mut_slice();
    for i in 0..n {
        let arow = a.row(i);
        let crow = &mut cd[i * m..(i + 1) * m];
        for (p, &aip) in arow.iter().enumerate().take(k) {
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * m..(p + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    Ok(c)
}

/// Gradients of `C = A·B` given `dC`: `(dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_vjp(
    a: &DenseMatrix,
    b: &DenseMatrix,
    dc: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if dc.shape() != (a.rows(), b.cols()) {
        return Err(Error::Dimension {
            op: "matmul_vjp",
            left: (a.rows(), b.cols()),
            right: dc.shape(),
        });
    }
    let da = matmul(dc, &b.transpose())?;
    let db = matmul(&a.transpose(), dc)?;
    Ok((da, db))
}

pub fn relu(x: &DenseMatrix) -> DenseMatrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `upstream` where `x > 0`; the subgradient at 0 is 0.
pub fn relu_vjp(x: &DenseMatrix, upstream: &DenseMatrix) -> Result<DenseMatrix> {
    x.zip_map(upstream, |v, g| if v > 0.0 { g } else { 0.0 })
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn sigmoid_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

pub fn sigmoid_vjp(x: &DenseMatrix, upstream: &DenseMatrix) -> Result<DenseMatrix> {
    x.zip_map(upstream, |v, g| sigmoid_grad(v) * g)
}

/// Unit step with the boundary in the zero branch.
#[inline]
pub fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Straight-through estimator: unit step forward.
pub fn ste(x: &DenseMatrix) -> DenseMatrix {
    x.map(step)
}

/// Straight-through estimator backward: the identity on `upstream`.
pub fn ste_vjp(upstream: &DenseMatrix) -> DenseMatrix {
    upstream.clone()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ndcore::finite_diff_grad;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows)
    }

    #[test]
    fn matmul_examples() {
        let x = m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        assert_eq!(matmul(&DenseMatrix::identity(2), &x).unwrap(), x);
        let p = matmul(&m(&[&[1.0, 2.0], &[3.0, 4.0]]), &m(&[&[1.0], &[1.0]])).unwrap();
        assert_eq!(p, m(&[&[3.0], &[7.0]]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = DenseMatrix::uniform(3, 4, 1.0, &mut rng);
        assert_eq!(
            matmul(&DenseMatrix::zeros(2, 3), &b).unwrap(),
            DenseMatrix::zeros(2, 4)
        );
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&DenseMatrix::zeros(2, 3), &DenseMatrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
    }

    #[test]
    fn matmul_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = DenseMatrix::uniform(5, 5, 2.0, &mut rng);
        let b = DenseMatrix::uniform(5, 5, 2.0, &mut rng);
        let c = DenseMatrix::uniform(5, 5, 2.0, &mut rng);
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn relu_examples() {
        let x = m(&[&[-1.0, 0.0, 2.0]]);
        assert_eq!(relu(&x), m(&[&[0.0, 0.0, 2.0]]));
        let pos = m(&[&[0.5, 3.0]]);
        assert_eq!(relu(&pos), pos);
        let g = relu_vjp(&x, &m(&[&[5.0, 5.0, 5.0]])).unwrap();
        assert_eq!(g, m(&[&[0.0, 0.0, 5.0]]));
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(40.0) - 1.0).abs() <= 1e-15);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(-800.0).is_finite() && sigmoid(800.0).is_finite());
    }

    #[test]
    fn ste_examples() {
        assert_eq!(step(-0.3), 0.0);
        assert_eq!(step(0.0), 0.0);
        assert_eq!(step(1e-300), 1.0);
        let up = m(&[&[2.5, -1.25]]);
        assert_eq!(ste_vjp(&up), up);
    }

    fn check_grad(x: &DenseMatrix, analytic: &DenseMatrix, f: impl Fn(&DenseMatrix) -> f64) {
        let numeric = finite_diff_grad(f, x, 1e-5);
        for (a, n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            assert!(rel < 1e-4 || (a - n).abs() < 1e-9, "analytic {a} numeric {n}");
        }
    }

    proptest! {
        #[test]
        fn matmul_vjp_matches_finite_differences(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DenseMatrix::uniform(3, 4, 2.0, &mut rng);
            let b = DenseMatrix::uniform(4, 2, 2.0, &mut rng);
            let w = DenseMatrix::uniform(3, 2, 2.0, &mut rng);
            // loss = <w, A·B>
            let (da, db) = matmul_vjp(&a, &b, &w).unwrap();
            check_grad(&a, &da, |a| matmul(a, &b).unwrap().zip_map(&w, |x, y| x * y).unwrap().sum());
            check_grad(&b, &db, |b| matmul(&a, b).unwrap().zip_map(&w, |x, y| x * y).unwrap().sum());
        }

        #[test]
        fn sigmoid_and_relu_vjp_match_finite_differences(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DenseMatrix::uniform(2, 3, 2.0, &mut rng);
            let w = DenseMatrix::uniform(2, 3, 2.0, &mut rng);
            let ds = sigmoid_vjp(&x, &w).unwrap();
            check_grad(&x, &ds, |x| x.map(sigmoid).zip_map(&w, |a, b| a * b).unwrap().sum());
            prop_assume!(x.as_slice().iter().all(|v| v.abs() > 1e-4));
            let dr = relu_vjp(&x, &w).unwrap();
            check_grad(&x, &dr, |x| relu(x).zip_map(&w, |a, b| a * b).unwrap().sum());
        }

        #[test]
        fn ste_forward_is_binary_and_backward_is_identity(xs in proptest::collection::vec(-1e6f64..1e6, 1..20)) {
            let x = DenseMatrix::from_vec(1, xs.len(), xs.clone()).unwrap();
            prop_assert!(ste(&x).as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
            let back = ste_vjp(&x);
            for (a, b) in back.as_slice().iter().zip(&xs) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
