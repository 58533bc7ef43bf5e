use super::matrix::DenseMatrix;

/// Central-difference gradient of `loss` at `param`, one entry at a time.
pub fn finite_diff_grad(
    mut loss: impl FnMut(&DenseMatrix) -> f64,
    param: &DenseMatrix,
    epsilon: f64,
) -> DenseMatrix {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut probe = param.clone();
    let mut grad = DenseMatrix::zeros(param.rows(), param.cols());
    for i in 0..param.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + epsilon;
        let up = loss(&probe);
        probe.as_mut_slice()[i] = orig - epsilon;
        let down = loss(&probe);
        probe.as_mut_slice()[i] = orig;
        grad.as_mut_slice()[i] = (up - down) / (2.0 * epsilon);
    }
    grad
}
