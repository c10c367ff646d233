//! Central finite differences for gradient verification.
//!
//! Only evaluates the supplied forward function; never touches the tape's
//! backward pass, so it stays an independent oracle for it.

use crate::numkit::mat::Mat;

/// Central-difference gradients of `f` with respect to each input matrix.
pub fn central_differences(
    f: impl Fn(&[Mat]) -> f64,
    inputs: &[Mat],
    eps: f64,
) -> Vec<Mat> {
    let mut grads = Vec::with_capacity(inputs.len());
    for (pi, p) in inputs.iter().enumerate() {
        let mut g = Mat::zeros(p.rows(), p.cols());
        for i in 0..p.rows() {
            for j in 0..p.cols() {
                let mut plus = inputs.to_vec();
                plus[pi][(i, j)] += eps;
                let mut minus = inputs.to_vec();
                minus[pi][(i, j)] -= eps;
                g[(i, j)] = (f(&plus) - f(&minus)) / (2.0 * eps);
            }
        }
        grads.push(g);
    }
    grads
}

/// Relative Frobenius disagreement, guarding against tiny denominators.
pub fn relative_error(analytic: &Mat, numeric: &Mat) -> f64 {
    let denom = numeric.frobenius_norm().max(analytic.frobenius_norm()).max(1e-8);
    analytic.sub(numeric).frobenius_norm() / denom
}
