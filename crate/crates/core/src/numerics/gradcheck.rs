use super::tensor::Tensor;

/// Central-difference gradient of `loss` with respect to every coordinate of
/// every tensor in `params`: `(f(w + eps) - f(w - eps)) / (2 eps)`.
///
/// Used as the reference in gradient tests; `loss` must be deterministic.
pub fn finite_difference_gradient<F>(mut loss: F, params: &[Tensor], epsilon: f64) -> Vec<Tensor>
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut work = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Tensor::zeros(params[p].shape());
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + epsilon;
            let plus = loss(&work);
            work[p].data_mut()[i] = orig - epsilon;
            let minus = loss(&work);
            work[p].data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * epsilon);
        }
        grads.push(g);
    }
    grads
}
