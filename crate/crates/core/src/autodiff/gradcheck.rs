//! Central finite differences, used as an independent oracle for gradients.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Central-difference estimate of the gradient of `f` at `point`:
/// `(f(x + h·e_i) - f(x - h·e_i)) / 2h` for every coordinate `i`.
pub fn finite_diff_grad<T: Scalar>(mut f: impl FnMut(&Tensor<T>) -> T, point: &Tensor<T>, h: T) -> Tensor<T> {
    let mut probe = point.clone();
    let two_h = h + h;
    let grads = (0..point.numel())
        .map(|i| {
            let x = point.data()[i];
            probe.data_mut()[i] = x + h;
            let up = f(&probe);
            probe.data_mut()[i] = x - h;
            let down = f(&probe);
            probe.data_mut()[i] = x;
            (up - down) / two_h
        })
        .collect();
    Tensor::new(point.shape().to_vec(), grads).expect("same shape as point")
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn relative_error<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}
