use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::visual::IMAGE_SIZE;

/// Bilinear resize of a `[c, H, W]` image to `[c, 64, 64]`.
pub fn resize_image<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>> {
    resize_bilinear(image, IMAGE_SIZE, IMAGE_SIZE)
}

/// Bilinear interpolation with corner-aligned sampling: output pixel `i`
/// samples source coordinate `i·(H−1)/(out_h−1)`. Same-size input is
/// returned unchanged.
pub fn resize_bilinear<T: Scalar>(image: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let &[c, h, w] = image.shape() else {
        return Err(invalid!("resize expects a [c,H,W] image, got {:?}", image.shape()));
    };
    if c == 0 || h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(invalid!("cannot resize a zero-sized image"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let coords = |src: usize, dst: usize| -> Vec<(usize, usize, f64)> {
        (0..dst)
            .map(|i| {
                let pos = if dst == 1 {
                    0.0
                } else {
                    i as f64 * (src - 1) as f64 / (dst - 1) as f64
                };
                let lo = (pos.floor() as usize).min(src - 1);
                let hi = (lo + 1).min(src - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let (ys, xs) = (coords(h, out_h), coords(w, out_w));
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let p = |y: usize, x: usize| plane[y * w + x].as_f64();
                let top = p(y0, x0) + (p(y0, x1) - p(y0, x0)) * fx;
                let bottom = p(y1, x0) + (p(y1, x1) - p(y1, x0)) * fx;
                let v = top + (bottom - top) * fy;
                out.push(T::of(v.clamp(0.0, 1.0)));
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let img = Tensor::<f32>::from_fn(vec![3, 64, 64], |i| ((i * 37) % 101) as f32 / 100.0);
        assert_eq!(resize_image(&img).unwrap(), img);
    }

    #[test]
    fn constant_image_stays_constant() {
        for (h, w) in [(1, 1), (3, 5), (100, 80)] {
            let img = Tensor::<f64>::full(vec![1, h, w], 0.7);
            let out = resize_image(&img).unwrap();
            assert_eq!(out.shape(), &[1, 64, 64]);
            assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn two_by_two_ramp_upsamples_monotonically() {
        let img = Tensor::<f64>::from_f64(vec![1, 2, 2], &[0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 4, 4).unwrap();
        let rows: Vec<&[f64]> = out.data().chunks(4).collect();
        for r in &rows {
            assert_eq!(*r, rows[0]);
        }
        // sample abscissae 0, 1/3, 2/3, 1
        for (got, want) in rows[0].iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_sized_rejected() {
        let img = Tensor::<f64>::zeros(vec![1, 2, 2]);
        assert!(resize_bilinear(&img, 0, 4).is_err());
        assert!(resize_image(&Tensor::<f64>::zeros(vec![2, 2])).is_err());
    }
}
