//! Bilinear resampling with half-pixel-centered sampling.

use crate::error::{Error, Result};
use crate::tensor::TensorData;

pub fn resize_bilinear(src: &TensorData<f32>, out_h: usize, out_w: usize) -> Result<TensorData<f32>> {
    if src.shape().len() != 3 {
        return Err(Error::shape(
            "resize",
            format!("expected C×H×W, got {:?}", src.shape()),
        ));
    }
    let (c, h, w) = (src.shape()[0], src.shape()[1], src.shape()[2]);
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize", "zero output size".to_string()));
    }
    if out_h == h && out_w == w {
        return Ok(src.clone());
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = vec![0.0f32; c * out_h * out_w];
    for ci in 0..c {
        let plane = &src.data()[ci * h * w..(ci + 1) * h * w];
        for oy in 0..out_h {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = (fy - y0 as f64) as f32;
            for ox in 0..out_w {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = (fx - x0 as f64) as f32;
                let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                let bottom = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                out[ci * out_h * out_w + oy * out_w + ox] = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    TensorData::new(vec![c, out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_is_passthrough() {
        let t = TensorData::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = resize_bilinear(&t, 2, 2).unwrap();
        assert_eq!(t, r);
    }

    #[test]
    fn constant_stays_constant() {
        let t = TensorData::full(vec![2, 600, 600], 0.25f32);
        let r = resize_bilinear(&t, 256, 256).unwrap();
        assert_eq!(r.shape(), &[2, 256, 256]);
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn preserves_range_by_convexity() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let t = TensorData::<f32>::randn(vec![1, 40, 40], &mut rng).map(|v| v.tanh());
        let r = resize_bilinear(&t, 17, 23).unwrap();
        assert!(r.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }
}
