//! Bilinear resampling with corner alignment, shared by attention-map
//! resizing and image loading.

use crate::tensor::Scalar;

/// Resizes one H×W plane to th×tw. Corners map to corners; a target axis of
/// length 1 samples the source-axis midpoint. Interpolated values stay
/// inside the source value range.
pub fn bilinear_plane<T: Scalar>(
    src: &[T],
    sh: usize,
    sw: usize,
    th: usize,
    tw: usize,
) -> Vec<T> {
    assert_eq!(src.len(), sh * sw, "bilinear source size");
    assert!(sh > 0 && sw > 0 && th > 0 && tw > 0, "bilinear dims positive");
    let pos = |t: usize, tlen: usize, slen: usize| -> f64 {
        if tlen == 1 {
            (slen as f64 - 1.0) / 2.0
        } else {
            t as f64 * (slen as f64 - 1.0) / (tlen as f64 - 1.0)
        }
    };
    let mut out = Vec::with_capacity(th * tw);
    for ty in 0..th {
        let fy = pos(ty, th, sh);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = T::of(fy - y0 as f64);
        for tx in 0..tw {
            let fx = pos(tx, tw, sw);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = T::of(fx - x0 as f64);
            let one = T::one();
            let v00 = src[y0 * sw + x0];
            let v01 = src[y0 * sw + x1];
            let v10 = src[y1 * sw + x0];
            let v11 = src[y1 * sw + x1];
            let top = v00 * (one - wx) + v01 * wx;
            let bot = v10 * (one - wx) + v11 * wx;
            out.push(top * (one - wy) + bot * wy);
        }
    }
    out
}
