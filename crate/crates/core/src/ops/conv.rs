//! 2-D convolution (cross-correlation, no kernel flip) over C×H×W tensors.

use crate::error::{Error, Result};
use crate::ops::{gemm_acc, gemm_atb_acc, Layer, Param};
use crate::rng::{fill_he, Prng};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub weight: Param<T>,
    /// `None` means the bias is structurally fixed at zero (fusion
    /// projections) and contributes no trainable parameter.
    pub bias: Option<Param<T>>,
    stride: usize,
    padding: usize,
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-initialized kernels, zero bias.
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Prng,
    ) -> Self {
        let mut weight = Tensor::zeros(&[out_channels, in_channels, kernel, kernel]);
        fill_he(&mut weight, in_channels * kernel * kernel, rng);
        let bias = Tensor::zeros(&[out_channels]);
        Conv2d {
            weight: Param::new(format!("{name}.weight"), weight),
            bias: Some(Param::new(format!("{name}.bias"), bias)),
            stride,
            padding,
            cached_input: None,
        }
    }

    /// A 1×1 projection with the bias fixed at zero, used by fusion blocks.
    pub fn new_projection(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut Prng,
    ) -> Self {
        let mut conv = Conv2d::new(name, in_channels, out_channels, 1, 1, 0, rng);
        conv.bias = None;
        conv
    }

    /// Explicit weights, mainly for tests and oracles.
    pub fn from_parts(
        weight: Tensor<T>,
        bias: Option<Tensor<T>>,
        stride: usize,
        padding: usize,
    ) -> Self {
        Conv2d {
            weight: Param::new("conv.weight", weight),
            bias: bias.map(|b| Param::new("conv.bias", b)),
            stride,
            padding,
            cached_input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    /// `(H + 2·padding − k) / stride + 1` with the division required exact.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = (self.weight.value.shape()[2], self.weight.value.shape()[3]);
        let span_h = h + 2 * self.padding;
        let span_w = w + 2 * self.padding;
        if kh > span_h || kw > span_w {
            return Err(Error::ShapeMismatch(format!(
                "kernel {kh}x{kw} exceeds padded input {span_h}x{span_w}"
            )));
        }
        if (span_h - kh) % self.stride != 0 || (span_w - kw) % self.stride != 0 {
            return Err(Error::ShapeMismatch(format!(
                "non-integral output size for input {h}x{w}, kernel {kh}x{kw}, \
                 stride {}, padding {}",
                self.stride, self.padding
            )));
        }
        Ok((
            (span_h - kh) / self.stride + 1,
            (span_w - kw) / self.stride + 1,
        ))
    }

    fn validate(&self, input: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize)> {
        if input.rank() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "conv2d expects C×H×W input, got rank {}",
                input.rank()
            )));
        }
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        if c != self.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "conv2d channel mismatch: input has {c}, kernels expect {}",
                self.in_channels()
            )));
        }
        let (oh, ow) = self.output_size(h, w)?;
        Ok((c, h, w, oh, ow))
    }

    /// Fills `col` (C·kh·kw × ow) with the receptive fields of output row `oy`.
    fn im2col_row(&self, input: &Tensor<T>, oy: usize, ow: usize, col: &mut [T]) {
        let (c_in, kh, kw) = (
            self.weight.value.shape()[1],
            self.weight.value.shape()[2],
            self.weight.value.shape()[3],
        );
        let (h, w) = (input.shape()[1], input.shape()[2]);
        let data = input.data();
        let pad = self.padding as isize;
        for ci in 0..c_in {
            for dy in 0..kh {
                let iy = (oy * self.stride + dy) as isize - pad;
                for dx in 0..kw {
                    let row = &mut col[((ci * kh + dy) * kw + dx) * ow..][..ow];
                    if iy < 0 || iy >= h as isize {
                        row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for (ox, slot) in row.iter_mut().enumerate() {
                        let ix = (ox * self.stride + dx) as isize - pad;
                        *slot = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            data[base + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (_c, _h, _w, oh, ow) = self.validate(input)?;
        let o = self.out_channels();
        let klen = self.in_channels() * self.kernel() * self.kernel();
        let mut out = Tensor::zeros(&[o, oh, ow]);
        let mut col = vec![T::zero(); klen * ow];
        // row-chunked im2col keeps the scratch buffer small at 224×224
        for oy in 0..oh {
            self.im2col_row(input, oy, ow, &mut col);
            let mut row_out = vec![T::zero(); o * ow];
            gemm_acc(o, klen, ow, self.weight.value.data(), &col, &mut row_out);
            for oc in 0..o {
                let bias = self.bias.as_ref().map_or(T::zero(), |b| b.value.data()[oc]);
                let dst = &mut out.data_mut()[(oc * oh + oy) * ow..][..ow];
                let src = &row_out[oc * ow..(oc + 1) * ow];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + bias;
                }
            }
        }
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cached_input
            .take()
            .ok_or_else(|| Error::InvalidInput("conv2d backward before forward".into()))?;
        let (c, h, w, oh, ow) = self.validate(&input)?;
        let o = self.out_channels();
        if upstream.shape() != [o, oh, ow] {
            return Err(Error::ShapeMismatch(format!(
                "conv2d upstream shape {:?}, expected {:?}",
                upstream.shape(),
                [o, oh, ow]
            )));
        }
        let (kh, kw) = (self.kernel(), self.kernel());
        let klen = c * kh * kw;
        let mut dinput = Tensor::zeros(&[c, h, w]);
        let mut col = vec![T::zero(); klen * ow];
        let mut dcol = vec![T::zero(); klen * ow];
        let mut up_row = vec![T::zero(); o * ow];
        let pad = self.padding as isize;

        for oy in 0..oh {
            for oc in 0..o {
                up_row[oc * ow..(oc + 1) * ow]
                    .copy_from_slice(&upstream.data()[(oc * oh + oy) * ow..][..ow]);
            }
            self.im2col_row(&input, oy, ow, &mut col);

            // dW += up_row @ colᵀ, accumulated as rank-1 style updates per
            // kernel slot to stay contiguous
            for oc in 0..o {
                let urow = &up_row[oc * ow..(oc + 1) * ow];
                let wgrad = &mut self.weight.grad.data_mut()[oc * klen..(oc + 1) * klen];
                for (p, slot) in wgrad.iter_mut().enumerate() {
                    let crow = &col[p * ow..(p + 1) * ow];
                    let mut acc = T::zero();
                    for (&u, &cv) in urow.iter().zip(crow) {
                        acc += u * cv;
                    }
                    *slot += acc;
                }
            }
            if let Some(b) = self.bias.as_mut() {
                for oc in 0..o {
                    let urow = &up_row[oc * ow..(oc + 1) * ow];
                    let mut acc = T::zero();
                    for &u in urow {
                        acc += u;
                    }
                    b.grad.data_mut()[oc] += acc;
                }
            }

            // dcol = Wᵀ @ up_row, then scatter back through the im2col map
            dcol.iter_mut().for_each(|v| *v = T::zero());
            gemm_atb_acc(klen, o, ow, self.weight.value.data(), &up_row, &mut dcol);
            let din = dinput.data_mut();
            for ci in 0..c {
                for dy in 0..kh {
                    let iy = (oy * self.stride + dy) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for dx in 0..kw {
                        let drow = &dcol[((ci * kh + dy) * kw + dx) * ow..][..ow];
                        for (ox, &dv) in drow.iter().enumerate() {
                            let ix = (ox * self.stride + dx) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                din[base + ix as usize] += dv;
                            }
                        }
                    }
                }
            }
        }
        Ok(dinput)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut ps = vec![&mut self.weight];
        if let Some(b) = self.bias.as_mut() {
            ps.push(b);
        }
        ps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn conv_1x1_identity() -> Conv2d<f64> {
        let weight = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        Conv2d::from_parts(weight, Some(Tensor::zeros(&[1])), 1, 0)
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut conv = conv_1x1_identity();
        let input = Tensor::from_vec(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = conv.forward(&input).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn all_ones_3x3_gives_window_sum() {
        let weight = Tensor::filled(&[1, 1, 3, 3], 1.0f64);
        let mut conv = Conv2d::from_parts(weight, Some(Tensor::zeros(&[1])), 1, 0);
        let input = Tensor::filled(&[1, 3, 3], 1.0);
        let out = conv.forward(&input).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data()[0], 9.0);
    }

    #[test]
    fn paper_primary_caps_shape() {
        let mut rng = rng::seeded(0);
        let mut conv: Conv2d<f32> = Conv2d::new("p", 256, 256, 2, 1, 0, &mut rng);
        let input = Tensor::zeros(&[256, 7, 7]);
        let out = conv.forward(&input).unwrap();
        assert_eq!(out.shape(), &[256, 6, 6]);
    }

    #[test]
    fn rejects_channel_mismatch_and_non_integral_output() {
        let mut rng = rng::seeded(0);
        let mut conv: Conv2d<f32> = Conv2d::new("c", 3, 4, 2, 2, 0, &mut rng);
        assert!(conv.forward(&Tensor::zeros(&[2, 8, 8])).is_err());
        // (5 - 2) % 2 != 0 -> non-integral
        assert!(conv.forward(&Tensor::zeros(&[3, 5, 5])).is_err());
    }

    #[test]
    fn output_shape_formula_exhaustive_small() {
        let mut rng = rng::seeded(1);
        for k in 1..=5usize {
            for stride in 1..=3usize {
                for pad in 0..=2usize {
                    for h in 1..=16usize {
                        for w in 1..=16usize {
                            let conv: Conv2d<f32> = Conv2d::new("c", 1, 1, k, stride, pad, &mut rng);
                            let span_h = h + 2 * pad;
                            let span_w = w + 2 * pad;
                            let valid = k <= span_h
                                && k <= span_w
                                && (span_h - k) % stride == 0
                                && (span_w - k) % stride == 0;
                            let got = conv.output_size(h, w);
                            if valid {
                                let (oh, ow) = got.unwrap();
                                assert_eq!(oh, (span_h - k) / stride + 1);
                                assert_eq!(ow, (span_w - k) / stride + 1);
                            } else {
                                assert!(got.is_err(), "h={h} w={w} k={k} s={stride} p={pad}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn padding_matches_naive_cross_correlation() {
        let mut rng = rng::seeded(2);
        let mut conv: Conv2d<f64> = Conv2d::new("c", 2, 3, 3, 1, 1, &mut rng);
        let mut input = Tensor::zeros(&[2, 4, 5]);
        rng::fill_gaussian(&mut input, 1.0, &mut rng);
        let out = conv.forward(&input).unwrap();
        assert_eq!(out.shape(), &[3, 4, 5]);

        // naive loop oracle
        for oc in 0..3usize {
            for oy in 0..4usize {
                for ox in 0..5usize {
                    let mut acc = conv.bias.as_ref().unwrap().value.data()[oc];
                    for ci in 0..2usize {
                        for dy in 0..3usize {
                            for dx in 0..3usize {
                                let iy = oy as isize + dy as isize - 1;
                                let ix = ox as isize + dx as isize - 1;
                                if iy >= 0 && iy < 4 && ix >= 0 && ix < 5 {
                                    acc += conv.weight.value.at(&[oc, ci, dy, dx])
                                        * input.at(&[ci, iy as usize, ix as usize]);
                                }
                            }
                        }
                    }
                    let got = out.at(&[oc, oy, ox]);
                    assert!((got - acc).abs() < 1e-12, "({oc},{oy},{ox}): {got} vs {acc}");
                }
            }
        }
    }
}
