//! Dense NHWC tensors and the layer primitives a U-Net is built from.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::Result;

/// A dense 4-D array of `f32` in (batch, height, width, channels) order,
/// channel innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(shape_err!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: [usize; 4], value: f32) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    /// Builds a tensor by evaluating `f(b, y, x, c)` at every index.
    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for b in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    for c in 0..dims[3] {
                        data.push(f(b, y, x, c));
                    }
                }
            }
        }
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, b: usize, y: usize, x: usize, c: usize) -> usize {
        ((b * self.dims[1] + y) * self.dims[2] + x) * self.dims[3] + c
    }

    #[inline]
    pub fn get(&self, b: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.offset(b, y, x, c)]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The `b`-th batch item as a batch-of-one tensor.
    pub fn batch_item(&self, b: usize) -> Result<Self> {
        if b >= self.dims[0] {
            return Err(shape_err!("batch index {} out of range {}", b, self.dims[0]));
        }
        let item = self.dims[1] * self.dims[2] * self.dims[3];
        Ok(Self {
            dims: [1, self.dims[1], self.dims[2], self.dims[3]],
            data: self.data[b * item..(b + 1) * item].to_vec(),
        })
    }

    /// Stacks batch-of-one tensors with identical spatial dims along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| shape_err!("cannot stack zero tensors"))?;
        let [_, h, w, c] = first.dims;
        let mut data = Vec::with_capacity(items.len() * h * w * c);
        let mut batch = 0;
        for t in items {
            if t.dims[1..] != first.dims[1..] {
                return Err(shape_err!("cannot stack {:?} with {:?}", t.dims, first.dims));
            }
            batch += t.dims[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            dims: [batch, h, w, c],
            data,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Borrowed convolution parameters. The kernel is laid out as
/// (kh, kw, c_in, c_out), c_out innermost.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams<'a> {
    pub kernel: &'a [f32],
    pub kernel_dims: [usize; 4],
    pub bias: &'a [f32],
    pub stride: usize,
    pub padding: Padding,
}

impl<'a> ConvParams<'a> {
    /// Stride 1, same padding.
    pub fn new(kernel: &'a [f32], kernel_dims: [usize; 4], bias: &'a [f32]) -> Self {
        Self {
            kernel,
            kernel_dims,
            bias,
            stride: 1,
            padding: Padding::Same,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub(crate) fn validate(&self, c_in: usize) -> Result<()> {
        let [kh, kw, kc, co] = self.kernel_dims;
        if self.kernel.len() != kh * kw * kc * co {
            return Err(shape_err!(
                "kernel has {} values, dims {:?}",
                self.kernel.len(),
                self.kernel_dims
            ));
        }
        if self.bias.len() != co {
            return Err(shape_err!("bias length {} != c_out {}", self.bias.len(), co));
        }
        if kc != c_in {
            return Err(shape_err!("input has {} channels, kernel expects {}", c_in, kc));
        }
        if self.stride == 0 {
            return Err(shape_err!("stride must be positive"));
        }
        if kh == 0 || kw == 0 {
            return Err(shape_err!("empty kernel"));
        }
        if self.padding == Padding::Same && (kh % 2 == 0 || kw % 2 == 0) {
            return Err(shape_err!("same padding needs odd kernel dims, got {}x{}", kh, kw));
        }
        Ok(())
    }
}

/// Output length and leading pad along one spatial axis.
pub(crate) fn conv_geometry(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if input == 0 {
        return Err(shape_err!("zero-sized spatial dimension"));
    }
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if input < kernel {
                return Err(shape_err!("input extent {} smaller than kernel {}", input, kernel));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
    }
}

/// 2-D convolution (cross-correlation, as in every deep learning framework).
///
/// Each output element is accumulated in a fixed order: bias, then taps in
/// (ky, kx, c_in) order.
pub fn conv2d(x: &Tensor, p: &ConvParams<'_>) -> Result<Tensor> {
    p.validate(x.channels())?;
    let [b, h, w, cin] = x.dims;
    let [kh, kw, _, cout] = p.kernel_dims;
    let (oh, pad_top) = conv_geometry(h, kh, p.stride, p.padding)?;
    let (ow, pad_left) = conv_geometry(w, kw, p.stride, p.padding)?;

    let mut out = vec![0.0f32; b * oh * ow * cout];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = &mut out[((bi * oh + oy) * ow + ox) * cout..][..cout];
                o.copy_from_slice(p.bias);
                for ky in 0..kh {
                    let iy = (oy * p.stride + ky) as isize - pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * p.stride + kx) as isize - pad_left as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let xs = &x.data[((bi * h + iy as usize) * w + ix as usize) * cin..][..cin];
                        let taps = &p.kernel[(ky * kw + kx) * cin * cout..][..cin * cout];
                        for (&xv, row) in xs.iter().zip(taps.chunks_exact(cout)) {
                            if xv == 0.0 {
                                continue;
                            }
                            for (acc, &wv) in o.iter_mut().zip(row) {
                                *acc += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new([b, oh, ow, cout], out)
}

/// 2x2 max pooling with stride 2. Odd spatial dims are rejected.
pub fn maxpool2(x: &Tensor) -> Result<Tensor> {
    let [b, h, w, c] = x.dims;
    if h == 0 || w == 0 {
        return Err(shape_err!("zero-sized spatial dimension"));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("maxpool2 needs even spatial dims, got {}x{}", h, w));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * oh * ow * c);
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let p00 = x.offset(bi, 2 * oy, 2 * ox, 0);
                let p01 = x.offset(bi, 2 * oy, 2 * ox + 1, 0);
                let p10 = x.offset(bi, 2 * oy + 1, 2 * ox, 0);
                let p11 = x.offset(bi, 2 * oy + 1, 2 * ox + 1, 0);
                for ch in 0..c {
                    let m = x.data[p00 + ch]
                        .max(x.data[p01 + ch])
                        .max(x.data[p10 + ch])
                        .max(x.data[p11 + ch]);
                    out.push(m);
                }
            }
        }
    }
    Tensor::new([b, oh, ow, c], out)
}

/// 2x2 transposed convolution with stride 2. Kernel dims are (2, 2, c_in, c_out);
/// input pixel (i, j) scatters into output pixels (2i + dy, 2j + dx).
pub fn upconv2(x: &Tensor, p: &ConvParams<'_>) -> Result<Tensor> {
    let [kh, kw, kc, cout] = p.kernel_dims;
    if kh != 2 || kw != 2 {
        return Err(shape_err!("upconv2 needs a 2x2 kernel, got {}x{}", kh, kw));
    }
    if p.kernel.len() != 4 * kc * cout || p.bias.len() != cout {
        return Err(shape_err!("upconv2 parameter sizes do not match {:?}", p.kernel_dims));
    }
    let [b, h, w, cin] = x.dims;
    if kc != cin {
        return Err(shape_err!("input has {} channels, kernel expects {}", cin, kc));
    }
    if h == 0 || w == 0 {
        return Err(shape_err!("zero-sized spatial dimension"));
    }
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; b * oh * ow * cout];
    for bi in 0..b {
        for iy in 0..h {
            for ix in 0..w {
                let xs = &x.data[x.offset(bi, iy, ix, 0)..][..cin];
                for dy in 0..2 {
                    for dx in 0..2 {
                        let o = &mut out[((bi * oh + 2 * iy + dy) * ow + 2 * ix + dx) * cout..][..cout];
                        o.copy_from_slice(p.bias);
                        let taps = &p.kernel[(dy * 2 + dx) * cin * cout..][..cin * cout];
                        for (&xv, row) in xs.iter().zip(taps.chunks_exact(cout)) {
                            if xv == 0.0 {
                                continue;
                            }
                            for (acc, &wv) in o.iter_mut().zip(row) {
                                *acc += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new([b, oh, ow, cout], out)
}

/// Concatenates along channels, `a` first.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims[..3] != b.dims[..3] {
        return Err(shape_err!("cannot concat {:?} with {:?}", a.dims, b.dims));
    }
    let (ca, cb) = (a.channels(), b.channels());
    let pixels = a.dims[0] * a.dims[1] * a.dims[2];
    let mut out = Vec::with_capacity(pixels * (ca + cb));
    for p in 0..pixels {
        out.extend_from_slice(&a.data[p * ca..(p + 1) * ca]);
        out.extend_from_slice(&b.data[p * cb..(p + 1) * cb]);
    }
    Tensor::new([a.dims[0], a.dims[1], a.dims[2], ca + cb], out)
}

/// Per-channel inference-time batch normalization parameters.
#[derive(Debug, Clone, Copy)]
pub struct BatchNorm<'a> {
    pub mean: &'a [f32],
    pub var: &'a [f32],
    pub gamma: &'a [f32],
    pub beta: &'a [f32],
    pub eps: f32,
}

impl BatchNorm<'_> {
    /// Per-channel (scale, shift) such that `y = x * scale + shift`.
    pub fn affine(&self) -> Result<(Vec<f32>, Vec<f32>)> {
        let c = self.mean.len();
        if self.var.len() != c || self.gamma.len() != c || self.beta.len() != c {
            return Err(shape_err!("batch norm parameter lengths disagree"));
        }
        let mut scale = Vec::with_capacity(c);
        let mut shift = Vec::with_capacity(c);
        for ch in 0..c {
            let denom = self.var[ch] + self.eps;
            if !(denom > 0.0) {
                return Err(shape_err!("batch norm variance + eps must be positive (channel {})", ch));
            }
            let s = self.gamma[ch] / libm::sqrtf(denom);
            scale.push(s);
            shift.push(self.beta[ch] - self.mean[ch] * s);
        }
        Ok((scale, shift))
    }
}

/// `y = (x - mean) / sqrt(var + eps) * gamma + beta`, per channel.
pub fn batchnorm_infer(x: &Tensor, bn: &BatchNorm<'_>) -> Result<Tensor> {
    let c = x.channels();
    if bn.mean.len() != c {
        return Err(shape_err!("batch norm has {} channels, input {}", bn.mean.len(), c));
    }
    let denom: Vec<f32> = bn
        .var
        .iter()
        .map(|&v| libm::sqrtf(v + bn.eps))
        .collect();
    bn.affine()?;
    let mut out = x.data.clone();
    for px in out.chunks_exact_mut(c) {
        for (ch, v) in px.iter_mut().enumerate() {
            *v = (*v - bn.mean[ch]) / denom[ch] * bn.gamma[ch] + bn.beta[ch];
        }
    }
    Tensor::new(x.dims, out)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

const SIGMOID_FLOOR: f32 = 1.0 / 16_777_216.0;

/// Logistic function, clamped to `[2^-24, 1 - 2^-24]` so outputs stay
/// strictly inside (0, 1).
#[inline]
pub fn sigmoid_scalar(v: f32) -> f32 {
    let s = 1.0 / (1.0 + libm::expf(-v));
    s.clamp(SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Sliding-window oracle: explicit zero-padded copy of the input, f64
    /// accumulation, loops in (c_out, ky, kx, c_in) order.
    fn conv_oracle(x: &Tensor, k: &[f32], kd: [usize; 4], bias: &[f32], stride: usize, pad: Padding) -> Tensor {
        let [b, h, w, cin] = x.dims();
        let [kh, kw, _, cout] = kd;
        let (oh, ow, pt, pl) = match pad {
            Padding::Valid => ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0),
            Padding::Same => {
                let oh = (h + stride - 1) / stride;
                let ow = (w + stride - 1) / stride;
                let ph = ((oh - 1) * stride + kh).saturating_sub(h);
                let pw = ((ow - 1) * stride + kw).saturating_sub(w);
                (oh, ow, ph / 2, pw / 2)
            }
        };
        let ph = h + 2 * kh;
        let pw = w + 2 * kw;
        let mut padded = vec![0.0f64; b * ph * pw * cin];
        for bi in 0..b {
            for y in 0..h {
                for xx in 0..w {
                    for c in 0..cin {
                        padded[((bi * ph + y + pt) * pw + xx + pl) * cin + c] = x.get(bi, y, xx, c) as f64;
                    }
                }
            }
        }
        Tensor::from_fn([b, oh, ow, cout], |bi, oy, ox, co| {
            let mut acc = bias[co] as f64;
            for ky in 0..kh {
                for kx in 0..kw {
                    for ci in 0..cin {
                        let v = padded[((bi * ph + oy * stride + ky) * pw + ox * stride + kx) * cin + ci];
                        acc += v * k[((ky * kw + kx) * cin + ci) * cout + co] as f64;
                    }
                }
            }
            acc as f32
        })
    }

    /// Zero-insertion upsampling followed by a correlation with the flipped
    /// kernel over a one-pixel top/left zero border.
    fn upconv_oracle(x: &Tensor, k: &[f32], cout: usize, bias: &[f32]) -> Tensor {
        let [b, h, w, cin] = x.dims();
        let (zh, zw) = (2 * h + 1, 2 * w + 1);
        let mut z = vec![0.0f64; b * zh * zw * cin];
        for bi in 0..b {
            for y in 0..h {
                for xx in 0..w {
                    for c in 0..cin {
                        z[((bi * zh + 2 * y + 1) * zw + 2 * xx + 1) * cin + c] = x.get(bi, y, xx, c) as f64;
                    }
                }
            }
        }
        Tensor::from_fn([b, 2 * h, 2 * w, cout], |bi, oy, ox, co| {
            let mut acc = bias[co] as f64;
            for a in 0..2 {
                for bb in 0..2 {
                    let (fy, fx) = (1 - a, 1 - bb);
                    for ci in 0..cin {
                        let v = z[((bi * zh + oy + a) * zw + ox + bb) * cin + ci];
                        acc += v * k[((fy * 2 + fx) * cin + ci) * cout + co] as f64;
                    }
                }
            }
            acc as f32
        })
    }

    fn assert_close(a: &Tensor, b: &Tensor, tol: f32) {
        assert_eq!(a.dims(), b.dims());
        for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
            assert!((x - y).abs() <= tol, "element {i}: {x} vs {y}");
        }
    }

    #[test]
    fn conv_single_pixel_hits_center_tap() {
        let x = Tensor::filled([1, 1, 1, 1], 2.0);
        let k = [1.0f32; 9];
        let y = conv2d(&x, &ConvParams::new(&k, [3, 3, 1, 1], &[0.0])).unwrap();
        assert_eq!(y.dims(), [1, 1, 1, 1]);
        assert_eq!(y.data(), &[2.0]);
    }

    #[test]
    fn conv_all_ones_2x2() {
        let x = Tensor::filled([1, 2, 2, 1], 1.0);
        let k = [1.0f32; 9];
        let y = conv2d(&x, &ConvParams::new(&k, [3, 3, 1, 1], &[0.0])).unwrap();
        let expect = conv_oracle(&x, &k, [3, 3, 1, 1], &[0.0], 1, Padding::Same);
        assert_eq!(expect.data(), &[4.0; 4]);
        assert_eq!(y.data(), expect.data());
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::from_fn([2, 5, 3, 1], |b, y, x, _| (b * 100 + y * 7 + x) as f32 - 11.5);
        let mut k = [0.0f32; 9];
        k[4] = 1.0;
        let y = conv2d(&x, &ConvParams::new(&k, [3, 3, 1, 1], &[0.0])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::zeros([1, 4, 4, 2]);
        let k = [0.0f32; 9];
        assert!(matches!(
            conv2d(&x, &ConvParams::new(&k, [3, 3, 1, 1], &[0.0])),
            Err(crate::Error::Shape(_))
        ));
        let empty = Tensor::zeros([1, 0, 4, 1]);
        assert!(conv2d(&empty, &ConvParams::new(&k, [3, 3, 1, 1], &[0.0])).is_err());
        let even = [0.0f32; 4];
        assert!(conv2d(&Tensor::zeros([1, 4, 4, 1]), &ConvParams::new(&even, [2, 2, 1, 1], &[0.0])).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::new([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2(&x).unwrap().data(), &[4.0]);

        let ramp = Tensor::from_fn([1, 4, 4, 1], |_, y, x, _| (y * 4 + x) as f32);
        // window-max oracle
        let expect: Vec<f32> = (0..2)
            .flat_map(|oy| {
                (0..2).map(move |ox| {
                    let mut m = f32::MIN;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(((2 * oy + dy) * 4 + 2 * ox + dx) as f32);
                        }
                    }
                    m
                })
            })
            .collect();
        assert_eq!(expect, vec![5.0, 7.0, 13.0, 15.0]);
        assert_eq!(maxpool2(&ramp).unwrap().data(), &expect[..]);

        assert!(maxpool2(&Tensor::zeros([1, 3, 4, 1])).is_err());
    }

    #[test]
    fn upconv_examples() {
        let x = Tensor::filled([1, 1, 1, 1], 5.0);
        let y = upconv2(&x, &ConvParams::new(&[1.0; 4], [2, 2, 1, 1], &[0.0])).unwrap();
        assert_eq!(y.dims(), [1, 2, 2, 1]);
        assert_eq!(y.data(), &[5.0; 4]);

        let zero = upconv2(&Tensor::zeros([1, 3, 2, 2]), &ConvParams::new(&[0.7; 8], [2, 2, 2, 1], &[0.0])).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));

        // [a; b] scattered by [[w00, w01], [w10, w11]]
        let (a, b) = (2.0f32, -3.0f32);
        let k = [0.5f32, 1.5, -1.0, 4.0];
        let x = Tensor::new([1, 2, 1, 1], vec![a, b]).unwrap();
        let y = upconv2(&x, &ConvParams::new(&k, [2, 2, 1, 1], &[0.0])).unwrap();
        assert_eq!(y.dims(), [1, 4, 2, 1]);
        let expect = [a * k[0], a * k[1], a * k[2], a * k[3], b * k[0], b * k[1], b * k[2], b * k[3]];
        assert_eq!(y.data(), &expect);
        assert_close(&y, &upconv_oracle(&x, &k, 1, &[0.0]), 1e-6);

        assert!(upconv2(&x, &ConvParams::new(&[0.0; 9], [3, 3, 1, 1], &[0.0])).is_err());
    }

    #[test]
    fn concat_examples() {
        let a = Tensor::from_fn([1, 2, 2, 3], |_, y, x, c| (y * 100 + x * 10 + c) as f32);
        let b = Tensor::from_fn([1, 2, 2, 5], |_, y, x, c| -((y * 100 + x * 10 + c) as f32));
        let ab = concat_channels(&a, &b).unwrap();
        assert_eq!(ab.dims(), [1, 2, 2, 8]);
        for y in 0..2 {
            for x in 0..2 {
                for k in 0..8 {
                    let expect = if k < 3 { a.get(0, y, x, k) } else { b.get(0, y, x, k - 3) };
                    assert_eq!(ab.get(0, y, x, k), expect);
                }
            }
        }
        assert_eq!(concat_channels(&a, &Tensor::zeros([1, 2, 2, 0])).unwrap(), a);
        assert!(concat_channels(&a, &Tensor::zeros([1, 2, 3, 1])).is_err());
    }

    #[test]
    fn batchnorm_examples() {
        let x = Tensor::from_fn([1, 2, 2, 1], |_, y, x, _| (y * 2 + x) as f32 - 1.3);
        let id = BatchNorm { mean: &[0.0], var: &[1.0], gamma: &[1.0], beta: &[0.0], eps: 0.0 };
        assert_eq!(batchnorm_infer(&x, &id).unwrap(), x);

        let flat = BatchNorm { mean: &[0.3], var: &[2.0], gamma: &[0.0], beta: &[0.25], eps: 1e-3 };
        assert!(batchnorm_infer(&x, &flat).unwrap().data().iter().all(|&v| v == 0.25));

        let one = Tensor::filled([1, 1, 1, 1], 3.0);
        let bn = BatchNorm { mean: &[1.0], var: &[3.0], gamma: &[2.0], beta: &[1.0], eps: 1.0 };
        assert_eq!(batchnorm_infer(&one, &bn).unwrap().data(), &[3.0]);

        let short = BatchNorm { mean: &[0.0, 0.0], var: &[1.0], gamma: &[1.0], beta: &[0.0], eps: 1e-3 };
        assert!(batchnorm_infer(&Tensor::zeros([1, 1, 1, 2]), &short).is_err());
    }

    #[test]
    fn activation_examples() {
        let x = Tensor::new([1, 1, 3, 1], vec![-1.0, 2.0, 0.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0, 0.0]);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        // 1 / (1 + e^-2) evaluated in f64
        assert!((sigmoid_scalar(2.0) as f64 - 0.880_797_077_977_882_3).abs() < 1e-6);
        for v in [-30.0f32, -3.3, -0.1, 0.7, 5.0, 30.0] {
            assert!((sigmoid_scalar(v) - (1.0 - sigmoid_scalar(-v))).abs() < 1e-6);
            assert!(sigmoid_scalar(v) > 0.0 && sigmoid_scalar(v) < 1.0);
        }
    }

    fn conv_case() -> impl Strategy<Value = (Tensor, Vec<f32>, [usize; 4], Vec<f32>, usize, Padding)> {
        (1usize..=2, 1usize..=8, 1usize..=8, 1usize..=3, 1usize..=3, 0usize..2, 1usize..=2, any::<bool>())
            .prop_flat_map(|(b, h, w, cin, cout, kidx, stride, same)| {
                let k = [1usize, 3][kidx];
                let pad = if same || h < k || w < k { Padding::Same } else { Padding::Valid };
                (
                    proptest::collection::vec(-2.0f32..2.0, b * h * w * cin),
                    proptest::collection::vec(-1.0f32..1.0, k * k * cin * cout),
                    proptest::collection::vec(-1.0f32..1.0, cout),
                    Just(([b, h, w, cin], [k, k, cin, cout], stride, pad)),
                )
            })
            .prop_map(|(xd, kd, bd, (dims, kdims, stride, pad))| {
                (Tensor::new(dims, xd).unwrap(), kd, kdims, bd, stride, pad)
            })
    }

    proptest! {
        #[test]
        fn conv_matches_sliding_window_oracle((x, k, kd, bias, stride, pad) in conv_case()) {
            let p = ConvParams::new(&k, kd, &bias).with_stride(stride).with_padding(pad);
            let y = conv2d(&x, &p).unwrap();
            let expect = conv_oracle(&x, &k, kd, &bias, stride, pad);
            assert_close(&y, &expect, 1e-5);
        }

        #[test]
        fn upconv_matches_zero_insertion_oracle(
            (x, k, bias, cout) in (1usize..=6, 1usize..=6, 1usize..=3, 1usize..=3).prop_flat_map(|(h, w, cin, cout)| (
                proptest::collection::vec(-2.0f32..2.0, h * w * cin).prop_map(move |d| Tensor::new([1, h, w, cin], d).unwrap()),
                proptest::collection::vec(-1.0f32..1.0, 4 * cin * cout),
                proptest::collection::vec(-1.0f32..1.0, cout),
                Just(cout),
            ))
        ) {
            let cin = x.channels();
            let y = upconv2(&x, &ConvParams::new(&k, [2, 2, cin, cout], &bias)).unwrap();
            assert_close(&y, &upconv_oracle(&x, &k, cout, &bias), 1e-5);
        }

        #[test]
        fn maxpool_of_constant_is_constant(v in -10.0f32..10.0, h in 1usize..5, w in 1usize..5, c in 1usize..4) {
            let x = Tensor::filled([1, 2 * h, 2 * w, c], v);
            let y = maxpool2(&x).unwrap();
            prop_assert_eq!(y.dims(), [1, h, w, c]);
            prop_assert!(y.data().iter().all(|&e| e == v));
        }

        #[test]
        fn primitives_are_pure((x, k, kd, bias, stride, pad) in conv_case()) {
            let p = ConvParams::new(&k, kd, &bias).with_stride(stride).with_padding(pad);
            let a = conv2d(&x, &p).unwrap();
            let b = conv2d(&x, &p).unwrap();
            prop_assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(sigmoid(&x), sigmoid(&x));
            prop_assert!(sigmoid(&a).is_finite());
        }
    }
}
