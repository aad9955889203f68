//! Int8 compute kernels with int32 accumulation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{QuantParams, QuantTensor, MAX_FAN_IN};
use crate::error::shape_err;
use crate::tensor::{conv_geometry, sigmoid_scalar, Padding};
use crate::{round_half_away, Error, Result};

/// Borrowed int8 convolution parameters. Kernel layout (kh, kw, c_in, c_out),
/// symmetric (zero point 0); bias is int32 at scale `s_x * kernel_scale`.
#[derive(Debug, Clone, Copy)]
pub struct QConvParams<'a> {
    pub kernel: &'a [i8],
    pub kernel_dims: [usize; 4],
    pub kernel_scale: f64,
    pub bias: &'a [i32],
    pub stride: usize,
    pub padding: Padding,
}

impl<'a> QConvParams<'a> {
    pub fn new(kernel: &'a [i8], kernel_dims: [usize; 4], kernel_scale: f64, bias: &'a [i32]) -> Self {
        Self {
            kernel,
            kernel_dims,
            kernel_scale,
            bias,
            stride: 1,
            padding: Padding::Same,
        }
    }

    fn validate(&self, c_in: usize) -> Result<()> {
        let [kh, kw, kc, co] = self.kernel_dims;
        if self.kernel.len() != kh * kw * kc * co || self.bias.len() != co {
            return Err(shape_err!("int8 parameter sizes do not match {:?}", self.kernel_dims));
        }
        if kc != c_in {
            return Err(shape_err!("input has {} channels, kernel expects {}", c_in, kc));
        }
        if self.stride == 0 || kh == 0 || kw == 0 {
            return Err(shape_err!("degenerate kernel or stride"));
        }
        if self.padding == Padding::Same && (kh % 2 == 0 || kw % 2 == 0) {
            return Err(shape_err!("same padding needs odd kernel dims"));
        }
        let taps = kh * kw * kc;
        if taps > MAX_FAN_IN {
            return Err(Error::FanIn {
                layer: format!("{}x{}x{}", kh, kw, kc),
                taps,
                limit: MAX_FAN_IN,
            });
        }
        Ok(())
    }
}

/// Convolution accumulators: `sum((x - x_zp) * w) + bias` per output element.
pub fn qconv2d_acc(x: &QuantTensor, p: &QConvParams<'_>) -> Result<(Vec<i32>, [usize; 4])> {
    p.validate(x.channels())?;
    let [b, h, w, cin] = x.dims;
    let [kh, kw, _, cout] = p.kernel_dims;
    let (oh, pad_top) = conv_geometry(h, kh, p.stride, p.padding)?;
    let (ow, pad_left) = conv_geometry(w, kw, p.stride, p.padding)?;
    let zp = x.qp.zero_point as i16;
    // x - zp lies in [-255, 255] and |w| <= 127, so products fit in i16.
    let centered: Vec<i16> = x.data.iter().map(|&v| v as i16 - zp).collect();
    let kernel: Vec<i16> = p.kernel.iter().map(|&v| v as i16).collect();

    let mut acc = vec![0i32; b * oh * ow * cout];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = &mut acc[((bi * oh + oy) * ow + ox) * cout..][..cout];
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
                        let xs = &centered[((bi * h + iy as usize) * w + ix as usize) * cin..][..cin];
                        let taps = &kernel[(ky * kw + kx) * cin * cout..][..cin * cout];
                        for (&xv, row) in xs.iter().zip(taps.chunks_exact(cout)) {
                            if xv == 0 {
                                continue;
                            }
                            for (a, &wv) in o.iter_mut().zip(row) {
                                *a += (xv * wv) as i32;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((acc, [b, oh, ow, cout]))
}

/// Maps int32 accumulators at `acc_scale` onto `out_qp`:
/// `clamp(round(acc * acc_scale / out_scale) + out_zp, -128, 127)`.
pub fn requantize(acc: &[i32], dims: [usize; 4], acc_scale: f64, out_qp: QuantParams) -> Result<QuantTensor> {
    let m = acc_scale / out_qp.scale;
    let zp = out_qp.zero_point as f64;
    let data = acc
        .iter()
        .map(|&a| (round_half_away(a as f64 * m) + zp).clamp(-128.0, 127.0) as i8)
        .collect();
    QuantTensor::new(dims, data, out_qp)
}

pub fn qconv2d(x: &QuantTensor, p: &QConvParams<'_>, out_qp: QuantParams) -> Result<QuantTensor> {
    let (acc, dims) = qconv2d_acc(x, p)?;
    requantize(&acc, dims, x.qp.scale * p.kernel_scale, out_qp)
}

/// Int8 2x2 stride-2 transposed convolution.
pub fn qupconv2(x: &QuantTensor, p: &QConvParams<'_>, out_qp: QuantParams) -> Result<QuantTensor> {
    let [kh, kw, kc, cout] = p.kernel_dims;
    if kh != 2 || kw != 2 {
        return Err(shape_err!("upconv2 needs a 2x2 kernel, got {}x{}", kh, kw));
    }
    if p.kernel.len() != 4 * kc * cout || p.bias.len() != cout {
        return Err(shape_err!("int8 parameter sizes do not match {:?}", p.kernel_dims));
    }
    let [b, h, w, cin] = x.dims;
    if kc != cin {
        return Err(shape_err!("input has {} channels, kernel expects {}", cin, kc));
    }
    if h == 0 || w == 0 {
        return Err(shape_err!("zero-sized spatial dimension"));
    }
    let zp = x.qp.zero_point as i16;
    let kernel: Vec<i16> = p.kernel.iter().map(|&v| v as i16).collect();
    let (oh, ow) = (2 * h, 2 * w);
    let mut acc = vec![0i32; b * oh * ow * cout];
    let mut xs = vec![0i16; cin];
    for bi in 0..b {
        for iy in 0..h {
            for ix in 0..w {
                let src = &x.data[((bi * h + iy) * w + ix) * cin..][..cin];
                for (d, &s) in xs.iter_mut().zip(src) {
                    *d = s as i16 - zp;
                }
                for dy in 0..2 {
                    for dx in 0..2 {
                        let o = &mut acc[((bi * oh + 2 * iy + dy) * ow + 2 * ix + dx) * cout..][..cout];
                        o.copy_from_slice(p.bias);
                        let taps = &kernel[(dy * 2 + dx) * cin * cout..][..cin * cout];
                        for (&xv, row) in xs.iter().zip(taps.chunks_exact(cout)) {
                            if xv == 0 {
                                continue;
                            }
                            for (a, &wv) in o.iter_mut().zip(row) {
                                *a += (xv * wv) as i32;
                            }
                        }
                    }
                }
            }
        }
    }
    requantize(&acc, [b, oh, ow, cout], x.qp.scale * p.kernel_scale, out_qp)
}

/// 2x2 stride-2 max pooling directly on int8; the affine map is monotone so
/// the output keeps the input parameters.
pub fn qmaxpool2(x: &QuantTensor) -> Result<QuantTensor> {
    let [b, h, w, c] = x.dims;
    if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("maxpool2 needs even non-zero spatial dims, got {}x{}", h, w));
    }
    let (oh, ow) = (h / 2, w / 2);
    let at = |bi: usize, y: usize, xx: usize| ((bi * h + y) * w + xx) * c;
    let mut out = Vec::with_capacity(b * oh * ow * c);
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let (p00, p01) = (at(bi, 2 * oy, 2 * ox), at(bi, 2 * oy, 2 * ox + 1));
                let (p10, p11) = (at(bi, 2 * oy + 1, 2 * ox), at(bi, 2 * oy + 1, 2 * ox + 1));
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
    QuantTensor::new([b, oh, ow, c], out, x.qp)
}

/// Relu on int8: clamp below at the zero point.
pub fn qrelu(x: &QuantTensor) -> QuantTensor {
    let zp = x.qp.zero_point.clamp(-128, 127) as i8;
    QuantTensor {
        dims: x.dims,
        data: x.data.iter().map(|&v| v.max(zp)).collect(),
        qp: x.qp,
    }
}

fn requantize_i8(x: &QuantTensor, out_qp: QuantParams) -> Vec<i8> {
    if x.qp == out_qp {
        return x.data.clone();
    }
    let m = x.qp.scale / out_qp.scale;
    let table: Vec<i8> = (i8::MIN..=i8::MAX)
        .map(|q| {
            let r = round_half_away((q as i32 - x.qp.zero_point) as f64 * m) + out_qp.zero_point as f64;
            r.clamp(-128.0, 127.0) as i8
        })
        .collect();
    x.data.iter().map(|&q| table[(q as i32 + 128) as usize]).collect()
}

/// Channel concat of two int8 tensors, both requantized onto `out_qp`.
pub fn qconcat(a: &QuantTensor, b: &QuantTensor, out_qp: QuantParams) -> Result<QuantTensor> {
    if a.dims[..3] != b.dims[..3] {
        return Err(shape_err!("cannot concat {:?} with {:?}", a.dims, b.dims));
    }
    let (ca, cb) = (a.dims[3], b.dims[3]);
    let (ra, rb) = (requantize_i8(a, out_qp), requantize_i8(b, out_qp));
    let pixels = a.dims[0] * a.dims[1] * a.dims[2];
    let mut out = Vec::with_capacity(pixels * (ca + cb));
    for p in 0..pixels {
        out.extend_from_slice(&ra[p * ca..(p + 1) * ca]);
        out.extend_from_slice(&rb[p * cb..(p + 1) * cb]);
    }
    QuantTensor::new([a.dims[0], a.dims[1], a.dims[2], ca + cb], out, out_qp)
}

/// 256-entry sigmoid table: entry `q` is the float sigmoid of the real value
/// `q` represents under `input`, quantized with `output`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidLut {
    pub input: QuantParams,
    pub output: QuantParams,
    table: [i8; 256],
}

impl SigmoidLut {
    pub fn new(input: QuantParams, output: QuantParams) -> Self {
        let mut table = [0i8; 256];
        for (slot, q) in table.iter_mut().zip(i8::MIN..=i8::MAX) {
            *slot = output.quantize(sigmoid_scalar(input.dequantize(q)));
        }
        Self { input, output, table }
    }

    #[inline]
    pub fn lookup(&self, q: i8) -> i8 {
        self.table[(q as i32 + 128) as usize]
    }

    pub fn apply(&self, x: &QuantTensor) -> Result<QuantTensor> {
        if x.qp != self.input {
            return Err(shape_err!("sigmoid table built for {:?}, input uses {:?}", self.input, x.qp));
        }
        QuantTensor::new(x.dims, x.data.iter().map(|&q| self.lookup(q)).collect(), self.output)
    }
}
