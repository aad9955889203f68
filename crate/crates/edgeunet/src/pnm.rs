//! Binary Netpbm: P6 (8-bit RGB) images and P5 (8-bit gray) masks.
//!
//! Header tokens are separated by whitespace and may be interleaved with
//! `#` comments; exactly one whitespace byte follows the maxval. Only
//! maxval 255 is accepted.

use std::path::Path;

use edgeunet_core::{Mask, Tensor};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PnmError {
    #[error("expected a {expected} file, found magic {found:?}")]
    Magic { expected: &'static str, found: String },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("only 8-bit files (maxval 255) are supported, got maxval {0}")]
    Depth(u32),
    #[error("pixel data truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} bytes after the pixel data")]
    Trailing(usize),
    #[error("mask pixel value {0} is neither 0 nor 255")]
    NotBinary(u8),
    #[error("image is {got_h}x{got_w}, expected {want_h}x{want_w}")]
    Size { want_h: usize, want_w: usize, got_h: usize, got_w: usize },
    #[error("image value {0} outside [0, 1]")]
    Range(f32),
}

struct Header {
    width: usize,
    height: usize,
    data_at: usize,
}

fn parse_header(bytes: &[u8], magic: &'static str) -> Result<Header, PnmError> {
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(PnmError::Magic { expected: magic, found });
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        let start_ws = pos;
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        if pos == start_ws {
            return Err(PnmError::Header("missing whitespace between fields".into()));
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let digits = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = digits
            .parse()
            .map_err(|_| PnmError::Header(format!("expected a number at byte {start}")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PnmError::Header("maxval must be followed by one whitespace byte".into()));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(PnmError::Depth(maxval));
    }
    if width == 0 || height == 0 {
        return Err(PnmError::Header(format!("empty image {width}x{height}")));
    }
    Ok(Header { width: width as usize, height: height as usize, data_at: pos + 1 })
}

fn pixels<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8], PnmError> {
    let expected = h.width * h.height * channels;
    let found = bytes.len() - h.data_at;
    if found < expected {
        return Err(PnmError::Truncated { expected, found });
    }
    if found > expected {
        return Err(PnmError::Trailing(found - expected));
    }
    Ok(&bytes[h.data_at..])
}

/// P6 to a (1, H, W, 3) tensor with values `byte / 255`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor, PnmError> {
    let h = parse_header(bytes, "P6")?;
    let data = pixels(bytes, &h, 3)?.iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Tensor::new([1, h.height, h.width, 3], data).expect("length matches header"))
}

/// (1, H, W, 3) tensor in [0, 1] to P6; values are rounded to the nearest
/// byte.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>, PnmError> {
    let [b, h, w, c] = image.dims();
    if b != 1 || c != 3 {
        return Err(PnmError::Header(format!("expected a (1, H, W, 3) image, got {:?}", image.dims())));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for &v in image.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(PnmError::Range(v));
        }
        out.push((v * 255.0).round() as u8);
    }
    Ok(out)
}

/// P5 with pixels 0 or 255 to a mask.
pub fn decode_pgm_mask(bytes: &[u8]) -> Result<Mask, PnmError> {
    let h = parse_header(bytes, "P5")?;
    let data = pixels(bytes, &h, 1)?
        .iter()
        .map(|&b| match b {
            0 => Ok(0),
            255 => Ok(1),
            other => Err(PnmError::NotBinary(other)),
        })
        .collect::<Result<Vec<u8>, _>>()?;
    Ok(Mask::new(h.height, h.width, data).expect("binary data"))
}

pub fn encode_pgm_mask(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|&v| v * 255));
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    decode_ppm(&read(path)?).map_err(|e| Error::from(e).at(path))
}

/// [`read_image`] that also requires an `height` x `width` image.
pub fn read_image_sized(path: &Path, height: usize, width: usize) -> Result<Tensor> {
    let t = read_image(path)?;
    if (t.height(), t.width()) != (height, width) {
        let e = PnmError::Size { want_h: height, want_w: width, got_h: t.height(), got_w: t.width() };
        return Err(Error::from(e).at(path));
    }
    Ok(t)
}

pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    write(path, &encode_ppm(image)?)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    decode_pgm_mask(&read(path)?).map_err(|e| Error::from(e).at(path))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write(path, &encode_pgm_mask(mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_and_white_pixels() {
        let mut black = b"P6\n2 1\n255\n".to_vec();
        black.extend([0; 6]);
        assert!(decode_ppm(&black).unwrap().data().iter().all(|&v| v == 0.0));
        let mut white = b"P6 1 1 255 ".to_vec();
        white.extend([255; 3]);
        assert_eq!(decode_ppm(&white).unwrap().data(), [1.0; 3]);
    }

    #[test]
    fn comments_in_header() {
        let mut b = b"P5\n# made by hand\n2 # width\n1\n255\n".to_vec();
        b.extend([255, 0]);
        let m = decode_pgm_mask(&b).unwrap();
        assert_eq!(m.data(), [1, 0]);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(decode_ppm(b"P5\n1 1\n255\n\0"), Err(PnmError::Magic { .. })));
        assert_eq!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").unwrap_err(), PnmError::Depth(65535));
        assert!(matches!(decode_ppm(b"P6\n2 2\n255\n\0\0\0"), Err(PnmError::Truncated { .. })));
        assert!(matches!(decode_ppm(b"P6\n1 1\n255\n\0\0\0\0"), Err(PnmError::Trailing(1))));
        assert!(matches!(decode_ppm(b"P6\nx 1\n255\n"), Err(PnmError::Header(_))));
        assert_eq!(decode_pgm_mask(b"P5 1 1 255 \x07").unwrap_err(), PnmError::NotBinary(7));
    }

    #[test]
    fn mask_round_trip() {
        let m = Mask::from_fn(3, 5, |y, x| (y + x) % 2 == 0);
        let bytes = encode_pgm_mask(&m);
        assert_eq!(decode_pgm_mask(&bytes).unwrap(), m);
    }

    #[test]
    fn image_round_trip_on_byte_grid() {
        let t = Tensor::from_fn([1, 4, 3, 3], |_, y, x, c| ((y * 9 + x * 3 + c) * 7 % 256) as f32 / 255.0);
        let bytes = encode_ppm(&t).unwrap();
        assert_eq!(decode_ppm(&bytes).unwrap(), t);
        assert_eq!(encode_ppm(&decode_ppm(&bytes).unwrap()).unwrap(), bytes);
    }
}
