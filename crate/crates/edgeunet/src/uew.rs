//! UEW weight files. The byte layout is specified in `UEW_FORMAT.md` next
//! to this crate's manifest; this module is its reference implementation.
//!
//! Decoding checks, in order: minimum length, magic, version, structure
//! (truncation / trailing bytes), checksum, then contents (flags, dtypes,
//! duplicate names, spec string).

use std::collections::BTreeMap;
use std::path::Path;

use edgeunet_core::quant::{QuantLayer, QuantParams, QuantWeightSet};
use edgeunet_core::weights::Param;
use edgeunet_core::{ModelSpec, WeightSet};

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"UEW1";
pub const VERSION: u16 = 1;
pub const FLAG_QUANTIZED: u32 = 1;
/// Prefix of the rank-1, zero-length tensors carrying activation parameters.
pub const ACTIVATION_PREFIX: &str = "act/";
/// Prefix of the rank-1 int8 tensors carrying UTF-8 text.
pub const META_PREFIX: &str = "meta/";
pub const META_NOTE: &str = "meta/note";
pub const META_UP_PATH: &str = "meta/up_path";
/// The only decoder up path this engine implements.
pub const UP_PATH: &str = "transposed_conv2x2";
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum UewError {
    #[error("bad magic {0:?}, expected \"UEW1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("file truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} unexpected bytes before the checksum")]
    TrailingData(usize),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("tensor `{name}` has unknown dtype code {code}")]
    BadDtype { name: String, code: u8 },
    #[error("unknown flag bits {0:#x}")]
    BadFlags(u32),
    #[error("invalid UTF-8 in string at byte {0}")]
    BadUtf8(usize),
    #[error("invalid spec string: {0}")]
    Spec(String),
    #[error("{0}")]
    Layout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    I8 = 1,
    I32 = 2,
}

impl DType {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::I8),
            2 => Some(DType::I32),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::I8 => 1,
            DType::F32 | DType::I32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I32(Vec<i32>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::I8(_) => DType::I8,
            Payload::I32(_) => DType::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::I8(v) => v.len(),
            Payload::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u32>,
    pub qp: Option<QuantParams>,
    pub payload: Payload,
}

/// A decoded file, independent of what the tensors mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Uew {
    pub spec: String,
    pub quantized: bool,
    pub entries: Vec<Entry>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Uew {
    /// Serializes entries in the stored order.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.spec);
        out.extend_from_slice(&(if self.quantized { FLAG_QUANTIZED } else { 0 }).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            put_str(&mut out, &e.name);
            out.push(e.payload.dtype() as u8);
            out.push(e.dims.len() as u8);
            for d in &e.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match e.qp {
                Some(qp) => {
                    out.push(1);
                    out.extend_from_slice(&qp.scale.to_le_bytes());
                    out.extend_from_slice(&qp.zero_point.to_le_bytes());
                }
                None => out.push(0),
            }
            match &e.payload {
                Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
                Payload::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, UewError> {
        const MIN_LEN: usize = 4 + 2 + 4 + 4 + 4 + 4;
        if bytes.len() < 4 {
            return Err(UewError::Truncated(bytes.len()));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
        if magic != MAGIC {
            return Err(UewError::BadMagic(magic));
        }
        if bytes.len() < MIN_LEN {
            return Err(UewError::Truncated(bytes.len()));
        }
        let body = &bytes[..bytes.len() - 4];
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u16()?;
        if version != VERSION {
            return Err(UewError::UnsupportedVersion(version));
        }
        let spec = r.string()?;
        let flags = r.u32()?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string()?;
            let code = r.u8()?;
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let qp = match r.u8()? {
                0 => None,
                1 => Some(QuantParams::new(r.f64()?, r.i32()?)),
                other => return Err(UewError::Layout(format!("tensor `{name}`: bad quantization marker {other}"))),
            };
            let dtype = DType::from_code(code).ok_or_else(|| UewError::BadDtype { name: name.clone(), code })?;
            if rank > MAX_RANK {
                return Err(UewError::Layout(format!("tensor `{name}`: rank {rank} exceeds {MAX_RANK}")));
            }
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .ok_or_else(|| UewError::Layout(format!("tensor `{name}`: element count overflows")))?;
            let raw = r.take(len.checked_mul(dtype.size()).ok_or(UewError::Truncated(r.pos))?)?;
            let payload = match dtype {
                DType::F32 => Payload::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
                DType::I8 => Payload::I8(raw.iter().map(|&b| b as i8).collect()),
                DType::I32 => Payload::I32(raw.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()),
            };
            entries.push(Entry { name, dims, qp, payload });
        }
        if r.pos != body.len() {
            return Err(UewError::TrailingData(body.len() - r.pos));
        }
        let stored = u32::from_le_bytes(bytes[body.len()..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(UewError::Checksum { stored, computed });
        }
        if flags & !FLAG_QUANTIZED != 0 {
            return Err(UewError::BadFlags(flags & !FLAG_QUANTIZED));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.name.as_str()) {
                return Err(UewError::DuplicateName(e.name.clone()));
            }
        }
        spec.parse::<ModelSpec>().map_err(|e| UewError::Spec(e.to_string()))?;
        Ok(Self {
            spec,
            quantized: flags & FLAG_QUANTIZED != 0,
            entries,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], UewError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(UewError::Truncated(self.buf.len()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], UewError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8, UewError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, UewError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, UewError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn i32(&mut self) -> Result<i32, UewError> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, UewError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String, UewError> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| UewError::BadUtf8(at))
    }
}

fn text_entry(name: &str, text: &str) -> Entry {
    Entry {
        name: name.to_string(),
        dims: vec![text.len() as u32],
        qp: None,
        payload: Payload::I8(text.bytes().map(|b| b as i8).collect()),
    }
}

/// Float or quantized weights as stored in a UEW file.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightFile {
    Float(WeightSet),
    Quant(QuantWeightSet),
}

impl WeightFile {
    pub fn spec(&self) -> &str {
        match self {
            WeightFile::Float(w) => &w.spec,
            WeightFile::Quant(q) => &q.spec,
        }
    }

    pub fn note(&self) -> &str {
        match self {
            WeightFile::Float(w) => &w.note,
            WeightFile::Quant(q) => &q.note,
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        Ok(self.spec().parse()?)
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, WeightFile::Quant(_))
    }

    /// Entries sorted by name. Every file carries `meta/up_path` and, when
    /// the note is not empty, `meta/note`. Quantized layers store `{layer}.kernel` as
    /// int8 with `(kernel_scale, 0)` and `{layer}.bias` as int32 with
    /// `(bias_scale, 0)`; every activation is a zero-length int8 tensor
    /// `act/{name}` holding its parameters.
    pub fn to_uew(&self) -> Uew {
        let mut entries = Vec::new();
        match self {
            WeightFile::Float(w) => {
                for (name, p) in &w.params {
                    entries.push(Entry {
                        name: name.clone(),
                        dims: p.shape.iter().map(|&d| d as u32).collect(),
                        qp: None,
                        payload: Payload::F32(p.data.clone()),
                    });
                }
            }
            WeightFile::Quant(q) => {
                for (layer, l) in &q.layers {
                    entries.push(Entry {
                        name: format!("{layer}.kernel"),
                        dims: l.kernel_dims.iter().map(|&d| d as u32).collect(),
                        qp: Some(QuantParams::new(l.kernel_scale, 0)),
                        payload: Payload::I8(l.kernel.clone()),
                    });
                    entries.push(Entry {
                        name: format!("{layer}.bias"),
                        dims: vec![l.bias.len() as u32],
                        qp: Some(QuantParams::new(l.bias_scale, 0)),
                        payload: Payload::I32(l.bias.clone()),
                    });
                }
                for (name, qp) in &q.activations {
                    entries.push(Entry {
                        name: format!("{ACTIVATION_PREFIX}{name}"),
                        dims: vec![0],
                        qp: Some(*qp),
                        payload: Payload::I8(Vec::new()),
                    });
                }
            }
        }
        entries.push(text_entry(META_UP_PATH, UP_PATH));
        if !self.note().is_empty() {
            entries.push(text_entry(META_NOTE, self.note()));
        }
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        Uew {
            spec: self.spec().to_string(),
            quantized: self.is_quantized(),
            entries,
        }
    }

    pub fn from_uew(u: Uew) -> Result<Self, UewError> {
        let layout = |m: String| UewError::Layout(m);
        let (meta, tensors): (Vec<Entry>, Vec<Entry>) = u.entries.into_iter().partition(|e| e.name.starts_with(META_PREFIX));
        let mut note = String::new();
        let mut up_path = None;
        for e in meta {
            let text = match (&e.payload, e.dims.len(), e.qp) {
                (Payload::I8(bytes), 1, None) => String::from_utf8(bytes.iter().map(|&b| b as u8).collect())
                    .map_err(|_| layout(format!("`{}` is not UTF-8", e.name)))?,
                _ => return Err(layout(format!("`{}` must be a rank-1 int8 tensor without quantization parameters", e.name))),
            };
            match e.name.as_str() {
                META_NOTE => note = text,
                META_UP_PATH => up_path = Some(text),
                other => return Err(layout(format!("unknown metadata entry `{other}`"))),
            }
        }
        match up_path.as_deref() {
            Some(UP_PATH) => {}
            Some(other) => return Err(layout(format!("unsupported up path `{other}`, expected `{UP_PATH}`"))),
            None => return Err(layout(format!("missing `{META_UP_PATH}` entry"))),
        }
        if !u.quantized {
            let mut params = BTreeMap::new();
            for e in tensors {
                let Payload::F32(data) = e.payload else {
                    return Err(layout(format!("float file holds non-float tensor `{}`", e.name)));
                };
                if e.qp.is_some() {
                    return Err(layout(format!("float tensor `{}` carries quantization parameters", e.name)));
                }
                params.insert(e.name, Param { shape: e.dims.iter().map(|&d| d as usize).collect(), data });
            }
            return Ok(WeightFile::Float(WeightSet { spec: u.spec, note, params }));
        }

        let mut kernels = BTreeMap::new();
        let mut biases = BTreeMap::new();
        let mut activations = BTreeMap::new();
        for e in tensors {
            let qp = e.qp.ok_or_else(|| layout(format!("quantized tensor `{}` lacks quantization parameters", e.name)))?;
            if !qp.is_valid() {
                return Err(layout(format!("tensor `{}` has invalid quantization parameters", e.name)));
            }
            if let Some(act) = e.name.strip_prefix(ACTIVATION_PREFIX) {
                if e.dims != [0] || e.payload.dtype() != DType::I8 {
                    return Err(layout(format!("activation entry `{}` must be an empty int8 vector", e.name)));
                }
                activations.insert(act.to_string(), qp);
            } else if let Some(layer) = e.name.strip_suffix(".kernel") {
                let (Payload::I8(data), [a, b, c, d]) = (e.payload, &e.dims[..]) else {
                    return Err(layout(format!("`{}` must be a rank-4 int8 tensor", e.name)));
                };
                if qp.zero_point != 0 {
                    return Err(layout(format!("`{}` must be symmetric", e.name)));
                }
                kernels.insert(layer.to_string(), (data, [*a as usize, *b as usize, *c as usize, *d as usize], qp.scale));
            } else if let Some(layer) = e.name.strip_suffix(".bias") {
                let (Payload::I32(data), 1) = (e.payload, e.dims.len()) else {
                    return Err(layout(format!("`{}` must be a rank-1 int32 tensor", e.name)));
                };
                biases.insert(layer.to_string(), (data, qp.scale));
            } else {
                return Err(layout(format!("unrecognized tensor `{}` in a quantized file", e.name)));
            }
        }
        let mut layers = BTreeMap::new();
        for (layer, (kernel, kernel_dims, kernel_scale)) in kernels {
            let (bias, bias_scale) = biases
                .remove(&layer)
                .ok_or_else(|| layout(format!("layer `{layer}` has a kernel but no bias")))?;
            if bias.len() != kernel_dims[3] {
                return Err(layout(format!("layer `{layer}`: bias length {} vs {} output channels", bias.len(), kernel_dims[3])));
            }
            layers.insert(layer, QuantLayer { kernel, kernel_dims, kernel_scale, bias, bias_scale });
        }
        if let Some(layer) = biases.keys().next() {
            return Err(layout(format!("layer `{layer}` has a bias but no kernel")));
        }
        Ok(WeightFile::Quant(QuantWeightSet { spec: u.spec, note, layers, activations }))
    }

    pub fn encode(&self) -> Vec<u8> {
        self.to_uew().encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, UewError> {
        Self::from_uew(Uew::decode(bytes)?)
    }
}

pub fn write_weights(path: &Path, w: &WeightFile) -> Result<()> {
    std::fs::write(path, w.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<WeightFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    WeightFile::decode(&bytes).map_err(|e| Error::from(e).at(path))
}
