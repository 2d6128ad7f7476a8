//! Binary model files.
//!
//! Layout (little-endian): magic `HPPI`, `u16` version, `u16` layer count,
//! then per layer: `u16`-prefixed UTF-8 name, `u8` type tag (high bit set
//! when any tensor is int8), hyperparameter block, `u8` alias flag with an
//! optional `u16`-prefixed alias target, and for owned layers each parameter
//! tensor as `u8` encoding, `u8` rank, `u32` dims and its payload (`f64`
//! values, or an `f64` scale followed by `i8` values).

use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{resolve_alias, shared, InputKind, LayerKind, ModelGraph, Node};
use crate::kernels::Padding;
use crate::quant::QuantizedTensor;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HPPI";
pub const VERSION: u16 = 1;
const QUANTIZED_FLAG: u8 = 0x80;
const ENC_F64: u8 = 0;
const ENC_I8: u8 = 1;

/// Per-parameter int8 tensors, `[node][param]`; `None` entries are stored as
/// f64.
pub type QuantTable = [Vec<Option<QuantizedTensor>>];

/// A decoded file: the executable graph plus any int8 tensors it carried.
#[derive(Debug)]
pub struct ModelFile {
    pub graph: ModelGraph,
    pub quantized: Vec<Vec<Option<QuantizedTensor>>>,
}

impl ModelFile {
    pub fn is_quantized(&self) -> bool {
        self.quantized.iter().flatten().any(Option::is_some)
    }
}

fn type_tag(kind: &LayerKind) -> u8 {
    match kind {
        LayerKind::Input { .. } => 1,
        LayerKind::Conv2d { .. } => 2,
        LayerKind::BatchNorm { .. } => 3,
        LayerKind::Relu => 4,
        LayerKind::MaxPool2d { .. } => 5,
        LayerKind::FramePool => 6,
        LayerKind::GlobalAvgPool => 7,
        LayerKind::Lstm { .. } => 8,
        LayerKind::Concat => 9,
        LayerKind::Eca { .. } => 10,
        LayerKind::Reshape { .. } => 11,
        LayerKind::Dsc { .. } => 12,
        LayerKind::Dense { .. } => 13,
        LayerKind::Softmax => 14,
    }
}

fn input_kind_tag(k: InputKind) -> u8 {
    match k {
        InputKind::Fft => 0,
        InputKind::Wt => 1,
        InputKind::Gt => 2,
        InputKind::Vector => 3,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: usize) -> Result<()> {
        let v = u16::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u16")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.u16(s.len())?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
    fn dims(&mut self, dims: &[usize]) -> Result<()> {
        self.u8(u8::try_from(dims.len()).map_err(|_| Error::InvalidArgument("rank > 255".into()))?);
        dims.iter().try_for_each(|&d| self.u32(d))
    }
}

fn write_hyper(w: &mut Writer, node: &Node) -> Result<()> {
    w.u16(node.inputs.len())?;
    for &i in &node.inputs {
        w.u16(i)?;
    }
    match &node.kind {
        LayerKind::Input { kind, shape } => {
            w.u8(input_kind_tag(*kind));
            w.dims(shape)?;
        }
        LayerKind::Conv2d { kernel, cin, cout, padding } => {
            w.u32(*kernel)?;
            w.u32(*cin)?;
            w.u32(*cout)?;
            w.u8(match padding {
                Padding::Valid => 0,
                Padding::Same => 1,
            });
        }
        LayerKind::BatchNorm { channels, eps, momentum } => {
            w.u32(*channels)?;
            w.f64(*eps);
            w.f64(*momentum);
        }
        LayerKind::MaxPool2d { pool } => w.u32(*pool)?,
        LayerKind::Lstm { input, hidden } => {
            w.u32(*input)?;
            w.u32(*hidden)?;
        }
        LayerKind::Eca { kernel } => w.u32(*kernel)?,
        LayerKind::Reshape { shape } => w.dims(shape)?,
        LayerKind::Dsc { kernel, cin, cout } => {
            w.u32(*kernel)?;
            w.u32(*cin)?;
            w.u32(*cout)?;
        }
        LayerKind::Dense { inputs, outputs } => {
            w.u32(*inputs)?;
            w.u32(*outputs)?;
        }
        LayerKind::Relu | LayerKind::FramePool | LayerKind::GlobalAvgPool | LayerKind::Concat | LayerKind::Softmax => {}
    }
    Ok(())
}

/// Serializes `graph`; tensors with an entry in `quantized` are written as
/// int8.
pub fn to_bytes(graph: &ModelGraph, quantized: Option<&QuantTable>) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(VERSION as usize)?;
    w.u16(graph.nodes().len())?;
    for (i, node) in graph.nodes().iter().enumerate() {
        let q = quantized.and_then(|t| t.get(i));
        let any_q = !node.is_frozen() && q.is_some_and(|q| q.iter().any(Option::is_some));
        w.str(&node.name)?;
        w.u8(type_tag(&node.kind) | if any_q { QUANTIZED_FLAG } else { 0 });
        write_hyper(&mut w, node)?;
        if let Some(alias) = &node.alias {
            w.u8(1);
            w.str(alias)?;
            continue;
        }
        w.u8(0);
        for (j, p) in node.params.iter().enumerate() {
            match q.and_then(|q| q.get(j)).and_then(Option::as_ref) {
                Some(qt) => {
                    w.u8(ENC_I8);
                    w.dims(&qt.shape)?;
                    w.f64(qt.scale);
                    w.0.extend(qt.values.iter().map(|&v| v as u8));
                }
                None => {
                    let t = p.read();
                    w.u8(ENC_F64);
                    w.dims(t.shape())?;
                    t.data().iter().for_each(|&v| w.f64(v));
                }
            }
        }
    }
    Ok(w.0)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Truncated(format!("{what} at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<usize> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")) as usize)
    }
    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u16(what)?;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Malformed(format!("{what} is not UTF-8")))
    }
    fn dims(&mut self, what: &str) -> Result<Vec<usize>> {
        let rank = self.u8(what)?;
        (0..rank).map(|_| self.u32(what)).collect()
    }
}

fn read_kind(r: &mut Reader, tag: u8) -> Result<LayerKind> {
    let kind = match tag {
        1 => {
            let kind = match r.u8("input kind")? {
                0 => InputKind::Fft,
                1 => InputKind::Wt,
                2 => InputKind::Gt,
                3 => InputKind::Vector,
                t => return Err(Error::Malformed(format!("unknown input kind {t}"))),
            };
            LayerKind::Input { kind, shape: r.dims("input shape")? }
        }
        2 => LayerKind::Conv2d {
            kernel: r.u32("conv kernel")?,
            cin: r.u32("conv cin")?,
            cout: r.u32("conv cout")?,
            padding: match r.u8("conv padding")? {
                0 => Padding::Valid,
                1 => Padding::Same,
                t => return Err(Error::Malformed(format!("unknown padding {t}"))),
            },
        },
        3 => LayerKind::BatchNorm {
            channels: r.u32("bn channels")?,
            eps: r.f64("bn eps")?,
            momentum: r.f64("bn momentum")?,
        },
        4 => LayerKind::Relu,
        5 => LayerKind::MaxPool2d { pool: r.u32("pool size")? },
        6 => LayerKind::FramePool,
        7 => LayerKind::GlobalAvgPool,
        8 => LayerKind::Lstm { input: r.u32("lstm input")?, hidden: r.u32("lstm hidden")? },
        9 => LayerKind::Concat,
        10 => LayerKind::Eca { kernel: r.u32("eca kernel")? },
        11 => LayerKind::Reshape { shape: r.dims("reshape")? },
        12 => LayerKind::Dsc {
            kernel: r.u32("dsc kernel")?,
            cin: r.u32("dsc cin")?,
            cout: r.u32("dsc cout")?,
        },
        13 => LayerKind::Dense { inputs: r.u32("dense inputs")?, outputs: r.u32("dense outputs")? },
        14 => LayerKind::Softmax,
        t => return Err(Error::Malformed(format!("unknown layer type tag {t}"))),
    };
    Ok(kind)
}

/// Decodes a model file. Aliased layers are resolved against `base`.
pub fn from_bytes(buf: &[u8], base: Option<&ModelGraph>) -> Result<ModelFile> {
    let mut r = Reader { buf, pos: 0 };
    if buf.len() < MAGIC.len() || &buf[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    r.pos = 4;
    let version = r.u16("version")? as u16;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u16("layer count")?;
    let mut nodes = Vec::with_capacity(count);
    let mut quantized = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str("layer name")?;
        let tag = r.u8("type tag")?;
        let n_inputs = r.u16("input count")?;
        let inputs = (0..n_inputs).map(|_| r.u16("input index")).collect::<Result<Vec<_>>>()?;
        let kind = read_kind(&mut r, tag & !QUANTIZED_FLAG)?;
        let shapes = kind.param_shapes();
        let mut node = Node { name, kind, inputs, params: Vec::new(), alias: None };
        match r.u8("alias flag")? {
            0 => {}
            1 => {
                node.alias = Some(r.str("alias target")?);
                let base = base.ok_or_else(|| Error::UnresolvedAlias(node.alias.clone().unwrap_or_default()))?;
                node.params = resolve_alias(&node, base)?;
                quantized.push(vec![None; shapes.len()]);
                nodes.push(node);
                continue;
            }
            f => return Err(Error::Malformed(format!("alias flag {f}"))),
        }
        let mut qs = Vec::with_capacity(shapes.len());
        for _ in &shapes {
            let enc = r.u8("tensor encoding")?;
            let dims = r.dims("tensor dims")?;
            let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len.ok_or_else(|| Error::Malformed("tensor dims overflow".into()))?;
            match enc {
                ENC_F64 => {
                    let bytes = r.take(len.checked_mul(8).unwrap_or(usize::MAX), "tensor payload")?;
                    let data = bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    node.params.push(shared(Tensor::new(dims, data)?));
                    qs.push(None);
                }
                ENC_I8 => {
                    let scale = r.f64("quantization scale")?;
                    let values = r.take(len, "int8 payload")?.iter().map(|&b| b as i8).collect();
                    let q = QuantizedTensor::new(dims, scale, values)
                        .map_err(|e| Error::Malformed(e.to_string()))?;
                    node.params.push(shared(q.dequantize()));
                    qs.push(Some(q));
                }
                e => return Err(Error::Malformed(format!("tensor encoding {e}"))),
            }
        }
        quantized.push(qs);
        nodes.push(node);
    }
    if r.pos != buf.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let graph = ModelGraph::from_nodes(nodes).map_err(|e| match e {
        Error::Shape(m) => Error::Malformed(m),
        other => other,
    })?;
    Ok(ModelFile { graph, quantized })
}

pub fn save_model(graph: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(graph, None)?)?;
    Ok(())
}

pub fn save_model_file(file: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(&file.graph, Some(&file.quantized))?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    from_bytes(&std::fs::read(path)?, None)
}

/// Loads a model whose aliased layers refer to `base`.
pub fn load_model_with_base(path: impl AsRef<Path>, base: &ModelGraph) -> Result<ModelFile> {
    from_bytes(&std::fs::read(path)?, Some(base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_first_layer, build_plmn, build_stationary, PlmnVariant};

    #[test]
    fn round_trip_is_byte_identical() {
        let g = build_plmn(PlmnVariant::Full, 9).unwrap();
        let a = to_bytes(&g, None).unwrap();
        let back = from_bytes(&a, None).unwrap();
        assert_eq!(back.graph.snapshot(), g.snapshot());
        assert_eq!(to_bytes(&back.graph, None).unwrap(), a);
    }

    #[test]
    fn bad_magic_and_version() {
        let g = build_first_layer(3, 0).unwrap();
        let mut a = to_bytes(&g, None).unwrap();
        let mut b = a.clone();
        b[0] = b'X';
        assert!(matches!(from_bytes(&b, None), Err(Error::BadMagic)));
        a[4] = 7;
        assert!(matches!(from_bytes(&a, None), Err(Error::UnsupportedVersion(7))));
        assert!(matches!(from_bytes(b"HP", None), Err(Error::BadMagic)));
    }

    #[test]
    fn short_payload_is_truncation() {
        let g = build_first_layer(3, 0).unwrap();
        let a = to_bytes(&g, None).unwrap();
        assert!(matches!(from_bytes(&a[..a.len() - 3], None), Err(Error::Truncated(_))));
    }

    #[test]
    fn stationary_needs_base() {
        let fl = build_first_layer(3, 0).unwrap();
        let st = build_stationary(&fl, 1).unwrap();
        let bytes = to_bytes(&st, None).unwrap();
        assert!(matches!(from_bytes(&bytes, None), Err(Error::UnresolvedAlias(_))));
        let back = from_bytes(&bytes, Some(&fl)).unwrap();
        assert_eq!(back.graph.snapshot(), st.snapshot());
        // backbone tensors are not repeated
        assert!(bytes.len() < to_bytes(&fl, None).unwrap().len());
    }
}
