//! Little-endian binary dumps: flow fields (`FLOWv1`), blur parameter
//! stacks (`BPRMv1`) and predictor checkpoints (`JAMAv1`).
//!
//! Every file starts with its six-byte magic padded with zeros to eight
//! bytes, followed by `u32` header fields and then `f32` payload.

use std::fs;
use std::path::Path;

use aba_core::attack_os::{Layer, LayerKind, NetConfig, PredictorNet};
use aba_core::blur::{AccumWeights, BlurParams, MotionRatios, SUM_TOLERANCE};
use aba_core::numerics::conv::ConvGeometry;
use aba_core::{FlowField, Tensor};

use crate::error::{Error, Result};

pub const FLOW_MAGIC: &[u8; 6] = b"FLOWv1";
pub const PARAMS_MAGIC: &[u8; 6] = b"BPRMv1";
pub const NET_MAGIC: &[u8; 6] = b"JAMAv1";

struct Writer(Vec<u8>);

impl Writer {
    fn new(magic: &[u8; 6]) -> Self {
        let mut buf = magic.to_vec();
        buf.extend_from_slice(&[0, 0]);
        Writer(buf)
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("header fields fit in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f32s(&mut self, values: &[f64]) {
        for &v in values {
            self.0.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, buf: &'a [u8], magic: &[u8; 6]) -> Result<Self> {
        if buf.len() < 8 || &buf[..6] != magic {
            return Err(Error::format(path, None, format!("not a {} file", String::from_utf8_lossy(magic))));
        }
        Ok(Reader { path, buf, pos: 8 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(self.path, None, format!("truncated at byte {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, None, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.path, None, format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn product(path: &Path, dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(path, None, "header dimensions overflow"))
}

fn save(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let mut w = Writer::new(FLOW_MAGIC);
    w.u32(flow.height);
    w.u32(flow.width);
    w.f32s(&flow.dx);
    w.f32s(&flow.dy);
    w.0
}

pub fn decode_flow(path: &Path, buf: &[u8]) -> Result<FlowField> {
    let mut r = Reader::new(path, buf, FLOW_MAGIC)?;
    let h = r.u32()?;
    let w = r.u32()?;
    let plane = product(path, &[h, w])?;
    let dx = r.f32s(plane)?;
    let dy = r.f32s(plane)?;
    r.finish()?;
    FlowField::new(h, w, dx, dy).map_err(|e| Error::format(path, None, e.to_string()))
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    save(path, &encode_flow(flow))
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    decode_flow(path, &load(path)?)
}

pub fn encode_params(params: &BlurParams) -> Vec<u8> {
    let mut w = Writer::new(PARAMS_MAGIC);
    w.u32(params.n_instants());
    w.u32(params.height());
    w.u32(params.width());
    w.f32s(&params.ratios.0.data);
    w.f32s(&params.accum.0.data);
    w.0
}

/// Decodes and re-checks the simplex constraints; single precision keeps
/// the sums well inside the tolerance.
pub fn decode_params(path: &Path, buf: &[u8]) -> Result<BlurParams> {
    let mut r = Reader::new(path, buf, PARAMS_MAGIC)?;
    let n = r.u32()?;
    let h = r.u32()?;
    let w = r.u32()?;
    if n < 2 {
        return Err(Error::format(path, None, format!("need at least 2 instants, got {n}")));
    }
    let plane = product(path, &[h, w])?;
    let ratios = r.f32s(product(path, &[n - 1, plane])?)?;
    let accum = r.f32s(product(path, &[n, plane])?)?;
    r.finish()?;
    let bad = |e: aba_core::Error| Error::format(path, None, e.to_string());
    BlurParams::new(
        MotionRatios(Tensor::from_vec(n - 1, h, w, ratios).map_err(bad)?),
        AccumWeights(Tensor::from_vec(n, h, w, accum).map_err(bad)?),
    )
    .and_then(|p| p.check_constraints(SUM_TOLERANCE).map(|_| p))
    .map_err(bad)
}

pub fn write_params(path: &Path, params: &BlurParams) -> Result<()> {
    save(path, &encode_params(params))
}

pub fn read_params(path: &Path) -> Result<BlurParams> {
    decode_params(path, &load(path)?)
}

pub fn encode_net(net: &PredictorNet) -> Vec<u8> {
    let c = &net.config;
    let mut w = Writer::new(NET_MAGIC);
    w.u32(c.n_instants);
    w.u32(c.image_channels);
    w.u32(c.input_size);
    w.u32(c.widths.len());
    for &width in &c.widths {
        w.u32(width);
    }
    w.u32(net.layers.len());
    for l in &net.layers {
        w.u32(match l.kind {
            LayerKind::Conv => 0,
            LayerKind::ConvTranspose => 1,
        });
        let g = &l.geom;
        for v in [g.cin, g.cout, g.kernel, g.stride, g.pad] {
            w.u32(v);
        }
    }
    for l in &net.layers {
        w.f32s(&l.weight.data);
        w.f32s(&l.bias.data);
    }
    w.0
}

/// Decodes a checkpoint; the layer headers must agree with the network the
/// stored configuration describes.
pub fn decode_net(path: &Path, buf: &[u8]) -> Result<PredictorNet> {
    let mut r = Reader::new(path, buf, NET_MAGIC)?;
    let n_instants = r.u32()?;
    let image_channels = r.u32()?;
    let input_size = r.u32()?;
    let depth = r.u32()?;
    if depth > 64 {
        return Err(Error::format(path, None, format!("implausible depth {depth}")));
    }
    let widths = (0..depth).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let config = NetConfig {
        n_instants,
        image_channels,
        input_size,
        widths,
    };
    let count = r.u32()?;
    if count > 3 * 64 {
        return Err(Error::format(path, None, format!("implausible layer count {count}")));
    }
    let mut shapes = Vec::with_capacity(count);
    for i in 0..count {
        let kind = match r.u32()? {
            0 => LayerKind::Conv,
            1 => LayerKind::ConvTranspose,
            k => return Err(Error::format(path, None, format!("layer {i}: unknown kind {k}"))),
        };
        let mut g = [0usize; 5];
        for v in &mut g {
            *v = r.u32()?;
        }
        shapes.push((kind, ConvGeometry { cin: g[0], cout: g[1], kernel: g[2], stride: g[3], pad: g[4] }));
    }
    let bad = |e: aba_core::Error| Error::format(path, None, e.to_string());
    let mut layers = Vec::with_capacity(count);
    for (kind, geom) in shapes {
        let weight = r.f32s(product(path, &[geom.cin, geom.cout, geom.kernel, geom.kernel])?)?;
        let bias = r.f32s(geom.cout)?;
        layers.push(Layer {
            kind,
            geom,
            weight: Tensor::from_vec(geom.cin * geom.cout, geom.kernel, geom.kernel, weight).map_err(bad)?,
            bias: Tensor::from_vec(geom.cout, 1, 1, bias).map_err(bad)?,
        });
    }
    r.finish()?;
    PredictorNet::from_layers(config, layers).map_err(bad)
}

pub fn write_net(path: &Path, net: &PredictorNet) -> Result<()> {
    save(path, &encode_net(net))
}

pub fn read_net(path: &Path) -> Result<PredictorNet> {
    decode_net(path, &load(path)?)
}
