//! Model serialization: a little-endian binary format with a magic string
//! and a version byte. Round-trips preserve structure and bit-identical
//! parameters.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Layer, LayerGraph, LayerId, LayerKind};
use crate::tensor::{Activation, InitScheme, Matrix};

const MAGIC: &[u8; 4] = b"GRNN";
const VERSION: u8 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Writer {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn matrix(&mut self, m: &Matrix) {
        self.u32(m.rows() as u32);
        self.u32(m.cols() as u32);
        for &v in m.data() {
            self.f64(v);
        }
    }

    fn ids(&mut self, ids: &[LayerId]) {
        self.u32(ids.len() as u32);
        for id in ids {
            self.u64(id.raw());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Load(format!(
                "truncated model file at byte {} while reading {what}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn matrix(&mut self, what: &str) -> Result<Matrix> {
        let rows = self.u32(what)? as usize;
        let cols = self.u32(what)? as usize;
        if rows == 0 || cols == 0 || rows.saturating_mul(cols) > 1 << 28 {
            return Err(Error::Load(format!(
                "implausible matrix shape {rows}x{cols} in {what}"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64(what)?);
        }
        Ok(Matrix::from_vec(rows, cols, data))
    }

    fn ids(&mut self, what: &str) -> Result<Vec<LayerId>> {
        let n = self.u32(what)? as usize;
        if n > 1 << 20 {
            return Err(Error::Load(format!("implausible id count {n} in {what}")));
        }
        (0..n).map(|_| Ok(LayerId(self.u64(what)?))).collect()
    }
}

fn kind_tag(kind: &LayerKind) -> u8 {
    match kind {
        LayerKind::InputDense { .. } => 0,
        LayerKind::InputConv { .. } => 1,
        LayerKind::Output => 2,
        LayerKind::DenseSeq => 3,
        LayerKind::DenseRes { .. } => 4,
        LayerKind::ConvSeq => 5,
        LayerKind::ConvRes => 6,
    }
}

fn init_tag(init: InitScheme) -> u8 {
    match init {
        InitScheme::RandomScaled => 0,
        InitScheme::Zero => 1,
        InitScheme::Identity => 2,
    }
}

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::ReLU => 0,
        Activation::Softmax => 1,
        Activation::Linear => 2,
    }
}

/// Serializes a model to bytes.
pub fn save_model(g: &LayerGraph) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u8(VERSION);
    w.u32(g.def_neu() as u32);
    w.u32(g.conv_channels() as u32);
    match g.image_hw() {
        Some((h, wd)) => {
            w.u8(1);
            w.u32(h as u32);
            w.u32(wd as u32);
        }
        None => {
            w.u8(0);
            w.u32(0);
            w.u32(0);
        }
    }
    w.u64(g.next_id_raw());
    let inputs: Vec<LayerId> = g.inputs().to_vec();
    w.ids(&inputs);
    w.u64(g.output().raw());
    let ids: Vec<LayerId> = g.layer_ids().collect();
    w.u32(ids.len() as u32);
    for id in ids {
        let layer = g.layer(id).expect("iterating existing ids");
        w.u64(id.raw());
        w.u8(kind_tag(&layer.kind));
        match layer.kind {
            LayerKind::InputDense { features } => w.u32(features as u32),
            LayerKind::InputConv { channels } => w.u32(channels as u32),
            LayerKind::DenseRes { init } => w.u32(init_tag(init) as u32),
            _ => w.u32(0),
        }
        w.u8(activation_tag(layer.activation));
        w.u32(layer.neurons as u32);
        match (&layer.weights, &layer.bias) {
            (Some(weights), Some(bias)) => {
                w.u8(1);
                w.matrix(weights);
                w.matrix(bias);
            }
            _ => w.u8(0),
        }
        w.ids(&layer.incoming);
        w.ids(&layer.outgoing);
    }
    w.buf
}

/// Restores a model from bytes produced by [`save_model`]. The loaded graph
/// is re-validated; any inconsistency is a load error.
pub fn load_model(bytes: &[u8]) -> Result<LayerGraph> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Load(format!("bad magic {magic:?}, not a model file")));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::Load(format!(
            "unsupported model version {version}, expected {VERSION}"
        )));
    }
    let def_neu = r.u32("def_neu")? as usize;
    let conv_channels = r.u32("conv_channels")? as usize;
    let has_hw = r.u8("image flag")?;
    let h = r.u32("image height")? as usize;
    let wd = r.u32("image width")? as usize;
    let image_hw = if has_hw == 1 { Some((h, wd)) } else { None };
    let next_id = r.u64("next id")?;
    let inputs = r.ids("input ids")?;
    let output = LayerId(r.u64("output id")?);
    let layer_count = r.u32("layer count")? as usize;
    if layer_count > 1 << 20 {
        return Err(Error::Load(format!("implausible layer count {layer_count}")));
    }

    let mut layers = BTreeMap::new();
    for _ in 0..layer_count {
        let id = LayerId(r.u64("layer id")?);
        let tag = r.u8("layer kind")?;
        let extra = r.u32("kind payload")?;
        let kind = match tag {
            0 => LayerKind::InputDense {
                features: extra as usize,
            },
            1 => LayerKind::InputConv {
                channels: extra as usize,
            },
            2 => LayerKind::Output,
            3 => LayerKind::DenseSeq,
            4 => LayerKind::DenseRes {
                init: match extra {
                    0 => InitScheme::RandomScaled,
                    1 => InitScheme::Zero,
                    2 => InitScheme::Identity,
                    other => return Err(Error::Load(format!("unknown init scheme tag {other}"))),
                },
            },
            5 => LayerKind::ConvSeq,
            6 => LayerKind::ConvRes,
            other => return Err(Error::Load(format!("unknown layer kind tag {other}"))),
        };
        let activation = match r.u8("activation")? {
            0 => Activation::ReLU,
            1 => Activation::Softmax,
            2 => Activation::Linear,
            other => return Err(Error::Load(format!("unknown activation tag {other}"))),
        };
        let neurons = r.u32("neurons")? as usize;
        let has_params = r.u8("params flag")?;
        let (weights, bias) = if has_params == 1 {
            (Some(r.matrix("weights")?), Some(r.matrix("bias")?))
        } else {
            (None, None)
        };
        let incoming = r.ids("incoming")?;
        let outgoing = r.ids("outgoing")?;
        if layers
            .insert(
                id,
                Layer {
                    id,
                    kind,
                    activation,
                    weights,
                    bias,
                    incoming,
                    outgoing,
                    neurons,
                },
            )
            .is_some()
        {
            return Err(Error::Load(format!("duplicate layer id {id}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Load(format!(
            "{} trailing bytes after the model payload",
            bytes.len() - r.pos
        )));
    }

    let g = LayerGraph::from_parts(
        layers,
        inputs,
        output,
        def_neu,
        conv_channels,
        image_hw,
        next_id,
    );
    let violations = g.validate();
    if !violations.is_empty() {
        return Err(Error::Load(format!(
            "loaded graph fails validation: {}",
            violations[0]
        )));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::InputSpec;
    use crate::propagation::{forward, Payload, Signal};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn sample_model() -> LayerGraph {
        let mut r = rng(1);
        let mut g = LayerGraph::new_base_model(
            InputSpec::Conv {
                channels: 1,
                height: 6,
                width: 6,
            },
            5,
            3,
            &mut r,
        )
        .unwrap();
        let (input, output) = (g.inputs()[0], g.output());
        let conv = g.add_layer(LayerKind::ConvSeq, input, output, &mut r).unwrap();
        g.add_layer(LayerKind::DenseSeq, conv, output, &mut r).unwrap();
        g.add_layer(
            LayerKind::DenseRes {
                init: InitScheme::Zero,
            },
            input,
            output,
            &mut r,
        )
        .unwrap();
        g
    }

    #[test]
    fn round_trip_preserves_forward_exactly() {
        let g = sample_model();
        let bytes = save_model(&g);
        let loaded = load_model(&bytes).unwrap();

        let mut img = crate::tensor::ImageBatch::zeros(2, 1, 6, 6);
        let mut r = rng(2);
        for v in img.data_mut() {
            *v = r.gen::<f64>();
        }
        let signals = vec![Signal::new(g.inputs()[0], Payload::Image(img))];
        let a = forward(&g, &signals).unwrap();
        let b = forward(&loaded, &signals).unwrap();
        assert_eq!(a, b, "round-trip must preserve the function bit-for-bit");
    }

    #[test]
    fn save_is_deterministic() {
        let g = sample_model();
        assert_eq!(save_model(&g), save_model(&g));
    }

    #[test]
    fn truncated_payload_is_a_load_error() {
        let bytes = save_model(&sample_model());
        for cut in [3, 5, 20, bytes.len() - 1] {
            let err = load_model(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Load(_)), "cut at {cut}: {err}");
        }
    }

    #[test]
    fn unknown_version_is_a_load_error() {
        let mut bytes = save_model(&sample_model());
        bytes[4] = 99;
        let err = load_model(&bytes).unwrap_err();
        assert!(matches!(err, Error::Load(_)), "{err}");
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn bad_magic_is_a_load_error() {
        let mut bytes = save_model(&sample_model());
        bytes[0] = b'X';
        assert!(load_model(&bytes).is_err());
    }

    #[test]
    fn trailing_garbage_is_a_load_error() {
        let mut bytes = save_model(&sample_model());
        bytes.push(0);
        assert!(load_model(&bytes).is_err());
    }
}
