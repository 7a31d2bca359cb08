//! Versioned little-endian binary containers for networks and capture datasets.
//!
//! # Network container (`.magnet`)
//!
//! ```text
//! magic "MAGN", u32 version = 1
//! u64 input_dim
//! u32 layer count, then per layer a u8 kind:
//!   0 dense : activation, matrix W, vector b
//!   1 mag   : activation f, matrix W, matrix G, optional vector b, optional provenance
//!   2 fused : activation f, activation out, matrix G, matrix Ŵ, vector b,
//!             optional matrix W_concat, optional provenance
//! u32 skip count, then per skip: u64 at_layer, u8 source (0 = original input)
//! u32 head count, then per head: string name, u64 start, u64 len, head activation
//!
//! activation      : u8 tag (0 relu, 1 softplus, 2 identity, 3 sigmoid), f64 β (0 unless softplus)
//! head activation : u8 0 + activation | u8 1 (softmax)
//! matrix          : u64 rows, u64 cols, rows·cols f64 in row-major order
//! vector          : u64 len, len f64
//! string          : u32 byte length, UTF-8 bytes
//! optional x      : u8 0 | u8 1 + x
//! provenance      : u8 ensemble (0 iid, 1 orthogonal), u64 seed, u64 stream_id, u64 drawn_rows
//! ```
//!
//! Provenance records the stream that drew `G`, so a loaded layer can be
//! checked by regenerating its features.
//!
//! # Capture container (`.magcap`)
//!
//! ```text
//! magic "MAGC", u32 version = 1
//! string network_id, u64 layer_index, string probe
//! matrix X, matrix Y
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use magnituder::distill::{CaptureDataset, CaptureProvenance};
use magnituder::fusion::FusedLayer;
use magnituder::layers::{ConcatSource, FeatureProvenance, Head, HeadActivation, SkipConcat};
use magnituder::{
    Activation, DenseLayer, EnsembleKind, Layer, MagLayer, Matrix, NetworkSpec, RngStream,
};

const NETWORK_MAGIC: &[u8; 4] = b"MAGN";
const CAPTURE_MAGIC: &[u8; 4] = b"MAGC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a {expected} file (bad magic)")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] magnituder::Error),
}

type Result<T> = std::result::Result<T, FormatError>;

fn malformed(msg: impl Into<String>) -> FormatError {
    FormatError::Malformed(msg.into())
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn usize(&mut self, v: usize) -> Result<()> {
        self.u64(v as u64)
    }
    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for v in vs {
            self.0.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
    fn string(&mut self, s: &str) -> Result<()> {
        let len = u32::try_from(s.len()).map_err(|_| malformed("string too long"))?;
        self.u32(len)?;
        Ok(self.0.write_all(s.as_bytes())?)
    }
    fn vector(&mut self, v: &[f64]) -> Result<()> {
        self.usize(v.len())?;
        self.f64s(v)
    }
    fn matrix(&mut self, m: &Matrix) -> Result<()> {
        self.usize(m.rows())?;
        self.usize(m.cols())?;
        self.f64s(m.as_slice())
    }
    fn activation(&mut self, a: Activation) -> Result<()> {
        let (tag, beta) = match a {
            Activation::Relu => (0, 0.0),
            Activation::Softplus { beta } => (1, beta),
            Activation::Identity => (2, 0.0),
            Activation::Sigmoid => (3, 0.0),
        };
        self.u8(tag)?;
        self.f64s(&[beta])
    }
    fn provenance(&mut self, p: Option<&FeatureProvenance>) -> Result<()> {
        match p {
            None => self.u8(0),
            Some(p) => {
                self.u8(1)?;
                self.u8(match p.ensemble {
                    EnsembleKind::IidGaussian => 0,
                    EnsembleKind::BlockOrthogonal => 1,
                })?;
                self.u64(p.stream.seed)?;
                self.u64(p.stream.stream_id)?;
                self.usize(p.drawn_rows)
            }
        }
    }
}

struct Reader<R: Read>(R);

/// Upper bound on element counts, to reject corrupt headers before allocating.
const MAX_ELEMENTS: u64 = 1 << 32;

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| malformed("count overflows usize"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, n: u64) -> Result<Vec<f64>> {
        if n > MAX_ELEMENTS {
            return Err(malformed(format!("implausible element count {n}")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.0.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| malformed("string is not UTF-8"))
    }
    fn vector(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()?;
        self.f64s(n)
    }
    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let n = (rows as u64)
            .checked_mul(cols as u64)
            .ok_or_else(|| malformed("matrix too large"))?;
        Ok(Matrix::from_vec(rows, cols, self.f64s(n)?)?)
    }
    fn activation(&mut self) -> Result<Activation> {
        let tag = self.u8()?;
        let beta = self.f64()?;
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::softplus(beta)?),
            2 => Ok(Activation::Identity),
            3 => Ok(Activation::Sigmoid),
            t => Err(malformed(format!("unknown activation tag {t}"))),
        }
    }
    fn optional<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<Option<T>> {
        match self.u8()? {
            0 => Ok(None),
            1 => f(self).map(Some),
            t => Err(malformed(format!("bad option flag {t}"))),
        }
    }
    fn provenance(&mut self) -> Result<Option<FeatureProvenance>> {
        self.optional(|r| {
            let ensemble = match r.u8()? {
                0 => EnsembleKind::IidGaussian,
                1 => EnsembleKind::BlockOrthogonal,
                t => return Err(malformed(format!("unknown ensemble tag {t}"))),
            };
            let seed = r.u64()?;
            let stream_id = r.u64()?;
            let drawn_rows = r.usize()?;
            Ok(FeatureProvenance {
                ensemble,
                stream: RngStream::new(seed, stream_id),
                drawn_rows,
            })
        })
    }
    fn header(&mut self, magic: &[u8; 4], expected: &'static str) -> Result<()> {
        if &self.bytes::<4>()? != magic {
            return Err(FormatError::BadMagic { expected });
        }
        match self.u32()? {
            FORMAT_VERSION => Ok(()),
            v => Err(FormatError::UnsupportedVersion(v)),
        }
    }
}

fn count(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| malformed("too many entries"))
}

/// Serialises `net` into the network container.
pub fn write_network(net: &NetworkSpec, out: impl Write) -> Result<()> {
    let mut w = Writer(out);
    w.0.write_all(NETWORK_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.usize(net.input_dim())?;
    w.u32(count(net.layers().len())?)?;
    for layer in net.layers() {
        match layer {
            Layer::Dense(l) => {
                w.u8(0)?;
                w.activation(l.activation())?;
                w.matrix(l.weight())?;
                w.vector(l.bias())?;
            }
            Layer::Mag(l) => {
                w.u8(1)?;
                w.activation(l.activation())?;
                w.matrix(l.weight())?;
                w.matrix(l.features())?;
                match l.bias() {
                    None => w.u8(0)?,
                    Some(b) => {
                        w.u8(1)?;
                        w.vector(b)?;
                    }
                }
                w.provenance(l.provenance())?;
            }
            Layer::Fused(l) => {
                w.u8(2)?;
                w.activation(l.feature_activation())?;
                w.activation(l.activation())?;
                w.matrix(l.features())?;
                w.matrix(l.weight())?;
                w.vector(l.bias())?;
                match l.concat_weight() {
                    None => w.u8(0)?,
                    Some(c) => {
                        w.u8(1)?;
                        w.matrix(c)?;
                    }
                }
                w.provenance(l.provenance())?;
            }
        }
    }
    w.u32(count(net.skips().len())?)?;
    for s in net.skips() {
        w.usize(s.at_layer)?;
        w.u8(match s.source {
            ConcatSource::OriginalInput => 0,
        })?;
    }
    w.u32(count(net.heads().len())?)?;
    for h in net.heads() {
        w.string(&h.name)?;
        w.usize(h.start)?;
        w.usize(h.len)?;
        match h.activation {
            HeadActivation::Elementwise(a) => {
                w.u8(0)?;
                w.activation(a)?;
            }
            HeadActivation::Softmax => w.u8(1)?,
        }
    }
    Ok(w.0.flush()?)
}

/// Parses a network container; topology is re-validated on load.
pub fn read_network(input: impl Read) -> Result<NetworkSpec> {
    let mut r = Reader(input);
    r.header(NETWORK_MAGIC, "network")?;
    let input_dim = r.usize()?;
    let n_layers = r.u32()?;
    let mut layers = Vec::new();
    for _ in 0..n_layers {
        let layer: Layer = match r.u8()? {
            0 => {
                let act = r.activation()?;
                let w = r.matrix()?;
                let b = r.vector()?;
                DenseLayer::from_parts(w, b, act)?.into()
            }
            1 => {
                let act = r.activation()?;
                let w = r.matrix()?;
                let g = r.matrix()?;
                let b = r.optional(|r| r.vector())?;
                let p = r.provenance()?;
                let layer = MagLayer::from_parts(w, g, act, b)?;
                match p {
                    Some(p) => layer.with_provenance(p),
                    None => layer,
                }
                .into()
            }
            2 => {
                let f = r.activation()?;
                let act = r.activation()?;
                let g = r.matrix()?;
                let w = r.matrix()?;
                let b = r.vector()?;
                let c = r.optional(|r| r.matrix())?;
                let p = r.provenance()?;
                FusedLayer::from_parts(g, f, w, b, c, act)?
                    .with_provenance(p)
                    .into()
            }
            t => return Err(malformed(format!("unknown layer kind {t}"))),
        };
        layers.push(layer);
    }
    let n_skips = r.u32()?;
    let mut skips = Vec::new();
    for _ in 0..n_skips {
        let at = r.usize()?;
        match r.u8()? {
            0 => skips.push(SkipConcat::input_at(at)),
            t => return Err(malformed(format!("unknown concat source {t}"))),
        }
    }
    let n_heads = r.u32()?;
    let mut heads = Vec::new();
    for _ in 0..n_heads {
        let name = r.string()?;
        let start = r.usize()?;
        let len = r.usize()?;
        let act = match r.u8()? {
            0 => HeadActivation::Elementwise(r.activation()?),
            1 => HeadActivation::Softmax,
            t => return Err(malformed(format!("unknown head activation {t}"))),
        };
        heads.push(Head::new(&name, start, len, act));
    }
    Ok(NetworkSpec::new(input_dim, layers, skips, heads)?)
}

pub fn save_network(net: &NetworkSpec, path: &Path) -> Result<()> {
    write_network(net, BufWriter::new(File::create(path)?))
}

pub fn load_network(path: &Path) -> Result<NetworkSpec> {
    read_network(BufReader::new(File::open(path)?))
}

/// Whether every layer with recorded provenance regenerates its stored features exactly.
pub fn verify_features(net: &NetworkSpec) -> Result<bool> {
    for layer in net.layers() {
        let (features, provenance) = match layer {
            Layer::Mag(l) => (l.features(), l.provenance()),
            Layer::Fused(l) => (l.features(), l.provenance()),
            Layer::Dense(_) => continue,
        };
        if let Some(p) = provenance {
            if &p.regenerate(features.rows(), features.cols())? != features {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

pub fn write_capture(ds: &CaptureDataset, out: impl Write) -> Result<()> {
    let mut w = Writer(out);
    w.0.write_all(CAPTURE_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    let p = ds.provenance();
    w.string(&p.network_id)?;
    w.usize(p.layer_index)?;
    w.string(&p.probe)?;
    w.matrix(ds.x())?;
    w.matrix(ds.y())?;
    Ok(w.0.flush()?)
}

pub fn read_capture(input: impl Read) -> Result<CaptureDataset> {
    let mut r = Reader(input);
    r.header(CAPTURE_MAGIC, "capture")?;
    let network_id = r.string()?;
    let layer_index = r.usize()?;
    let probe = r.string()?;
    let x = r.matrix()?;
    let y = r.matrix()?;
    Ok(CaptureDataset::new(
        x,
        y,
        CaptureProvenance {
            network_id,
            layer_index,
            probe,
        },
    )?)
}

pub fn save_capture(ds: &CaptureDataset, path: &Path) -> Result<()> {
    write_capture(ds, BufWriter::new(File::create(path)?))
}

pub fn load_capture(path: &Path) -> Result<CaptureDataset> {
    read_capture(BufReader::new(File::open(path)?))
}
