//! Versioned binary checkpoints.
//!
//! ```text
//! magic (8 bytes) | version u32 | entry count u32 | entries... | crc32 u32
//! entry: kind u8 | name length u16 | name utf8 | body
//! ```
//!
//! All integers and floats are little endian.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::config::Activation;
use crate::error::Result;

use super::{AdamState, BatchNorm, Dense, NetworkParameters, NetworkSpec};

pub const MAGIC: &[u8; 8] = b"SATPCKPT";
pub const FORMAT_VERSION: u32 = 1;

const KIND_NETWORK: u8 = 1;
const KIND_ADAM: u8 = 2;
const KIND_VECTOR: u8 = 3;
const KIND_COUNTERS: u8 = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found}, this build reads {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint has no entry `{0}`")]
    MissingEntry(String),
    #[error("network `{name}` in checkpoint has layout {found}, expected {expected}")]
    ShapeMismatch {
        name: String,
        expected: String,
        found: String,
    },
}

type CkResult<T> = std::result::Result<T, CheckpointError>;

/// Named networks, optimizer states and plain vectors in one file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub networks: BTreeMap<String, NetworkParameters>,
    pub optimizers: BTreeMap<String, AdamState>,
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub counters: BTreeMap<String, Vec<u64>>,
}

fn describe(spec: &NetworkSpec) -> String {
    format!(
        "{:?} {:?}{}",
        spec.layer_sizes,
        spec.hidden_activation,
        if spec.batch_norm { " +bn" } else { "" }
    )
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// The named network, required to match `expected` exactly in layout.
    pub fn network(&self, name: &str, expected: &NetworkSpec) -> CkResult<&NetworkParameters> {
        let net = self
            .networks
            .get(name)
            .ok_or_else(|| CheckpointError::MissingEntry(name.to_string()))?;
        if net.spec() != expected {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: describe(expected),
                found: describe(net.spec()),
            });
        }
        Ok(net)
    }

    pub fn vector(&self, name: &str) -> CkResult<&[f64]> {
        self.vectors
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| CheckpointError::MissingEntry(name.to_string()))
    }

    pub fn counter(&self, name: &str) -> CkResult<&[u64]> {
        self.counters
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| CheckpointError::MissingEntry(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        let count = self.networks.len() + self.optimizers.len() + self.vectors.len() + self.counters.len();
        w.u32(count as u32);
        for (name, net) in &self.networks {
            w.header(KIND_NETWORK, name);
            let spec = net.spec();
            w.u8(match spec.hidden_activation {
                Activation::PenalizedTanh => 0,
                Activation::LeakyRelu => 1,
            });
            w.u8(spec.batch_norm as u8);
            w.u64(net.version());
            w.u32(spec.layer_sizes.len() as u32);
            for &s in &spec.layer_sizes {
                w.u64(s as u64);
            }
            for t in net.trainable() {
                w.f64s(t);
            }
            for bn in net.norms() {
                w.f64s(bn.running_mean.as_slice());
                w.f64s(bn.running_var.as_slice());
            }
        }
        for (name, st) in &self.optimizers {
            w.header(KIND_ADAM, name);
            for v in [st.learning_rate, st.beta1, st.beta2, st.epsilon] {
                w.f64(v);
            }
            w.u64(st.step);
            w.u32(st.first.len() as u32);
            for (m, v) in st.first.iter().zip(&st.second) {
                w.u64(m.len() as u64);
                w.f64s(m);
                w.f64s(v);
            }
        }
        for (name, v) in &self.vectors {
            w.header(KIND_VECTOR, name);
            w.u64(v.len() as u64);
            w.f64s(v);
        }
        for (name, v) in &self.counters {
            w.header(KIND_COUNTERS, name);
            w.u64(v.len() as u64);
            for x in v {
                w.u64(*x);
            }
        }
        let crc = crc32fast::hash(&w.buf);
        w.u32(crc);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> CkResult<Self> {
        if bytes.len() < MAGIC.len() + 4 + 4 + 4 {
            return Err(CheckpointError::Truncated);
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let mut r = Reader {
            buf: &body[MAGIC.len()..],
        };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let count = r.u32()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let kind = r.u8()?;
            let name = r.name()?;
            let duplicate = match kind {
                KIND_NETWORK => ck.networks.insert(name.clone(), r.network()?).is_some(),
                KIND_ADAM => ck.optimizers.insert(name.clone(), r.adam()?).is_some(),
                KIND_VECTOR => {
                    let n = r.len(8)?;
                    ck.vectors.insert(name.clone(), r.f64s(n)?).is_some()
                }
                KIND_COUNTERS => {
                    let n = r.len(8)?;
                    let v = (0..n).map(|_| r.u64()).collect::<CkResult<Vec<_>>>()?;
                    ck.counters.insert(name.clone(), v).is_some()
                }
                other => return Err(CheckpointError::Malformed(format!("unknown entry kind {other}"))),
            };
            if duplicate {
                return Err(CheckpointError::Malformed(format!("duplicate entry `{name}`")));
            }
        }
        if !r.buf.is_empty() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", r.buf.len())));
        }
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => crate::error::Error::MissingArtifact(path.to_path_buf()),
            _ => e.into(),
        })?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }
    fn header(&mut self, kind: u8, name: &str) {
        self.u8(kind);
        self.u16(name.len() as u16);
        self.bytes(name.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CkResult<&'a [u8]> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u8(&mut self) -> CkResult<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> CkResult<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> CkResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> CkResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> CkResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// A length field whose elements occupy at least `elem` bytes each.
    fn len(&mut self, elem: usize) -> CkResult<usize> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| CheckpointError::Truncated)?;
        if n.checked_mul(elem).is_none_or(|b| b > self.buf.len()) {
            return Err(CheckpointError::Truncated);
        }
        Ok(n)
    }
    fn f64s(&mut self, n: usize) -> CkResult<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn name(&mut self) -> CkResult<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Malformed("entry name is not utf-8".into()))
    }

    fn network(&mut self) -> CkResult<NetworkParameters> {
        let activation = match self.u8()? {
            0 => Activation::PenalizedTanh,
            1 => Activation::LeakyRelu,
            a => return Err(CheckpointError::Malformed(format!("unknown activation {a}"))),
        };
        let batch_norm = match self.u8()? {
            0 => false,
            1 => true,
            b => return Err(CheckpointError::Malformed(format!("bad batch norm flag {b}"))),
        };
        let version = self.u64()?;
        let layers = self.u32()? as usize;
        if layers.saturating_mul(8) > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let sizes = (0..layers)
            .map(|_| self.u64().map(|s| usize::try_from(s).unwrap_or(usize::MAX)))
            .collect::<CkResult<Vec<_>>>()?;
        let spec = NetworkSpec {
            layer_sizes: sizes,
            hidden_activation: activation,
            batch_norm,
        };
        spec.validate().map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let hidden = spec.num_hidden();
        // bound the total before allocating anything
        let mut total: usize = 0;
        for (i, p) in spec.layer_sizes.windows(2).enumerate() {
            let extra = if batch_norm && i < hidden { 5 } else { 1 };
            let per = p[0]
                .checked_mul(p[1])
                .and_then(|w| w.checked_add(p[1].checked_mul(extra)?))
                .ok_or(CheckpointError::Truncated)?;
            total = total.checked_add(per).ok_or(CheckpointError::Truncated)?;
        }
        if total.checked_mul(8).is_none_or(|b| b > self.buf.len()) {
            return Err(CheckpointError::Truncated);
        }
        let mut dense = Vec::with_capacity(spec.layer_sizes.len() - 1);
        let mut norms = Vec::new();
        for (i, p) in spec.layer_sizes.windows(2).enumerate() {
            let wlen = p[0] * p[1];
            let weight = DMatrix::from_vec(p[0], p[1], self.f64s(wlen)?);
            let bias = DVector::from_vec(self.f64s(p[1])?);
            dense.push(Dense { weight, bias });
            if batch_norm && i < hidden {
                let gamma = DVector::from_vec(self.f64s(p[1])?);
                let beta = DVector::from_vec(self.f64s(p[1])?);
                norms.push(BatchNorm {
                    gamma,
                    beta,
                    running_mean: DVector::zeros(p[1]),
                    running_var: DVector::zeros(p[1]),
                });
            }
        }
        for bn in norms.iter_mut() {
            let w = bn.gamma.len();
            bn.running_mean = DVector::from_vec(self.f64s(w)?);
            bn.running_var = DVector::from_vec(self.f64s(w)?);
            if bn.running_var.iter().any(|v| !(*v >= 0.0)) {
                return Err(CheckpointError::Malformed("negative running variance".into()));
            }
        }
        Ok(NetworkParameters {
            spec,
            dense,
            norms,
            version,
        })
    }

    fn adam(&mut self) -> CkResult<AdamState> {
        let learning_rate = self.f64()?;
        let beta1 = self.f64()?;
        let beta2 = self.f64()?;
        let epsilon = self.f64()?;
        let step = self.u64()?;
        let tensors = self.u32()? as usize;
        if tensors.saturating_mul(8) > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let mut first = Vec::with_capacity(tensors);
        let mut second = Vec::with_capacity(tensors);
        for _ in 0..tensors {
            let n = self.len(16)?;
            first.push(self.f64s(n)?);
            second.push(self.f64s(n)?);
        }
        Ok(AdamState {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step,
            first,
            second,
        })
    }
}
