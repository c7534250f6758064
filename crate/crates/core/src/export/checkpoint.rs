//! `.bnas` checkpoints: a flat list of named tensors, little-endian, with
//! binarized kernels optionally stored as packed sign planes plus `Â`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ops::{OpKind, Slot};
use crate::supernet::{CellKind, Network};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"BNAS";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_SIGNS: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointMode {
    /// Every value as a 32-bit float.
    #[default]
    Full,
    /// Binarized kernels as one bit per weight plus their scalar `Â`.
    Bitpacked,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    /// Signs, `true` meaning +1.
    Signs(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<u32>,
    pub payload: Payload,
}

impl TensorRecord {
    pub fn f32(name: impl Into<String>, dims: Vec<u32>, values: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            dims,
            payload: Payload::F32(values),
        }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn header_bytes(&self) -> usize {
        4 + self.name.len() + 4 + 4 * self.dims.len() + 1
    }

    pub fn payload_bytes(&self) -> usize {
        match self.payload {
            Payload::F32(_) => 4 * self.numel(),
            Payload::Signs(_) => self.numel().div_ceil(8),
        }
    }

    fn values(&self) -> Result<&[f32]> {
        match &self.payload {
            Payload::F32(v) => Ok(v),
            Payload::Signs(_) => Err(Error::Format(format!("tensor {} holds signs, expected reals", self.name))),
        }
    }
}

/// Packs signs MSB-first; bit 1 means +1 and the tail of the last byte is zero.
pub fn pack_signs(signs: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; signs.len().div_ceil(8)];
    for (i, _) in signs.iter().enumerate().filter(|(_, &s)| s) {
        out[i / 8] |= 0x80 >> (i % 8);
    }
    out
}

pub fn unpack_signs(bytes: &[u8], count: usize) -> Result<Vec<bool>> {
    if bytes.len() != count.div_ceil(8) {
        return Err(Error::Format(format!("{} sign bytes for {count} weights", bytes.len())));
    }
    let used = count % 8;
    if used != 0 && bytes[bytes.len() - 1] & (0xff >> used) != 0 {
        return Err(Error::Format("non-zero padding bits in sign plane".into()));
    }
    Ok((0..count).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<TensorRecord>,
}

/// Byte accounting of a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SizeBreakdown {
    /// Magic, version, count and every per-tensor header.
    pub header: usize,
    /// Sign planes of binarized kernels.
    pub sign_payload: usize,
    /// Number of weights stored as signs.
    pub sign_weights: usize,
    /// Everything stored as 32-bit reals (including the `Â` scalars).
    pub real_payload: usize,
    pub total: usize,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn sizes(&self) -> SizeBreakdown {
        let mut s = SizeBreakdown {
            header: 12,
            ..SizeBreakdown::default()
        };
        for t in &self.tensors {
            s.header += t.header_bytes();
            match t.payload {
                Payload::F32(_) => s.real_payload += t.payload_bytes(),
                Payload::Signs(_) => {
                    s.sign_payload += t.payload_bytes();
                    s.sign_weights += t.numel();
                }
            }
        }
        s.total = s.header + s.sign_payload + s.real_payload;
        s
    }

    /// Sizes this checkpoint would have in bitpacked mode: every kernel `K`
    /// stored with a companion `K.amplitude` becomes `K.signs` plus `K.a_hat`.
    pub fn bitpacked_sizes(&self) -> SizeBreakdown {
        let kernels: Vec<&str> = self
            .tensors
            .iter()
            .filter_map(|t| t.name.strip_suffix(".amplitude"))
            .filter(|k| self.get(k).is_some())
            .collect();
        let mut out = Checkpoint::default();
        for t in &self.tensors {
            if kernels.contains(&t.name.as_str()) {
                out.tensors.push(TensorRecord {
                    name: format!("{}.signs", t.name),
                    dims: t.dims.clone(),
                    payload: Payload::Signs(vec![true; t.numel()]),
                });
                out.tensors.push(TensorRecord::f32(format!("{}.a_hat", t.name), vec![], vec![0.0]));
            } else if !t.name.strip_suffix(".amplitude").is_some_and(|k| kernels.contains(&k)) {
                out.tensors.push(t.clone());
            }
        }
        out.sizes()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.sizes().total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32_of(self.tensors.len(), "tensor count")?.to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&u32_of(t.name.len(), "name length")?.to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&u32_of(t.dims.len(), "rank")?.to_le_bytes());
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &t.payload {
                Payload::F32(v) => {
                    if v.len() != t.numel() {
                        return Err(invalid!("tensor {} has {} values for {} slots", t.name, v.len(), t.numel()));
                    }
                    out.push(DTYPE_F32);
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Payload::Signs(s) => {
                    if s.len() != t.numel() {
                        return Err(invalid!("tensor {} has {} signs for {} slots", t.name, s.len(), t.numel()));
                    }
                    out.push(DTYPE_SIGNS);
                    out.extend_from_slice(&pack_signs(s));
                }
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint. Any disagreement between declared lengths and the
    /// bytes present is an error, including trailing bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a .bnas checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
            let payload = match r.take(1)?[0] {
                DTYPE_F32 => {
                    let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
                    Payload::F32(
                        raw.chunks_exact(4)
                            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                            .collect(),
                    )
                }
                DTYPE_SIGNS => Payload::Signs(unpack_signs(r.take(numel.div_ceil(8))?, numel)?),
                other => return Err(Error::Format(format!("tensor {name} has unknown dtype {other}"))),
            };
            tensors.push(TensorRecord { name, dims, payload });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "truncated checkpoint: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| invalid!("{what} {n} does not fit in 32 bits"))
}

fn dims_of(shape: [usize; 4]) -> Vec<u32> {
    shape.iter().map(|&d| d as u32).collect()
}

fn op_code(op: OpKind) -> f32 {
    OpKind::ALL.iter().position(|&o| o == op).unwrap_or(0) as f32
}

fn arch_names(kind: CellKind, e: usize) -> (String, String) {
    let p = format!("arch.{}.{e}", kind.name());
    (format!("{p}.ops"), format!("{p}.alpha"))
}

/// Snapshot of a network. Binarized kernels are written as `X` plus their
/// amplitude `A` (`{name}.amplitude`) in full mode, or as `{name}.signs` plus
/// `{name}.a_hat` in bitpacked mode. The surviving ops and α of every edge
/// are stored under `arch.{kind}.{edge}.ops|alpha`.
pub fn checkpoint_of(net: &mut Network, mode: CheckpointMode) -> Result<Checkpoint> {
    let mut tensors = Vec::new();
    for kind in [CellKind::Normal, CellKind::Reduce] {
        for (e, edge) in net.arch.kind(kind).iter().enumerate() {
            let (ops, alpha) = arch_names(kind, e);
            let n = edge.ops.len() as u32;
            tensors.push(TensorRecord::f32(ops, vec![n], edge.ops.iter().map(|&o| op_code(o)).collect()));
            tensors.push(TensorRecord::f32(alpha, vec![n], edge.alpha.clone()));
        }
    }
    for s in net.collect_state(None)? {
        match s.slot {
            Slot::Dense(p) => tensors.push(TensorRecord::f32(s.name, dims_of(p.value.shape()), p.value.data().to_vec())),
            Slot::Buffer(b) => tensors.push(TensorRecord::f32(s.name, vec![b.len() as u32], b.clone())),
            Slot::Binarized(b) => {
                let k = &mut b.kernel;
                k.refresh();
                let dims = dims_of(k.weights().shape());
                match mode {
                    CheckpointMode::Full => {
                        let amp = k.amplitude().to_vec();
                        let [_, c, h, w] = k.amplitude_shape();
                        tensors.push(TensorRecord::f32(s.name.clone(), dims, k.weights().data().to_vec()));
                        tensors.push(TensorRecord::f32(
                            format!("{}.amplitude", s.name),
                            dims_of([1, c, h, w])[1..].to_vec(),
                            amp,
                        ));
                    }
                    CheckpointMode::Bitpacked => {
                        let signs = k.weights().data().iter().map(|&x| x >= 0.0).collect();
                        tensors.push(TensorRecord {
                            name: format!("{}.signs", s.name),
                            dims,
                            payload: Payload::Signs(signs),
                        });
                        tensors.push(TensorRecord::f32(format!("{}.a_hat", s.name), vec![], vec![k.a_hat()]));
                    }
                }
            }
        }
    }
    Ok(Checkpoint { tensors })
}

pub fn save_checkpoint(net: &mut Network, mode: CheckpointMode) -> Result<Vec<u8>> {
    checkpoint_of(net, mode)?.to_bytes()
}

/// Exact size of `save_checkpoint(net, mode)` without serializing it.
pub fn size_forecast(net: &mut Network, mode: CheckpointMode) -> Result<SizeBreakdown> {
    let mut s = SizeBreakdown {
        header: 12,
        ..SizeBreakdown::default()
    };
    let mut add = |name_len: usize, rank: usize, reals: usize, signs: usize| {
        s.header += 4 + name_len + 4 + 4 * rank + 1;
        s.real_payload += 4 * reals;
        s.sign_payload += signs.div_ceil(8);
        s.sign_weights += signs;
    };
    for kind in [CellKind::Normal, CellKind::Reduce] {
        for (e, edge) in net.arch.kind(kind).iter().enumerate() {
            let (ops, alpha) = arch_names(kind, e);
            add(ops.len(), 1, edge.ops.len(), 0);
            add(alpha.len(), 1, edge.ops.len(), 0);
        }
    }
    for slot in net.collect_state(None)? {
        let n = slot.name.len();
        match slot.slot {
            Slot::Dense(p) => add(n, 4, p.value.len(), 0),
            Slot::Buffer(b) => add(n, 1, b.len(), 0),
            Slot::Binarized(b) => {
                let w = b.kernel.weights().len();
                match mode {
                    CheckpointMode::Full => {
                        add(n, 4, w, 0);
                        add(n + ".amplitude".len(), 3, b.kernel.amplitude().len(), 0);
                    }
                    CheckpointMode::Bitpacked => {
                        add(n + ".signs".len(), 4, 0, w);
                        add(n + ".a_hat".len(), 0, 1, 0);
                    }
                }
            }
        }
    }
    s.total = s.header + s.sign_payload + s.real_payload;
    Ok(s)
}

fn take_reals<'c>(ck: &'c Checkpoint, name: &str, numel: usize) -> Result<&'c [f32]> {
    let t = ck
        .get(name)
        .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))?;
    let v = t.values()?;
    if v.len() != numel {
        return Err(Error::Format(format!("tensor {name} has {} values, expected {numel}", v.len())));
    }
    Ok(v)
}

/// Restores a checkpoint into `net`, which must have been built from the same
/// configuration (and genotype, for stand-alone networks). Ops that were
/// pruned before saving are pruned from `net` first.
pub fn restore_checkpoint(net: &mut Network, ck: &Checkpoint) -> Result<()> {
    for kind in [CellKind::Normal, CellKind::Reduce] {
        for e in 0..net.arch.kind(kind).len() {
            let (ops_name, alpha_name) = arch_names(kind, e);
            let Some(t) = ck.get(&ops_name) else {
                return Err(Error::Format(format!("checkpoint is missing tensor {ops_name}")));
            };
            let codes = t.values()?;
            let wanted = codes
                .iter()
                .map(|&c| {
                    OpKind::ALL
                        .get(c as usize)
                        .copied()
                        .filter(|_| c.fract() == 0.0 && c >= 0.0)
                        .ok_or_else(|| Error::Format(format!("bad op code {c} in {ops_name}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut i = 0;
            while i < net.arch.kind(kind)[e].ops.len() {
                if wanted.contains(&net.arch.kind(kind)[e].ops[i]) {
                    i += 1;
                } else {
                    net.prune(kind, e, i)?;
                }
            }
            if net.arch.kind(kind)[e].ops != wanted {
                return Err(Error::Format(format!(
                    "{} edge {e}: checkpoint ops do not match the network's candidates",
                    kind.name()
                )));
            }
            let alpha = take_reals(ck, &alpha_name, wanted.len())?.to_vec();
            let edges = match kind {
                CellKind::Normal => &mut net.arch.normal,
                CellKind::Reduce => &mut net.arch.reduce,
            };
            edges[e].alpha = alpha;
        }
    }
    let mut used = 2 * net.arch.len();
    for s in net.collect_state(None)? {
        match s.slot {
            Slot::Dense(p) => {
                let v = take_reals(ck, &s.name, p.value.len())?;
                p.value = Tensor::from_vec(p.value.shape(), v.to_vec())?;
                used += 1;
            }
            Slot::Buffer(b) => {
                let v = take_reals(ck, &s.name, b.len())?;
                b.copy_from_slice(v);
                used += 1;
            }
            Slot::Binarized(b) => {
                let k = &mut b.kernel;
                let shape = k.weights().shape();
                let signs_name = format!("{}.signs", s.name);
                if let Some(t) = ck.get(&signs_name) {
                    let Payload::Signs(signs) = &t.payload else {
                        return Err(Error::Format(format!("tensor {signs_name} should hold signs")));
                    };
                    if signs.len() != k.weights().len() {
                        return Err(Error::Format(format!("tensor {signs_name} has the wrong size")));
                    }
                    let a_hat = take_reals(ck, &format!("{}.a_hat", s.name), 1)?[0];
                    if !(a_hat >= 0.0 && a_hat.is_finite()) {
                        return Err(Error::Format(format!("{}.a_hat is not a valid amplitude", s.name)));
                    }
                    // X = Â·D reproduces both the signs and Â in either mode.
                    let x = signs.iter().map(|&p| if p { a_hat } else { -a_hat }).collect();
                    k.set_weights(Tensor::from_vec(shape, x)?)?;
                    let slice = k.amplitude().len();
                    k.set_amplitude(vec![a_hat; slice])?;
                } else {
                    let x = take_reals(ck, &s.name, k.weights().len())?;
                    k.set_weights(Tensor::from_vec(shape, x.to_vec())?)?;
                    let slice = k.amplitude().len();
                    let a = take_reals(ck, &format!("{}.amplitude", s.name), slice)?;
                    k.set_amplitude(a.to_vec())?;
                }
                used += 2;
            }
        }
    }
    if used != ck.tensors.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {} tensors but the network uses {used}",
            ck.tensors.len()
        )));
    }
    net.zero_grad();
    Ok(())
}

pub fn load_checkpoint(bytes: &[u8], net: &mut Network) -> Result<()> {
    restore_checkpoint(net, &Checkpoint::from_bytes(bytes)?)
}
