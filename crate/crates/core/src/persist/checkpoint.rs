//! `GLHG` checkpoint files.
//!
//! Layout: magic `GLHG`, `u32` version, then sections. Every section is a
//! 4-byte tag, a `u32` payload length, the payload and a CRC32 of the payload.
//! All integers and reals are little-endian; tensor values are stored as f32.
//!
//! | tag    | payload |
//! |--------|---------|
//! | `ARCH` | six `u32` scale fields, three `u8` variant flags |
//! | `CONF` | `u32` length + UTF-8 config hash |
//! | `TENS` | `u32` count, then per tensor: `u32` name length, name, `u8` dtype (0 = f32), `u8` rank, `u32` dims, values |
//! | `ADAM` | optional: lr, beta1, beta2, eps as f64, `u64` step, then m and v of every tensor in `TENS` order |

use std::path::Path;

use crate::autodiff::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::model::{ArchitectureScale, ModelVariant, ModelWeights};
use crate::persist::atomic::{read_file, write_atomic};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GLHG";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub weights: ModelWeights<T>,
    pub adam: Option<AdamState<T>>,
    pub config_hash: String,
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn put_values<T: Scalar>(buf: &mut Vec<u8>, values: &[T]) {
    for v in values {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint<T: Scalar>(w: &ModelWeights<T>, adam: Option<&AdamState<T>>, config_hash: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());

    let s = w.scale;
    let mut arch = Vec::new();
    for v in [s.input_size, s.input_channels, s.n_blocks, s.base_channels, s.embedding_dim, s.n_classes] {
        arch.extend_from_slice(&(v as u32).to_le_bytes());
    }
    arch.extend([w.variant.personalized, w.variant.domain_head, w.variant.skip_connections].map(u8::from));
    section(&mut out, b"ARCH", &arch);

    let mut conf = Vec::new();
    put_str(&mut conf, config_hash);
    section(&mut out, b"CONF", &conf);

    let mut tens = Vec::new();
    tens.extend_from_slice(&(w.store.len() as u32).to_le_bytes());
    for (_, p) in w.store.iter() {
        put_str(&mut tens, &p.name);
        tens.push(DTYPE_F32);
        tens.push(p.tensor.rank() as u8);
        for &d in p.tensor.shape() {
            tens.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_values(&mut tens, p.tensor.data());
    }
    section(&mut out, b"TENS", &tens);

    if let Some(adam) = adam {
        let mut buf = Vec::new();
        let c = adam.config;
        for v in [c.lr, c.beta1, c.beta2, c.eps] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&adam.step_count().to_le_bytes());
        let (m, v) = adam.moments();
        for (mi, vi) in m.iter().zip(v) {
            put_values(&mut buf, mi);
            put_values(&mut buf, vi);
        }
        section(&mut out, b"ADAM", &buf);
    }
    out
}

/// Bounds-checked little-endian reader that reports absolute file offsets.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Format { offset: (self.base + self.pos) as u64, detail: detail.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let at = self.pos;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format { offset: (self.base + at) as u64, detail: format!("{what} is not UTF-8") })
    }

    fn values<T: Scalar>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.err("size overflow"))?, what)?;
        Ok(raw.chunks_exact(4).map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)).collect())
    }

    fn done(&self, what: &str) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} unexpected trailing bytes in {what}", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0, base: 0 };
    if r.take(4, "magic").ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Format { offset: 0, detail: "not a checkpoint (bad magic)".into() });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 4,
            detail: format!("checkpoint version {version} is not supported by this reader (expects {CHECKPOINT_VERSION})"),
        });
    }

    let mut sections: Vec<([u8; 4], usize, &[u8])> = Vec::new();
    while r.pos < bytes.len() {
        let start = r.pos;
        let tag: [u8; 4] = r.take(4, "section tag")?.try_into().expect("4 bytes");
        let len = r.u32("section length")? as usize;
        let payload_at = r.pos;
        let payload = r.take(len, "section payload")?;
        let crc = r.u32("section checksum")?;
        if crc32fast::hash(payload) != crc {
            return Err(Error::Format {
                offset: start as u64,
                detail: format!("checksum mismatch in section {}", String::from_utf8_lossy(&tag)),
            });
        }
        sections.push((tag, payload_at, payload));
    }
    let find = |tag: &[u8; 4]| sections.iter().find(|s| &s.0 == tag).map(|&(_, at, p)| Reader { bytes: p, pos: 0, base: at });
    let missing = |tag: &str| Error::Format { offset: bytes.len() as u64, detail: format!("missing {tag} section") };

    let mut a = find(b"ARCH").ok_or_else(|| missing("ARCH"))?;
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = a.u32("architecture")? as usize;
    }
    let scale = ArchitectureScale {
        input_size: dims[0],
        input_channels: dims[1],
        n_blocks: dims[2],
        base_channels: dims[3],
        embedding_dim: dims[4],
        n_classes: dims[5],
    };
    let variant = ModelVariant {
        personalized: a.u8("variant")? != 0,
        domain_head: a.u8("variant")? != 0,
        skip_connections: a.u8("variant")? != 0,
    };
    a.done("ARCH")?;
    let mut weights = ModelWeights::<T>::zeroed(scale, variant)
        .map_err(|e| Error::Format { offset: a.base as u64, detail: format!("invalid architecture: {e}") })?;

    let mut c = find(b"CONF").ok_or_else(|| missing("CONF"))?;
    let config_hash = c.string("config hash")?;
    c.done("CONF")?;

    let mut t = find(b"TENS").ok_or_else(|| missing("TENS"))?;
    let count = t.u32("tensor count")? as usize;
    if count != weights.store.len() {
        return Err(t.err(format!("checkpoint holds {count} tensors, architecture needs {}", weights.store.len())));
    }
    let mut seen = vec![false; count];
    let mut order = Vec::with_capacity(count);
    for _ in 0..count {
        let name = t.string("tensor name")?;
        let id = weights.store.id(&name).ok_or_else(|| t.err(format!("unknown tensor `{name}`")))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(t.err(format!("tensor `{name}` appears twice")));
        }
        let dtype = t.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(t.err(format!("unsupported dtype code {dtype}")));
        }
        let rank = t.u8("rank")? as usize;
        let shape = (0..rank).map(|_| t.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let p = weights.store.get_mut(id);
        if shape != p.tensor.shape() {
            return Err(t.err(format!("tensor `{name}` has shape {shape:?}, expected {:?}", p.tensor.shape())));
        }
        let values = t.values::<T>(p.tensor.len(), "tensor values")?;
        p.tensor.data_mut().copy_from_slice(&values);
        order.push(id);
    }
    t.done("TENS")?;

    let adam = match find(b"ADAM") {
        None => None,
        Some(mut a) => {
            let config = AdamConfig { lr: a.f64("adam")?, beta1: a.f64("adam")?, beta2: a.f64("adam")?, eps: a.f64("adam")? };
            let step = a.u64("adam step")?;
            let mut m = vec![Vec::new(); count];
            let mut v = vec![Vec::new(); count];
            for id in &order {
                let n = weights.store.tensor(*id).len();
                m[id.index()] = a.values::<T>(n, "adam moments")?;
                v[id.index()] = a.values::<T>(n, "adam moments")?;
            }
            a.done("ADAM")?;
            Some(AdamState::from_parts(config, step, m, v))
        }
    };
    Ok(Checkpoint { weights, adam, config_hash })
}

pub fn save_checkpoint<T: Scalar>(path: &Path, w: &ModelWeights<T>, adam: Option<&AdamState<T>>, config_hash: &str) -> Result<()> {
    write_atomic(path, &encode_checkpoint(w, adam, config_hash))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    decode_checkpoint(&read_file(path)?)
}

/// Loads a checkpoint and refuses it when its config hash differs from
/// `expected`, unless `force` is set.
pub fn load_checkpoint_for<T: Scalar>(path: &Path, expected: &str, force: bool) -> Result<Checkpoint<T>> {
    let ck = load_checkpoint(path)?;
    if ck.config_hash != expected {
        if !force {
            return Err(Error::ConfigHashMismatch { expected: expected.into(), found: ck.config_hash });
        }
        log::warn!("loading {} despite config hash mismatch", path.display());
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelWeights<f32> {
        let scale = ArchitectureScale { input_size: 8, n_blocks: 2, base_channels: 2, embedding_dim: 8, ..ArchitectureScale::desk() };
        crate::model::build_model(scale, ModelVariant::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let w = tiny();
        let bytes = encode_checkpoint(&w, None, "abc");
        let ck = decode_checkpoint::<f32>(&bytes).unwrap();
        assert!(ck.weights.store.bit_identical(&w.store));
        assert_eq!(ck.config_hash, "abc");
        assert!(ck.adam.is_none());
    }

    #[test]
    fn corruption_is_detected() {
        let w = tiny();
        let mut bytes = encode_checkpoint(&w, None, "abc");
        let n = bytes.len();
        bytes[n - 10] ^= 0x40;
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::Format { .. })));
        let good = encode_checkpoint(&w, None, "abc");
        assert!(matches!(decode_checkpoint::<f32>(&good[..good.len() - 3]), Err(Error::Format { .. })));
        let mut v2 = good.clone();
        v2[4] = 2;
        match decode_checkpoint::<f32>(&v2) {
            Err(Error::Format { offset: 4, detail }) => assert!(detail.contains("version 2")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_checkpoint::<f32>(b"NOPE"), Err(Error::Format { offset: 0, .. })));
    }
}
