//! Binary artifacts: pool files ("NWSP") and task-model files ("NWSM").
//! Little-endian, versioned, trailing SHA-256 checksum, atomic writes.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use sha2::{Digest, Sha256};

use crate::analysis::{index_bits, IndexBitPolicy};
use crate::error::{NwsError, Result};
use crate::pool::{IndexVector, KernelPool};
use crate::tensor::Float;
use crate::til::{BnSnapshot, PoolSet, TaskModel};

pub const POOL_MAGIC: &[u8; 4] = b"NWSP";
pub const MODEL_MAGIC: &[u8; 4] = b"NWSM";
pub const FORMAT_VERSION: u16 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Writer {
        Writer { buf: Vec::new() }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn floats(&mut self, vals: &[Float]) {
        for &v in vals {
            self.f32(v as f32);
        }
    }
    /// Appends the checksum over everything so far and returns the buffer.
    fn finish(mut self) -> Vec<u8> {
        let digest: [u8; 32] = Sha256::digest(&self.buf).into();
        self.buf.extend_from_slice(&digest);
        self.buf
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
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.buf.len() {
            return Err(NwsError::Format(format!(
                "truncated file: need {} bytes at offset {}",
                len, self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.take(2)?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }
    fn floats(&mut self, count: usize) -> Result<Vec<Float>> {
        let raw = self.take(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| LittleEndian::read_f32(c) as Float)
            .collect())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Splits off and verifies the trailing checksum, then checks magic/version.
fn open_checked<'a>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Reader<'a>> {
    if bytes.len() < 38 {
        return Err(NwsError::Format("file too short".into()));
    }
    let (body, stored) = bytes.split_at(bytes.len() - 32);
    let digest: [u8; 32] = Sha256::digest(body).into();
    if digest != stored {
        return Err(NwsError::Checksum(
            "stored checksum does not match file contents".into(),
        ));
    }
    let mut r = Reader::new(body);
    let got = r.take(4)?;
    if got != magic {
        return Err(NwsError::Format(format!(
            "bad magic {:02x?}, expected {:02x?}",
            got, magic
        )));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(NwsError::Format(format!(
            "unsupported format version {} (this build reads {})",
            version, FORMAT_VERSION
        )));
    }
    Ok(r)
}

/// Serializes frozen pools with the architecture fingerprint they belong to.
pub fn save_pools(path: &Path, pool_set: &PoolSet) -> Result<()> {
    pool_set.ensure_frozen()?;
    let mut w = Writer::new();
    w.bytes(POOL_MAGIC);
    w.u16(FORMAT_VERSION);
    w.bytes(&pool_set.arch_fingerprint);
    w.u32(pool_set.pools.len() as u32);
    for pool in &pool_set.pools {
        w.u32(pool.layer_id as u32);
        w.u16(pool.kernel_size as u16);
        w.u32(pool.n as u32);
        w.floats(&pool.entries.data());
    }
    write_atomic(path, &w.finish())
}

pub fn load_pools(path: &Path) -> Result<PoolSet> {
    let bytes = fs::read(path)?;
    let mut r = open_checked(&bytes, POOL_MAGIC)?;
    let mut arch_fingerprint = [0u8; 32];
    arch_fingerprint.copy_from_slice(r.take(32)?);
    let count = r.u32()? as usize;
    let mut pools = Vec::with_capacity(count);
    for _ in 0..count {
        let layer_id = r.u32()? as usize;
        let k = r.u16()? as usize;
        let n = r.u32()? as usize;
        if k == 0 || n == 0 {
            return Err(NwsError::Format(format!(
                "pool for layer {} has zero size",
                layer_id
            )));
        }
        let entries = r.floats(n * k * k)?;
        let pool = KernelPool::from_entries(layer_id, k, entries, true)?;
        if pool.n != n {
            return Err(NwsError::Format(format!(
                "pool for layer {}: declared {} kernels, payload holds {}",
                layer_id, n, pool.n
            )));
        }
        pools.push(pool);
    }
    Ok(PoolSet::new(pools, arch_fingerprint))
}

/// LSB-first bit packing of indices at a fixed width.
pub fn pack_indices(indices: &[u32], bits: u32) -> Vec<u8> {
    let total = indices.len() * bits as usize;
    let mut out = vec![0u8; (total + 7) / 8];
    let mut pos = 0usize;
    for &v in indices {
        for b in 0..bits {
            if (v >> b) & 1 == 1 {
                out[pos / 8] |= 1 << (pos % 8);
            }
            pos += 1;
        }
    }
    out
}

pub fn unpack_indices(packed: &[u8], bits: u32, count: usize) -> Result<Vec<u32>> {
    let need = (count * bits as usize + 7) / 8;
    if packed.len() < need {
        return Err(NwsError::Format(format!(
            "packed index block is {} bytes, need {}",
            packed.len(),
            need
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut pos = 0usize;
    for _ in 0..count {
        let mut v = 0u32;
        for b in 0..bits {
            if (packed[pos / 8] >> (pos % 8)) & 1 == 1 {
                v |= 1 << b;
            }
            pos += 1;
        }
        out.push(v);
    }
    Ok(out)
}

/// Byte cost of everything in a model file that is not index payload or
/// batchnorm floats: headers, per-layer shape fields, and the checksum.
pub fn model_metadata_overhead(model: &TaskModel) -> u64 {
    let fixed = 4 + 2 + 4 + 32 + 32 + 4 + 4 + 4; // magic..layer_count
    let per_layer = 4 + 4 + 4 + 4 + 1 + 4; // layer_id, d_in, d_out, n, bits, len
    let per_bn = 4; // channel count
    (fixed + model.index_vectors.len() * per_layer + 4 + model.bn.len() * per_bn + 32) as u64
}

/// Serializes a task model: bit-packed indices per layer plus batchnorm
/// snapshots. The metadata overhead in bytes is itemized in the header.
pub fn save_model(path: &Path, model: &TaskModel, pool_set: &PoolSet) -> Result<()> {
    model.ensure_compatible(pool_set)?;
    let mut w = Writer::new();
    w.bytes(MODEL_MAGIC);
    w.u16(FORMAT_VERSION);
    w.u32(model_metadata_overhead(model) as u32);
    w.bytes(&model.arch_fingerprint);
    w.bytes(&model.pool_fingerprint);
    w.u32(model.task_id as u32);
    w.u32(model.num_classes as u32);
    w.u32(model.index_vectors.len() as u32);
    for (c, pool) in model.index_vectors.iter().zip(&pool_set.pools) {
        let bits = index_bits(pool.n, IndexBitPolicy::PackedMinimal);
        let packed = pack_indices(&c.indices, bits);
        w.u32(c.layer_id as u32);
        w.u32(c.d_in as u32);
        w.u32(c.d_out as u32);
        w.u32(pool.n as u32);
        w.u8(bits as u8);
        w.u32(packed.len() as u32);
        w.bytes(&packed);
    }
    w.u32(model.bn.len() as u32);
    for snap in &model.bn {
        w.u32(snap.channels as u32);
        w.floats(&snap.running_mean);
        w.floats(&snap.running_var);
        w.floats(&snap.gamma);
        w.floats(&snap.beta);
    }
    write_atomic(path, &w.finish())
}

pub fn load_model(path: &Path) -> Result<TaskModel> {
    let bytes = fs::read(path)?;
    let mut r = open_checked(&bytes, MODEL_MAGIC)?;
    let _overhead = r.u32()?;
    let mut arch_fingerprint = [0u8; 32];
    arch_fingerprint.copy_from_slice(r.take(32)?);
    let mut pool_fingerprint = [0u8; 32];
    pool_fingerprint.copy_from_slice(r.take(32)?);
    let task_id = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let layer_count = r.u32()? as usize;
    let mut index_vectors = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let layer_id = r.u32()? as usize;
        let d_in = r.u32()? as usize;
        let d_out = r.u32()? as usize;
        let n = r.u32()? as usize;
        let bits = r.u8()? as u32;
        let packed_len = r.u32()? as usize;
        let packed = r.take(packed_len)?;
        let indices = unpack_indices(packed, bits, d_in * d_out)?;
        for (pos, &i) in indices.iter().enumerate() {
            if i as usize >= n {
                return Err(NwsError::CorruptModel {
                    layer_id,
                    position: pos,
                    index: i as usize,
                    pool_size: n,
                });
            }
        }
        index_vectors.push(IndexVector {
            layer_id,
            d_in,
            d_out,
            indices,
        });
    }
    let bn_count = r.u32()? as usize;
    let mut bn = Vec::with_capacity(bn_count);
    for _ in 0..bn_count {
        let channels = r.u32()? as usize;
        bn.push(BnSnapshot {
            channels,
            running_mean: r.floats(channels)?,
            running_var: r.floats(channels)?,
            gamma: r.floats(channels)?,
            beta: r.floats(channels)?,
        });
    }
    Ok(TaskModel {
        task_id,
        num_classes,
        index_vectors,
        bn,
        arch_fingerprint,
        pool_fingerprint,
    })
}
