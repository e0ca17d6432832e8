//! Layer-wise kernel pools: indexed frozen search spaces with exact
//! nearest-neighbor search plus the encode/decode (lookup) operations.

use sha2::{Digest, Sha256};

use crate::error::{NwsError, Result};
use crate::tensor::{Float, Tensor};

/// One layer's search space: `n` indexed kernels of size k x k. Entries live
/// in a [`Tensor`] so the distillation stage can train them; once frozen the
/// values never change.
pub struct KernelPool {
    pub layer_id: usize,
    pub kernel_size: usize,
    pub n: usize,
    pub entries: Tensor,
    frozen: bool,
}

impl KernelPool {
    pub fn from_entries(
        layer_id: usize,
        kernel_size: usize,
        data: Vec<Float>,
        frozen: bool,
    ) -> Result<KernelPool> {
        let kk = kernel_size * kernel_size;
        if kk == 0 || data.is_empty() || data.len() % kk != 0 {
            return Err(NwsError::InvalidInput(format!(
                "pool for layer {}: {} values do not form whole {}x{} kernels",
                layer_id, data.len(), kernel_size, kernel_size
            )));
        }
        let n = data.len() / kk;
        let entries = Tensor::new(vec![n, kernel_size, kernel_size], data, !frozen)?;
        Ok(KernelPool {
            layer_id,
            kernel_size,
            n,
            entries,
            frozen,
        })
    }

    pub fn random<R: rand::Rng>(
        layer_id: usize,
        kernel_size: usize,
        n: usize,
        std: Float,
        rng: &mut R,
    ) -> KernelPool {
        let entries = Tensor::randn(vec![n, kernel_size, kernel_size], std, rng, true);
        KernelPool {
            layer_id,
            kernel_size,
            n,
            entries,
            frozen: false,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Freezes the pool: entries stop carrying gradient and any later
    /// mutation attempt is an error.
    pub fn freeze(&mut self) {
        self.entries = self.entries.detached();
        self.frozen = true;
    }

    pub fn ensure_unfrozen(&self) -> Result<()> {
        if self.frozen {
            Err(NwsError::FrozenPool {
                layer_id: self.layer_id,
            })
        } else {
            Ok(())
        }
    }

    pub fn entry_len(&self) -> usize {
        self.kernel_size * self.kernel_size
    }

    /// SHA-256 over the little-endian entry bytes; used for immutability
    /// checks and pool-set fingerprints.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for v in self.entries.data() {
            hasher.update((v as f32).to_le_bytes());
        }
        hasher.finalize().into()
    }
}

/// A layer's stored model: one pool index per kernel slot.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IndexVector {
    pub layer_id: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub indices: Vec<u32>,
}

impl IndexVector {
    pub fn new(layer_id: usize, d_in: usize, d_out: usize, indices: Vec<u32>) -> Result<IndexVector> {
        if indices.len() != d_in * d_out {
            return Err(NwsError::dim(
                "IndexVector",
                format!("{} indices (d_in {} * d_out {})", d_in * d_out, d_in, d_out),
                format!("{}", indices.len()),
            ));
        }
        Ok(IndexVector {
            layer_id,
            d_in,
            d_out,
            indices,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Selected kernels for one layer plus the indices that name them and the
/// summed squared distances between the temporary kernels and the selection.
pub struct SearchResult {
    pub kernels: Vec<Float>,
    pub indices: IndexVector,
    pub diff: Float,
}

/// Argmin over pool entries of squared L2 distance to `query`; ties broken
/// by lowest index. A query containing NaN is rejected rather than silently
/// mapping to index 0.
pub fn nearest(pool: &KernelPool, query: &[Float]) -> Result<(usize, Float)> {
    let entry_len = pool.entry_len();
    if query.len() != entry_len {
        return Err(NwsError::dim(
            "nearest",
            format!("{} values ({}x{} kernel)", entry_len, pool.kernel_size, pool.kernel_size),
            format!("{}", query.len()),
        ));
    }
    if query.iter().any(|v| v.is_nan()) {
        return Err(NwsError::InvalidInput(format!(
            "nearest: NaN in query kernel for layer {}",
            pool.layer_id
        )));
    }
    let inner = pool.entries.0.borrow();
    let entries = &inner.data;
    let mut best_idx = 0usize;
    let mut best_dist = Float::INFINITY;
    for i in 0..pool.n {
        let e = &entries[i * entry_len..(i + 1) * entry_len];
        let mut d: Float = 0.0;
        for j in 0..entry_len {
            let diff = query[j] - e[j];
            d += diff * diff;
        }
        if d < best_dist {
            best_dist = d;
            best_idx = i;
        }
    }
    Ok((best_idx, best_dist))
}

/// Per-kernel nearest-neighbor search of `temps` (flat [d_out, d_in, k, k])
/// against the pool. Returns copied kernel values, their index vector, and
/// the summed squared distances.
pub fn search_layer(
    pool: &KernelPool,
    temps: &[Float],
    d_in: usize,
    d_out: usize,
) -> Result<SearchResult> {
    let entry_len = pool.entry_len();
    let d = d_in * d_out;
    if temps.len() != d * entry_len {
        return Err(NwsError::dim(
            "search_layer",
            format!("{} values ({} kernels of {})", d * entry_len, d, entry_len),
            format!("{}", temps.len()),
        ));
    }
    let mut kernels = vec![0.0; temps.len()];
    let mut indices = Vec::with_capacity(d);
    let mut diff: Float = 0.0;
    {
        let inner = pool.entries.0.borrow();
        let entries = &inner.data;
        for i in 0..d {
            let q = &temps[i * entry_len..(i + 1) * entry_len];
            if q.iter().any(|v| v.is_nan()) {
                return Err(NwsError::InvalidInput(format!(
                    "search_layer: NaN in temporary kernel {} for layer {}",
                    i, pool.layer_id
                )));
            }
            let mut best_idx = 0usize;
            let mut best_dist = Float::INFINITY;
            for e in 0..pool.n {
                let ev = &entries[e * entry_len..(e + 1) * entry_len];
                let mut dist: Float = 0.0;
                for j in 0..entry_len {
                    let dv = q[j] - ev[j];
                    dist += dv * dv;
                }
                if dist < best_dist {
                    best_dist = dist;
                    best_idx = e;
                }
            }
            kernels[i * entry_len..(i + 1) * entry_len]
                .copy_from_slice(&entries[best_idx * entry_len..(best_idx + 1) * entry_len]);
            indices.push(best_idx as u32);
            diff += best_dist;
        }
    }
    Ok(SearchResult {
        kernels,
        indices: IndexVector::new(pool.layer_id, d_in, d_out, indices)?,
        diff,
    })
}

/// Pure lookup: maps an index vector back to the kernel block
/// [d_out, d_in, k, k] it names.
pub fn decode(pool: &KernelPool, c: &IndexVector) -> Result<Vec<Float>> {
    let entry_len = pool.entry_len();
    let inner = pool.entries.0.borrow();
    let entries = &inner.data;
    let mut out = vec![0.0; c.len() * entry_len];
    for (pos, &idx) in c.indices.iter().enumerate() {
        let idx = idx as usize;
        if idx >= pool.n {
            return Err(NwsError::CorruptModel {
                layer_id: c.layer_id,
                position: pos,
                index: idx,
                pool_size: pool.n,
            });
        }
        out[pos * entry_len..(pos + 1) * entry_len]
            .copy_from_slice(&entries[idx * entry_len..(idx + 1) * entry_len]);
    }
    Ok(out)
}

/// The index component of [`search_layer`]; named separately because the
/// save path calls it on the final temporary kernels.
pub fn encode(pool: &KernelPool, temps: &[Float], d_in: usize, d_out: usize) -> Result<IndexVector> {
    Ok(search_layer(pool, temps, d_in, d_out)?.indices)
}
