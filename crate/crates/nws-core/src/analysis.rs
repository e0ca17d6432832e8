//! Post-hoc analysis of stored task models: kernel usage, selection-rate
//! histograms, layer sparsity, and memory accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arch::MemoryProfile;
use crate::til::{PoolSet, TaskModel};

pub const FLOAT_BYTES: u64 = 4;
/// running mean, running var, gamma, beta
const BN_FLOATS_PER_CHANNEL: u64 = 4;
/// task id, class count, layer count, arch/pool fingerprints
const TASK_HEADER_BYTES: u64 = 12 + 64;

/// Selection counts for one searchable layer of one task model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerUsage {
    pub layer_id: usize,
    /// Number of kernel slots in the layer (d^l = d_in * d_out).
    pub slots: usize,
    pub pool_size: usize,
    /// pool index -> times selected; only selected indices appear.
    pub histogram: BTreeMap<u32, usize>,
}

impl LayerUsage {
    pub fn distinct(&self) -> usize {
        self.histogram.len()
    }
}

pub fn layer_usage(model: &TaskModel, pool_set: &PoolSet) -> Vec<LayerUsage> {
    model
        .index_vectors
        .iter()
        .zip(&pool_set.pools)
        .map(|(c, pool)| {
            let mut histogram = BTreeMap::new();
            for &i in &c.indices {
                *histogram.entry(i).or_insert(0) += 1;
            }
            LayerUsage {
                layer_id: c.layer_id,
                slots: c.indices.len(),
                pool_size: pool.n,
                histogram,
            }
        })
        .collect()
}

/// Kernel usage rate per layer: distinct selected kernels over pool size.
pub fn kur(model: &TaskModel, pool_set: &PoolSet) -> Vec<f64> {
    layer_usage(model, pool_set)
        .iter()
        .map(|u| u.distinct() as f64 / u.pool_size as f64)
        .collect()
}

/// Layer sparsity: summed selection rate of kernels whose count falls below
/// sqrt(d^l), where d^l is the layer's slot count.
pub fn layer_sparsity(model: &TaskModel) -> Vec<f64> {
    model
        .index_vectors
        .iter()
        .map(|c| {
            let d = c.indices.len();
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for &i in &c.indices {
                *counts.entry(i).or_insert(0) += 1;
            }
            let threshold = (d as f64).sqrt();
            counts
                .values()
                .filter(|&&h| (h as f64) < threshold)
                .map(|&h| h as f64 / d as f64)
                .sum()
        })
        .collect()
}

/// Per-layer (index, selection rate) rows, sorted by pool index.
pub fn selection_rate_hist(model: &TaskModel, pool_set: &PoolSet) -> Vec<Vec<(u32, f64)>> {
    layer_usage(model, pool_set)
        .iter()
        .map(|u| {
            u.histogram
                .iter()
                .map(|(&i, &h)| (i, h as f64 / u.slots as f64))
                .collect()
        })
        .collect()
}

/// CSV export of the selection-rate histogram:
/// `layer_id,index,count,selection_rate` rows.
pub fn selection_rate_csv(model: &TaskModel, pool_set: &PoolSet) -> String {
    let mut out = String::from("layer_id,index,count,selection_rate\n");
    for usage in layer_usage(model, pool_set) {
        for (&i, &h) in &usage.histogram {
            out.push_str(&format!(
                "{},{},{},{}\n",
                usage.layer_id,
                i,
                h,
                h as f64 / usage.slots as f64
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexBitPolicy {
    /// ceil(log2 n) bits per index, bit-packed.
    PackedMinimal,
    /// Two aligned bytes per index.
    Aligned16,
}

/// Bits needed to address a pool of `n` kernels under the policy.
pub fn index_bits(n: usize, policy: IndexBitPolicy) -> u32 {
    match policy {
        IndexBitPolicy::PackedMinimal => {
            if n <= 1 {
                1
            } else {
                (usize::BITS - (n - 1).leading_zeros()).max(1)
            }
        }
        IndexBitPolicy::Aligned16 => 16,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerMemory {
    pub kernel_size: usize,
    pub slots: u64,
    pub pool_size: usize,
    pub index_bits: u32,
    pub index_bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryReport {
    pub profile: String,
    pub policy: IndexBitPolicy,
    pub num_tasks: usize,
    /// Searchable-layer breakdown for the first task's class count.
    pub layers: Vec<LayerMemory>,
    /// Index + batchnorm + header bytes for each task.
    pub per_task_bytes: Vec<u64>,
    pub per_task_total_bytes: u64,
    /// One-off shared cost: the frozen pools themselves.
    pub assist_bytes: u64,
    pub total_bytes: u64,
    pub per_task_mb: Vec<f64>,
    pub assist_mb: f64,
    pub total_mb: f64,
}

fn mb(bytes: u64) -> f64 {
    bytes as f64 / 1_000_000.0
}

/// Storage accounting for `class_counts.len()` sequential tasks over the
/// given architecture profile. Per-task cost is packed kernel indices plus
/// batchnorm snapshots plus a fixed header; the pools are a shared one-off.
pub fn memory_report(
    profile: &MemoryProfile,
    class_counts: &[usize],
    policy: IndexBitPolicy,
) -> MemoryReport {
    let bn_bytes: u64 = profile
        .bn_channels
        .iter()
        .map(|&c| c as u64 * BN_FLOATS_PER_CHANNEL * FLOAT_BYTES)
        .sum();
    let mut per_task_bytes = Vec::new();
    let mut first_layers = Vec::new();
    for (t, &v) in class_counts.iter().enumerate() {
        let mut index_bytes = 0u64;
        for conv in &profile.convs {
            let slots = conv.kernel_count(v) as u64;
            let bits = index_bits(conv.pool_size, policy);
            let bytes = (slots * bits as u64 + 7) / 8;
            index_bytes += bytes;
            if t == 0 {
                first_layers.push(LayerMemory {
                    kernel_size: conv.kernel_size,
                    slots,
                    pool_size: conv.pool_size,
                    index_bits: bits,
                    index_bytes: bytes,
                });
            }
        }
        per_task_bytes.push(index_bytes + bn_bytes + TASK_HEADER_BYTES);
    }
    let assist_bytes: u64 = profile
        .convs
        .iter()
        .map(|c| (c.pool_size * c.kernel_size * c.kernel_size) as u64 * FLOAT_BYTES)
        .sum();
    let per_task_total: u64 = per_task_bytes.iter().sum();
    let total = per_task_total + assist_bytes;
    MemoryReport {
        profile: profile.name.clone(),
        policy,
        num_tasks: class_counts.len(),
        layers: first_layers,
        per_task_mb: per_task_bytes.iter().map(|&b| mb(b)).collect(),
        per_task_total_bytes: per_task_total,
        assist_mb: mb(assist_bytes),
        total_mb: mb(total),
        per_task_bytes,
        assist_bytes,
        total_bytes: total,
    }
}

/// Both index policies side by side, with the one whose accounting matches
/// the published ResNet-18 budgets called out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryComparison {
    pub packed: MemoryReport,
    pub aligned16: MemoryReport,
    /// Policy whose per-task cost is the smaller; minimal packing is what
    /// the reference budgets assume.
    pub recommended_policy: IndexBitPolicy,
}

pub fn memory_comparison(profile: &MemoryProfile, class_counts: &[usize]) -> MemoryComparison {
    MemoryComparison {
        packed: memory_report(profile, class_counts, IndexBitPolicy::PackedMinimal),
        aligned16: memory_report(profile, class_counts, IndexBitPolicy::Aligned16),
        recommended_policy: IndexBitPolicy::PackedMinimal,
    }
}
