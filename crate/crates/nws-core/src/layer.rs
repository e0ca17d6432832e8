//! NWS-incorporated convolution layers: forward always uses kernels selected
//! from the pool; temporary kernels learn through the straight-through
//! estimator plus the similarity loss.

use crate::error::Result;
use crate::ops;
use crate::pool::{self, IndexVector, KernelPool};
use crate::tensor::{Float, Tensor};

/// Straight-through selection: the output carries the selected kernel values
/// but gradients pass to the temporary kernels unchanged.
pub fn ste_select(temps: &Tensor, selected: Vec<Float>) -> Tensor {
    debug_assert_eq!(selected.len(), temps.numel());
    let pt = temps.clone();
    Tensor::from_op(
        temps.shape(),
        selected,
        vec![temps.clone()],
        Box::new(move |up| pt.accumulate_grad(up)),
    )
}

/// ||sg[K] - W||_2^2 summed over the layer; differentiable w.r.t. the
/// temporary kernels only.
pub fn similarity_loss(temps: &Tensor, selected: &[Float]) -> Tensor {
    let w = temps.data();
    debug_assert_eq!(selected.len(), w.len());
    let mut total: Float = 0.0;
    for (wv, kv) in w.iter().zip(selected) {
        let d = wv - kv;
        total += d * d;
    }
    let pt = temps.clone();
    let selected = selected.to_vec();
    Tensor::from_op(
        vec![],
        vec![total],
        vec![temps.clone()],
        Box::new(move |up| {
            let w = pt.data();
            let g: Vec<Float> = w
                .iter()
                .zip(selected.iter())
                .map(|(wv, kv)| 2.0 * (wv - kv) * up[0])
                .collect();
            pt.accumulate_grad(&g);
        }),
    )
}

/// ||sg[W] - K||_2^2 where K gathers the selected pool entries: the weight
/// distillation term. Gradient scatters onto the selected entries only;
/// unselected entries see exactly zero.
pub fn wd_pull_loss(pool_entries: &Tensor, indices: &IndexVector, temps_snapshot: &[Float]) -> Tensor {
    let shape = pool_entries.shape();
    let entry_len: usize = shape[1] * shape[2];
    let entries = pool_entries.data();
    let mut total: Float = 0.0;
    for (pos, &idx) in indices.indices.iter().enumerate() {
        let e = &entries[idx as usize * entry_len..(idx as usize + 1) * entry_len];
        let w = &temps_snapshot[pos * entry_len..(pos + 1) * entry_len];
        for j in 0..entry_len {
            let d = e[j] - w[j];
            total += d * d;
        }
    }
    let pe = pool_entries.clone();
    let idxs = indices.indices.clone();
    let w_snap = temps_snapshot.to_vec();
    Tensor::from_op(
        vec![],
        vec![total],
        vec![pool_entries.clone()],
        Box::new(move |up| {
            let entries = pe.data();
            let mut g = vec![0.0; entries.len()];
            for (pos, &idx) in idxs.iter().enumerate() {
                let base = idx as usize * entry_len;
                let w = &w_snap[pos * entry_len..(pos + 1) * entry_len];
                for j in 0..entry_len {
                    g[base + j] += 2.0 * (entries[base + j] - w[j]) * up[0];
                }
            }
            pe.accumulate_grad(&g);
        }),
    )
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LayerMode {
    /// Pool frozen; only the temporary kernels learn.
    Search,
    /// Pool entries learn through the weight-distillation loss.
    Distill,
}

/// Result of one NWS layer forward pass.
pub struct LayerForward {
    pub output: Tensor,
    pub diff_loss: Tensor,
    /// Present only in distill mode.
    pub wd_loss: Option<Tensor>,
    pub indices: IndexVector,
}

pub struct NwsConvLayer {
    pub layer_id: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    /// Learnable placeholder kernels [d_out, d_in, k, k]; never used to
    /// process inputs and never serialized.
    pub temps: Tensor,
    pub mode: LayerMode,
}

impl NwsConvLayer {
    pub fn new(
        layer_id: usize,
        d_in: usize,
        d_out: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        temps: Tensor,
        mode: LayerMode,
    ) -> NwsConvLayer {
        assert_eq!(temps.shape(), vec![d_out, d_in, kernel_size, kernel_size]);
        NwsConvLayer {
            layer_id,
            d_in,
            d_out,
            kernel_size,
            stride,
            padding,
            temps,
            mode,
        }
    }

    /// Searches the pool with the current temps, convolves the input with
    /// the selected kernels, and returns the per-layer similarity loss (plus
    /// the WD loss in distill mode).
    pub fn forward(&self, pool: &KernelPool, input: &Tensor) -> Result<LayerForward> {
        let temps_vals = self.temps.data();
        let search = pool::search_layer(pool, &temps_vals, self.d_in, self.d_out)?;
        let selected = ste_select(&self.temps, search.kernels.clone());
        let output = ops::conv2d(input, &selected, self.stride, self.padding)?;
        let diff_loss = similarity_loss(&self.temps, &search.kernels);
        let wd_loss = match self.mode {
            LayerMode::Distill => Some(wd_pull_loss(&pool.entries, &search.indices, &temps_vals)),
            LayerMode::Search => None,
        };
        Ok(LayerForward {
            output,
            diff_loss,
            wd_loss,
            indices: search.indices,
        })
    }

    pub fn encode(&self, pool: &KernelPool) -> Result<IndexVector> {
        pool::encode(pool, &self.temps.data(), self.d_in, self.d_out)
    }
}
