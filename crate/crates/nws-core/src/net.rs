//! Sequential network instances built from an [`ArchSpec`]: NWS-searched,
//! dense baseline, or reconstructed read-only from a saved task model.

use rand::Rng;

use crate::arch::{ArchSpec, LayerDesc};
use crate::error::{NwsError, Result};
use crate::layer::{LayerForward, LayerMode, NwsConvLayer};
use crate::ops::{self, BatchNormState};
use crate::pool::{IndexVector, KernelPool};
use crate::tensor::{Float, Tensor};

pub const BN_MOMENTUM: Float = 0.1;
pub const BN_EPSILON: Float = 1e-5;
const INIT_STD: Float = 0.1;

pub enum NetLayer {
    Nws { layer: NwsConvLayer, pool_idx: usize },
    Dense {
        kernels: Tensor,
        stride: usize,
        padding: usize,
    },
    Bn(BatchNormState),
    Relu,
    GlobalAvgPool,
}

pub struct Network {
    pub layers: Vec<NetLayer>,
    pub num_classes: usize,
}

/// How to initialize temporary (or dense) kernels at build time.
pub enum KernelInit<'a> {
    /// Fresh Gaussian init.
    Random,
    /// Decode the given per-layer index vectors from the pools; the head
    /// falls back to a fresh init when its shape differs.
    Decode(&'a [IndexVector]),
    /// Fixed kernel values per searchable layer (read-only reconstruction).
    Fixed(&'a [Vec<Float>]),
}

pub struct NetForward {
    pub logits: Tensor,
    pub diff_loss: Tensor,
    pub wd_losses: Vec<Tensor>,
    pub indices: Vec<IndexVector>,
}

impl Network {
    /// Builds an NWS network over the given pools. Pool `i` serves the
    /// `i`-th searchable layer; kernel sizes and pool sizes must match the
    /// spec.
    pub fn build_nws<R: Rng>(
        spec: &ArchSpec,
        pools: &[KernelPool],
        num_classes: usize,
        init: KernelInit,
        mode: LayerMode,
        rng: &mut R,
    ) -> Result<Network> {
        spec.validate()?;
        let records = spec.nws_layers();
        if pools.len() != records.len() {
            return Err(NwsError::IncompatibleArtifact(format!(
                "arch {} has {} searchable layers but {} pools were provided",
                spec.name,
                records.len(),
                pools.len()
            )));
        }
        for (i, (rec, pool)) in records.iter().zip(pools).enumerate() {
            if pool.kernel_size != rec.kernel_size || pool.n != rec.pool_size {
                return Err(NwsError::IncompatibleArtifact(format!(
                    "pool {} is {} kernels of {}x{}, arch expects {} of {}x{}",
                    i, pool.n, pool.kernel_size, pool.kernel_size,
                    rec.pool_size, rec.kernel_size, rec.kernel_size
                )));
            }
        }

        let mut layers = Vec::new();
        let mut nws_idx = 0usize;
        for desc in &spec.layers {
            match desc {
                LayerDesc::NwsConv { .. } | LayerDesc::Head { .. } => {
                    let (d_in, d_out, k, stride, padding) = match desc {
                        LayerDesc::NwsConv {
                            d_in,
                            d_out,
                            kernel_size,
                            stride,
                            padding,
                            ..
                        } => (*d_in, *d_out, *kernel_size, *stride, *padding),
                        LayerDesc::Head { d_in, .. } => (*d_in, num_classes, 1usize, 1usize, 0usize),
                        _ => unreachable!(),
                    };
                    let shape = vec![d_out, d_in, k, k];
                    let temps = match &init {
                        KernelInit::Random => Tensor::randn(shape, INIT_STD, rng, true),
                        KernelInit::Decode(prev) => {
                            let c = prev.get(nws_idx).ok_or_else(|| {
                                NwsError::IncompatibleArtifact(format!(
                                    "no index vector for searchable layer {}",
                                    nws_idx
                                ))
                            })?;
                            if c.d_in == d_in && c.d_out == d_out {
                                let vals = crate::pool::decode(&pools[nws_idx], c)?;
                                Tensor::new(shape, vals, true)?
                            } else if matches!(desc, LayerDesc::Head { .. }) {
                                // head width changed with the task
                                Tensor::randn(shape, INIT_STD, rng, true)
                            } else {
                                return Err(NwsError::IncompatibleArtifact(format!(
                                    "layer {}: saved indices are {}x{}, arch expects {}x{}",
                                    nws_idx, c.d_out, c.d_in, d_out, d_in
                                )));
                            }
                        }
                        KernelInit::Fixed(blocks) => {
                            let vals = blocks.get(nws_idx).ok_or_else(|| {
                                NwsError::IncompatibleArtifact(format!(
                                    "no kernel block for searchable layer {}",
                                    nws_idx
                                ))
                            })?;
                            Tensor::new(shape, vals.clone(), true)?
                        }
                    };
                    layers.push(NetLayer::Nws {
                        layer: NwsConvLayer::new(nws_idx, d_in, d_out, k, stride, padding, temps, mode),
                        pool_idx: nws_idx,
                    });
                    nws_idx += 1;
                }
                LayerDesc::BatchNorm { channels } => {
                    layers.push(NetLayer::Bn(BatchNormState::new(*channels, BN_MOMENTUM, BN_EPSILON)));
                }
                LayerDesc::Relu => layers.push(NetLayer::Relu),
                LayerDesc::GlobalAvgPool => layers.push(NetLayer::GlobalAvgPool),
            }
        }
        Ok(Network {
            layers,
            num_classes,
        })
    }

    /// Dense baseline: same topology, free conv kernels instead of searched
    /// ones.
    pub fn build_dense<R: Rng>(spec: &ArchSpec, num_classes: usize, rng: &mut R) -> Result<Network> {
        spec.validate()?;
        let mut layers = Vec::new();
        for desc in &spec.layers {
            match desc {
                LayerDesc::NwsConv {
                    d_in,
                    d_out,
                    kernel_size,
                    stride,
                    padding,
                    ..
                } => {
                    let kernels =
                        Tensor::randn(vec![*d_out, *d_in, *kernel_size, *kernel_size], INIT_STD, rng, true);
                    layers.push(NetLayer::Dense {
                        kernels,
                        stride: *stride,
                        padding: *padding,
                    });
                }
                LayerDesc::Head { d_in, .. } => {
                    let kernels = Tensor::randn(vec![num_classes, *d_in, 1, 1], INIT_STD, rng, true);
                    layers.push(NetLayer::Dense {
                        kernels,
                        stride: 1,
                        padding: 0,
                    });
                }
                LayerDesc::BatchNorm { channels } => {
                    layers.push(NetLayer::Bn(BatchNormState::new(*channels, BN_MOMENTUM, BN_EPSILON)));
                }
                LayerDesc::Relu => layers.push(NetLayer::Relu),
                LayerDesc::GlobalAvgPool => layers.push(NetLayer::GlobalAvgPool),
            }
        }
        Ok(Network {
            layers,
            num_classes,
        })
    }

    /// Forward pass. `pools` may be empty for a dense network.
    pub fn forward(
        &mut self,
        pools: &[KernelPool],
        input: &Tensor,
        training: bool,
    ) -> Result<NetForward> {
        let mut x = input.clone();
        let mut diff_loss = Tensor::scalar(0.0);
        let mut wd_losses = Vec::new();
        let mut indices = Vec::new();
        for layer in self.layers.iter_mut() {
            x = match layer {
                NetLayer::Nws { layer, pool_idx } => {
                    let LayerForward {
                        output,
                        diff_loss: dl,
                        wd_loss,
                        indices: idx,
                    } = layer.forward(&pools[*pool_idx], &x)?;
                    diff_loss = ops::add(&diff_loss, &dl);
                    if let Some(wd) = wd_loss {
                        wd_losses.push(wd);
                    }
                    indices.push(idx);
                    output
                }
                NetLayer::Dense {
                    kernels,
                    stride,
                    padding,
                } => ops::conv2d(&x, kernels, *stride, *padding)?,
                NetLayer::Bn(state) => ops::batchnorm(&x, state, training)?,
                NetLayer::Relu => ops::relu(&x),
                NetLayer::GlobalAvgPool => {
                    let shape = x.shape();
                    debug_assert_eq!(shape[2], shape[3]);
                    ops::avgpool2d(&x, shape[2], 1)?
                }
            };
        }
        // [N, V, 1, 1] -> [N, V]
        let shape = x.shape();
        let logits = ops::reshape(&x, vec![shape[0], shape[1]])?;
        Ok(NetForward {
            logits,
            diff_loss,
            wd_losses,
            indices,
        })
    }

    /// Trainable leaves: temps or dense kernels plus batchnorm scale/shift.
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut params = Vec::new();
        for layer in &self.layers {
            match layer {
                NetLayer::Nws { layer, .. } => params.push(layer.temps.clone()),
                NetLayer::Dense { kernels, .. } => params.push(kernels.clone()),
                NetLayer::Bn(state) => {
                    params.push(state.gamma.clone());
                    params.push(state.beta.clone());
                }
                _ => {}
            }
        }
        params
    }

    pub fn nws_layers(&self) -> Vec<&NwsConvLayer> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                NetLayer::Nws { layer, .. } => Some(layer),
                _ => None,
            })
            .collect()
    }

    pub fn bn_states(&self) -> Vec<&BatchNormState> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                NetLayer::Bn(state) => Some(state),
                _ => None,
            })
            .collect()
    }

    pub fn bn_states_mut(&mut self) -> Vec<&mut BatchNormState> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                NetLayer::Bn(state) => Some(state),
                _ => None,
            })
            .collect()
    }
}
