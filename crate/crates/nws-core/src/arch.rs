//! Architecture specifications: the desk-scale trainable spec plus
//! accounting-only descriptors of the paper-scale networks.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NwsError, Result};

/// One layer in a sequential architecture. The head is a 1x1 convolution
/// whose output width is the task's class count, supplied at build time so
/// the fingerprint stays stable across tasks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerDesc {
    NwsConv {
        d_in: usize,
        d_out: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        pool_size: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    GlobalAvgPool,
    Head {
        d_in: usize,
        pool_size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub input_channels: usize,
    pub layers: Vec<LayerDesc>,
}

impl ArchSpec {
    /// Checks channel chaining and pool-size presence.
    pub fn validate(&self) -> Result<()> {
        let mut channels = self.input_channels;
        let mut saw_head = false;
        for (i, layer) in self.layers.iter().enumerate() {
            if saw_head {
                return Err(NwsError::Config(format!(
                    "arch {}: layer {} follows the head",
                    self.name, i
                )));
            }
            match layer {
                LayerDesc::NwsConv {
                    d_in,
                    d_out,
                    kernel_size,
                    stride,
                    pool_size,
                    ..
                } => {
                    if *d_in != channels {
                        return Err(NwsError::Config(format!(
                            "arch {}: layer {} expects {} input channels, chain provides {}",
                            self.name, i, d_in, channels
                        )));
                    }
                    if *kernel_size == 0 || *stride == 0 || *pool_size == 0 {
                        return Err(NwsError::Config(format!(
                            "arch {}: layer {} has a zero kernel/stride/pool size",
                            self.name, i
                        )));
                    }
                    channels = *d_out;
                }
                LayerDesc::BatchNorm { channels: c } => {
                    if *c != channels {
                        return Err(NwsError::Config(format!(
                            "arch {}: batchnorm at {} has {} channels, chain provides {}",
                            self.name, i, c, channels
                        )));
                    }
                }
                LayerDesc::Relu | LayerDesc::GlobalAvgPool => {}
                LayerDesc::Head { d_in, pool_size } => {
                    if *d_in != channels {
                        return Err(NwsError::Config(format!(
                            "arch {}: head expects {} input channels, chain provides {}",
                            self.name, d_in, channels
                        )));
                    }
                    if *pool_size == 0 {
                        return Err(NwsError::Config(format!(
                            "arch {}: head has zero pool size",
                            self.name
                        )));
                    }
                    saw_head = true;
                }
            }
        }
        if !saw_head {
            return Err(NwsError::Config(format!("arch {}: no head layer", self.name)));
        }
        Ok(())
    }

    /// Content hash over the canonicalized JSON encoding.
    pub fn fingerprint(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("arch spec serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hasher.finalize().into()
    }

    /// Searchable conv layers in order: (d_in, d_out if fixed, kernel size,
    /// pool size). `None` d_out marks the head.
    pub fn nws_layers(&self) -> Vec<ConvRecord> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerDesc::NwsConv {
                    d_in,
                    d_out,
                    kernel_size,
                    pool_size,
                    ..
                } => Some(ConvRecord {
                    kernel_size: *kernel_size,
                    d_in: *d_in,
                    d_out: Some(*d_out),
                    pool_size: *pool_size,
                }),
                LayerDesc::Head { d_in, pool_size } => Some(ConvRecord {
                    kernel_size: 1,
                    d_in: *d_in,
                    d_out: None,
                    pool_size: *pool_size,
                }),
                _ => None,
            })
            .collect()
    }

    pub fn bn_channels(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerDesc::BatchNorm { channels } => Some(*channels),
                _ => None,
            })
            .collect()
    }

    pub fn to_memory_profile(&self) -> MemoryProfile {
        MemoryProfile {
            name: self.name.clone(),
            convs: self.nws_layers(),
            bn_channels: self.bn_channels(),
        }
    }

    /// The small trainable network used for real runs: three 3x3 NWS conv
    /// blocks, global average pooling, and a 1x1 conv head. Pools of 64
    /// kernels keep search cheap while leaving visible codebook pressure.
    pub fn desk(pool_size: usize) -> ArchSpec {
        ArchSpec {
            name: "desk".into(),
            input_channels: 3,
            layers: vec![
                LayerDesc::NwsConv {
                    d_in: 3,
                    d_out: 16,
                    kernel_size: 3,
                    stride: 1,
                    padding: 1,
                    pool_size,
                },
                LayerDesc::BatchNorm { channels: 16 },
                LayerDesc::Relu,
                LayerDesc::NwsConv {
                    d_in: 16,
                    d_out: 32,
                    kernel_size: 3,
                    stride: 2,
                    padding: 1,
                    pool_size,
                },
                LayerDesc::BatchNorm { channels: 32 },
                LayerDesc::Relu,
                LayerDesc::NwsConv {
                    d_in: 32,
                    d_out: 32,
                    kernel_size: 3,
                    stride: 1,
                    padding: 1,
                    pool_size,
                },
                LayerDesc::BatchNorm { channels: 32 },
                LayerDesc::Relu,
                LayerDesc::GlobalAvgPool,
                LayerDesc::Head { d_in: 32, pool_size },
            ],
        }
    }
}

/// One conv layer's accounting record. `d_out == None` marks the task head,
/// whose width is the class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvRecord {
    pub kernel_size: usize,
    pub d_in: usize,
    pub d_out: Option<usize>,
    pub pool_size: usize,
}

impl ConvRecord {
    /// Kernel-slot count d = d_in * d_out for a task with `classes` classes.
    pub fn kernel_count(&self, classes: usize) -> usize {
        self.d_in * self.d_out.unwrap_or(classes)
    }

    pub fn weight_count(&self, classes: usize) -> usize {
        self.kernel_count(classes) * self.kernel_size * self.kernel_size
    }
}

/// Accounting-only description of an architecture: its searchable conv
/// layers and per-task batchnorm channels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryProfile {
    pub name: String,
    pub convs: Vec<ConvRecord>,
    pub bn_channels: Vec<usize>,
}

impl MemoryProfile {
    pub fn conv_weight_count(&self, classes: usize) -> usize {
        self.convs.iter().map(|c| c.weight_count(classes)).sum()
    }

    /// Conv weights excluding the head; comparable across class counts.
    pub fn backbone_weight_count(&self) -> usize {
        self.convs
            .iter()
            .filter(|c| c.d_out.is_some())
            .map(|c| c.weight_count(0))
            .sum()
    }

    pub fn by_name(name: &str) -> Option<MemoryProfile> {
        match name {
            "desk" => Some(ArchSpec::desk(64).to_memory_profile()),
            "resnet18" | "resnet18-split-cifar100" => Some(resnet18(512)),
            "resnet34" => Some(resnet34(512)),
            "vgg16" => Some(vgg16(512)),
            "mobilenetv2" => Some(mobilenetv2(512)),
            _ => None,
        }
    }
}

fn conv(k: usize, d_in: usize, d_out: usize, pool: usize) -> ConvRecord {
    ConvRecord {
        kernel_size: k,
        d_in,
        d_out: Some(d_out),
        pool_size: pool,
    }
}

/// ResNet-18 with the final FC replaced by a 1x1 conv head: 21 searchable
/// layers in all. Layer 1 is 7x7, layers 8/13/18 are the 1x1 shortcut
/// convolutions, layer 21 is the head; the rest are 3x3. The shortcut
/// positions follow the standard torchvision enumeration.
pub fn resnet18(pool: usize) -> MemoryProfile {
    let mut convs = vec![conv(7, 3, 64, pool)];
    // stage 1: two basic blocks at 64
    for _ in 0..4 {
        convs.push(conv(3, 64, 64, pool));
    }
    // stage 2
    convs.push(conv(3, 64, 128, pool));
    convs.push(conv(3, 128, 128, pool));
    convs.push(conv(1, 64, 128, pool)); // shortcut, layer 8
    convs.push(conv(3, 128, 128, pool));
    convs.push(conv(3, 128, 128, pool));
    // stage 3
    convs.push(conv(3, 128, 256, pool));
    convs.push(conv(3, 256, 256, pool));
    convs.push(conv(1, 128, 256, pool)); // shortcut, layer 13
    convs.push(conv(3, 256, 256, pool));
    convs.push(conv(3, 256, 256, pool));
    // stage 4
    convs.push(conv(3, 256, 512, pool));
    convs.push(conv(3, 512, 512, pool));
    convs.push(conv(1, 256, 512, pool)); // shortcut, layer 18
    convs.push(conv(3, 512, 512, pool));
    convs.push(conv(3, 512, 512, pool));
    // head, layer 21
    convs.push(ConvRecord {
        kernel_size: 1,
        d_in: 512,
        d_out: None,
        pool_size: pool,
    });
    let mut bn = vec![64];
    bn.extend(vec![64; 4]);
    bn.extend(vec![128; 5]);
    bn.extend(vec![256; 5]);
    bn.extend(vec![512; 5]);
    MemoryProfile {
        name: "resnet18".into(),
        convs,
        bn_channels: bn,
    }
}

pub fn resnet34(pool: usize) -> MemoryProfile {
    let mut convs = vec![conv(7, 3, 64, pool)];
    let mut bn = vec![64];
    let stages: [(usize, usize, usize); 4] =
        [(64, 64, 3), (64, 128, 4), (128, 256, 6), (256, 512, 3)];
    for (stage_idx, (c_in, c_out, blocks)) in stages.iter().enumerate() {
        for b in 0..*blocks {
            let first_in = if b == 0 { *c_in } else { *c_out };
            convs.push(conv(3, first_in, *c_out, pool));
            convs.push(conv(3, *c_out, *c_out, pool));
            bn.push(*c_out);
            bn.push(*c_out);
            if b == 0 && stage_idx > 0 {
                convs.push(conv(1, *c_in, *c_out, pool));
                bn.push(*c_out);
            }
        }
    }
    convs.push(ConvRecord {
        kernel_size: 1,
        d_in: 512,
        d_out: None,
        pool_size: pool,
    });
    MemoryProfile {
        name: "resnet34".into(),
        convs,
        bn_channels: bn,
    }
}

/// VGG-16 with the classifier collapsed to a single 1x1 conv head.
pub fn vgg16(pool: usize) -> MemoryProfile {
    let widths = [
        (3, 64),
        (64, 64),
        (64, 128),
        (128, 128),
        (128, 256),
        (256, 256),
        (256, 256),
        (256, 512),
        (512, 512),
        (512, 512),
        (512, 512),
        (512, 512),
        (512, 512),
    ];
    let mut convs: Vec<ConvRecord> = widths
        .iter()
        .map(|&(i, o)| conv(3, i, o, pool))
        .collect();
    let bn = widths.iter().map(|&(_, o)| o).collect();
    convs.push(ConvRecord {
        kernel_size: 1,
        d_in: 512,
        d_out: None,
        pool_size: pool,
    });
    MemoryProfile {
        name: "vgg16".into(),
        convs,
        bn_channels: bn,
    }
}

/// MobileNetV2. Depthwise 3x3 convolutions count one kernel per channel
/// (d_in = 1 per group), which is why this profile compresses poorly: most
/// of its weights sit in 1x1 kernels where one float becomes one index.
pub fn mobilenetv2(pool: usize) -> MemoryProfile {
    let mut convs = vec![conv(3, 3, 32, pool)];
    let mut bn = vec![32];
    // (expansion, out channels, repeats, _stride)
    let cfg: [(usize, usize, usize); 7] = [
        (1, 16, 1),
        (6, 24, 2),
        (6, 32, 3),
        (6, 64, 4),
        (6, 96, 3),
        (6, 160, 3),
        (6, 320, 1),
    ];
    let mut c_in = 32;
    for (t, c_out, n) in cfg {
        for _ in 0..n {
            let hidden = c_in * t;
            if t != 1 {
                convs.push(conv(1, c_in, hidden, pool));
                bn.push(hidden);
            }
            // depthwise: one kernel per channel
            convs.push(ConvRecord {
                kernel_size: 3,
                d_in: 1,
                d_out: Some(hidden),
                pool_size: pool,
            });
            bn.push(hidden);
            convs.push(conv(1, hidden, c_out, pool));
            bn.push(c_out);
            c_in = c_out;
        }
    }
    convs.push(conv(1, 320, 1280, pool));
    bn.push(1280);
    convs.push(ConvRecord {
        kernel_size: 1,
        d_in: 1280,
        d_out: None,
        pool_size: pool,
    });
    MemoryProfile {
        name: "mobilenetv2".into(),
        convs,
        bn_channels: bn,
    }
}
