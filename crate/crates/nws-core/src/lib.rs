//! Weight search over frozen kernel pools for task-incremental learning.
//!
//! A fixed bank of small conv kernels is distilled once; every subsequent
//! task is trained by searching that bank and is stored as nothing but
//! per-layer kernel indices plus batchnorm statistics. Old tasks can never
//! degrade because nothing they reference is ever rewritten.

pub mod analysis;
pub mod arch;
pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod io;
pub mod layer;
pub mod net;
pub mod ops;
pub mod optim;
pub mod pool;
pub mod reference;
pub mod tensor;
pub mod til;

pub use arch::ArchSpec;
pub use config::RunConfig;
pub use data::Dataset;
pub use distill::{pretrain_pools, DistillConfig, PretrainOutput};
pub use error::{NwsError, Result};
pub use pool::{IndexVector, KernelPool};
pub use tensor::{Float, Tensor};
pub use til::{
    infer_task, run_sequence, train_task, PoolSet, RunReport, TaskModel, TaskSpec, TrainHyper,
};
