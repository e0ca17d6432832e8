//! Search-space construction: joint pretraining in which temporary kernels
//! follow the search loss while selected pool entries follow the
//! weight-distillation loss; pools are frozen afterwards.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::data::Dataset;
use crate::error::{NwsError, Result};
use crate::layer::LayerMode;
use crate::net::{KernelInit, Network};
use crate::ops;
use crate::optim::Sgd;
use crate::pool::{IndexVector, KernelPool};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Coefficient on the weight-distillation loss; controls how fast pool
    /// entries chase the temporary kernels.
    pub beta: Float,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: Float,
    pub momentum: Float,
    pub weight_decay: Float,
    pub milestones: Vec<usize>,
    pub seed: u64,
    /// Gaussian std for random pool/temp initialization.
    pub init_std: Float,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            beta: 0.5,
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-5,
            milestones: vec![],
            seed: 1993,
            init_std: 0.1,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(NwsError::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.batch_size == 0 {
            return Err(NwsError::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-batch losses from one distillation step.
pub struct StepLosses {
    pub ce: Float,
    pub diff: Float,
    pub wd: Float,
}

/// One combined gradient step: cross-entropy + similarity update the temps
/// (and batchnorm) through `net_opt`, beta-scaled WD updates the selected
/// pool entries through `pool_opt`. Pool entries must use a plain SGD group
/// (no momentum, no weight decay) so that entries with zero gradient stay
/// bit-identical.
pub fn distill_step(
    network: &mut Network,
    pools: &[KernelPool],
    net_opt: &mut Sgd,
    pool_opt: &mut Sgd,
    batch: &Tensor,
    labels: &[usize],
    beta: Float,
) -> Result<StepLosses> {
    for pool in pools {
        pool.ensure_unfrozen()?;
    }
    let fwd = network.forward(pools, batch, true)?;
    let ce = ops::softmax_cross_entropy(&fwd.logits, labels)?;
    let mut wd_total = Tensor::scalar(0.0);
    for wd in &fwd.wd_losses {
        wd_total = ops::add(&wd_total, wd);
    }
    let total = ops::add(
        &ops::add(&ce, &fwd.diff_loss),
        &ops::scale(&wd_total, beta),
    );
    net_opt.zero_grad();
    pool_opt.zero_grad();
    total.backward()?;
    net_opt.step();
    pool_opt.step();
    Ok(StepLosses {
        ce: ce.item(),
        diff: fwd.diff_loss.item(),
        wd: wd_total.item(),
    })
}

/// Plain-SGD group over the pool entries; see [`distill_step`].
pub fn pool_optimizer(pools: &[KernelPool], learning_rate: Float) -> Sgd {
    Sgd::new(
        pools.iter().map(|p| p.entries.clone()).collect(),
        learning_rate,
        0.0,
        0.0,
    )
}

pub struct PretrainOutput {
    pub pools: Vec<KernelPool>,
    /// Encoded indices of the final temporary kernels; the initialization
    /// seed for the first task.
    pub initial_indices: Vec<IndexVector>,
    pub initial_ce: Float,
    pub final_ce: Float,
}

/// Constructs the search space: random pools and temps, joint training on
/// the pretraining dataset, then frozen pools plus the encoded final temps.
pub fn pretrain_pools(
    spec: &ArchSpec,
    dataset: &Dataset,
    cfg: &DistillConfig,
) -> Result<PretrainOutput> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(NwsError::InvalidInput("pretraining dataset is empty".into()));
    }
    let classes = dataset.labels.iter().copied().max().unwrap() + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let records = spec.nws_layers();
    let mut pools: Vec<KernelPool> = records
        .iter()
        .enumerate()
        .map(|(i, r)| KernelPool::random(i, r.kernel_size, r.pool_size, cfg.init_std, &mut rng))
        .collect();

    let mut network = Network::build_nws(
        spec,
        &pools,
        classes,
        KernelInit::Random,
        LayerMode::Distill,
        &mut rng,
    )?;
    let mut net_opt = Sgd::new(
        network.parameters(),
        cfg.learning_rate,
        cfg.momentum,
        cfg.weight_decay,
    )
    .with_milestones(cfg.milestones.clone());
    let mut pool_opt =
        pool_optimizer(&pools, cfg.learning_rate).with_milestones(cfg.milestones.clone());

    let mut initial_ce = None;
    let mut final_ce = 0.0;
    for epoch in 0..cfg.epochs {
        net_opt.schedule_epoch(epoch);
        pool_opt.schedule_epoch(epoch);
        let order = dataset.shuffled_indices(cfg.seed.wrapping_add(epoch as u64));
        let mut epoch_ce = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (batch, labels) = dataset.batch(chunk);
            let losses = distill_step(
                &mut network,
                &pools,
                &mut net_opt,
                &mut pool_opt,
                &batch,
                &labels,
                cfg.beta,
            )?;
            if initial_ce.is_none() {
                initial_ce = Some(losses.ce);
            }
            epoch_ce += losses.ce;
            steps += 1;
        }
        final_ce = epoch_ce / steps as Float;
    }

    for pool in pools.iter_mut() {
        pool.freeze();
    }
    let mut initial_indices = Vec::new();
    for (layer, pool) in network.nws_layers().iter().zip(&pools) {
        initial_indices.push(layer.encode(pool)?);
    }
    Ok(PretrainOutput {
        pools,
        initial_indices,
        initial_ce: initial_ce.unwrap_or(0.0),
        final_ce,
    })
}

/// Mean squared distance between every temp kernel and its selection,
/// averaged over kernels; the quantity distillation is meant to shrink.
pub fn mean_assignment_error(network: &Network, pools: &[KernelPool]) -> Result<Float> {
    let mut total = 0.0;
    let mut count = 0usize;
    for layer in network.nws_layers() {
        let res = crate::pool::search_layer(
            &pools[layer.layer_id],
            &layer.temps.data(),
            layer.d_in,
            layer.d_out,
        )?;
        total += res.diff;
        count += layer.d_in * layer.d_out;
    }
    Ok(total / count as Float)
}
