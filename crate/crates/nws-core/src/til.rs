//! Task-incremental learning over frozen pools: per-task search training,
//! index-model saving, decode-based inference, and the sequence runner.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{ArchSpec, LayerDesc};
use crate::data::Dataset;
use crate::error::{NwsError, Result};
use crate::layer::LayerMode;
use crate::net::{KernelInit, NetLayer, Network, BN_EPSILON, BN_MOMENTUM};
use crate::ops::{self, BatchNormState};
use crate::optim::Sgd;
use crate::pool::{self, IndexVector, KernelPool};
use crate::tensor::{Float, Tensor};

/// Frozen pools plus the fingerprints that bind them to an architecture.
pub struct PoolSet {
    pub pools: Vec<KernelPool>,
    pub arch_fingerprint: [u8; 32],
}

impl PoolSet {
    pub fn new(pools: Vec<KernelPool>, arch_fingerprint: [u8; 32]) -> PoolSet {
        PoolSet {
            pools,
            arch_fingerprint,
        }
    }

    /// Content hash over every pool's entry bytes.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for pool in &self.pools {
            hasher.update(pool.content_hash());
        }
        hasher.finalize().into()
    }

    pub fn ensure_frozen(&self) -> Result<()> {
        for pool in &self.pools {
            if !pool.is_frozen() {
                return Err(NwsError::InvalidState(format!(
                    "pool for layer {} is not frozen",
                    pool.layer_id
                )));
            }
        }
        Ok(())
    }

    pub fn ensure_matches_arch(&self, spec: &ArchSpec) -> Result<()> {
        if self.arch_fingerprint != spec.fingerprint() {
            return Err(NwsError::IncompatibleArtifact(format!(
                "pool set was built for a different architecture than {}",
                spec.name
            )));
        }
        Ok(())
    }
}

/// One sequential task: remapped labels in [0, num_classes).
pub struct TaskSpec {
    pub task_id: usize,
    pub num_classes: usize,
    pub train: Dataset,
    pub test: Dataset,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        for ds in [&self.train, &self.test] {
            if let Some(&l) = ds.labels.iter().find(|&&l| l >= self.num_classes) {
                return Err(NwsError::InvalidInput(format!(
                    "task {}: label {} out of range [0, {})",
                    self.task_id, l, self.num_classes
                )));
            }
        }
        Ok(())
    }
}

/// Per-task batchnorm snapshot: running statistics plus learned scale/shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnSnapshot {
    pub channels: usize,
    pub running_mean: Vec<Float>,
    pub running_var: Vec<Float>,
    pub gamma: Vec<Float>,
    pub beta: Vec<Float>,
}

impl BnSnapshot {
    pub fn from_state(state: &BatchNormState) -> BnSnapshot {
        BnSnapshot {
            channels: state.channels,
            running_mean: state.running_mean.clone(),
            running_var: state.running_var.clone(),
            gamma: state.gamma.data(),
            beta: state.beta.data(),
        }
    }

    pub fn to_state(&self) -> BatchNormState {
        let mut state = BatchNormState::new(self.channels, BN_MOMENTUM, BN_EPSILON);
        state.running_mean = self.running_mean.clone();
        state.running_var = self.running_var.clone();
        state.gamma = Tensor::new(vec![self.channels], self.gamma.clone(), false).unwrap();
        state.beta = Tensor::new(vec![self.channels], self.beta.clone(), false).unwrap();
        state
    }
}

/// A stored task: kernel indices, batchnorm snapshots, and head metadata.
/// Never holds kernel floats.
#[derive(Debug, Clone)]
pub struct TaskModel {
    pub task_id: usize,
    pub num_classes: usize,
    pub index_vectors: Vec<IndexVector>,
    pub bn: Vec<BnSnapshot>,
    pub arch_fingerprint: [u8; 32],
    pub pool_fingerprint: [u8; 32],
}

impl TaskModel {
    pub fn ensure_compatible(&self, pool_set: &PoolSet) -> Result<()> {
        if self.arch_fingerprint != pool_set.arch_fingerprint
            || self.pool_fingerprint != pool_set.fingerprint()
        {
            return Err(NwsError::IncompatibleArtifact(format!(
                "task model {} was trained against different pools or architecture",
                self.task_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: Float,
    pub momentum: Float,
    pub weight_decay: Float,
    pub milestones: Vec<usize>,
    pub seed: u64,
    pub init_std: Float,
    /// Ablation: ignore the previous task's indices and start from random
    /// temporary kernels.
    pub random_init: bool,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-5,
            milestones: vec![],
            seed: 1993,
            init_std: 0.1,
            random_init: false,
        }
    }
}

/// Initialization source for a task's temporary kernels.
pub enum TaskInit<'a> {
    /// Index vectors straight from pretraining (the C0 seed).
    Indices(&'a [IndexVector]),
    Model(&'a TaskModel),
}

/// Trains one task with the search loss and returns its index model.
/// Temporary kernels start from the previous task's decoded indices; the
/// head restarts fresh whenever its width differs.
pub fn train_task(
    arch: &ArchSpec,
    pool_set: &PoolSet,
    init: TaskInit,
    task: &TaskSpec,
    hyper: &TrainHyper,
) -> Result<TaskModel> {
    pool_set.ensure_frozen()?;
    pool_set.ensure_matches_arch(arch)?;
    task.validate()?;
    let prev_indices: &[IndexVector] = match &init {
        TaskInit::Indices(idx) => idx,
        TaskInit::Model(model) => {
            model.ensure_compatible(pool_set)?;
            &model.index_vectors
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(task.task_id as u64));
    let kernel_init = if hyper.random_init {
        KernelInit::Random
    } else {
        KernelInit::Decode(prev_indices)
    };
    let mut network = Network::build_nws(
        arch,
        &pool_set.pools,
        task.num_classes,
        kernel_init,
        LayerMode::Search,
        &mut rng,
    )?;
    let mut optimizer = Sgd::new(
        network.parameters(),
        hyper.learning_rate,
        hyper.momentum,
        hyper.weight_decay,
    )
    .with_milestones(hyper.milestones.clone());

    for epoch in 0..hyper.epochs {
        optimizer.schedule_epoch(epoch);
        let order = task
            .train
            .shuffled_indices(hyper.seed.wrapping_add((task.task_id * 1000 + epoch) as u64));
        for chunk in order.chunks(hyper.batch_size) {
            let (batch, labels) = task.train.batch(chunk);
            let fwd = network.forward(&pool_set.pools, &batch, true)?;
            let ce = ops::softmax_cross_entropy(&fwd.logits, &labels)?;
            let loss = ops::add(&ce, &fwd.diff_loss);
            optimizer.zero_grad();
            loss.backward()?;
            optimizer.step();
        }
    }

    let mut index_vectors = Vec::new();
    for layer in network.nws_layers() {
        index_vectors.push(layer.encode(&pool_set.pools[layer.layer_id])?);
    }
    let bn = network.bn_states().iter().map(|s| BnSnapshot::from_state(s)).collect();
    Ok(TaskModel {
        task_id: task.task_id,
        num_classes: task.num_classes,
        index_vectors,
        bn,
        arch_fingerprint: pool_set.arch_fingerprint,
        pool_fingerprint: pool_set.fingerprint(),
    })
}

/// Rebuilds the plain conv network a task model names: kernels decoded from
/// the pools, batchnorm restored from the snapshots, nothing learnable.
pub fn reconstruct_network(
    arch: &ArchSpec,
    pool_set: &PoolSet,
    model: &TaskModel,
) -> Result<Network> {
    pool_set.ensure_matches_arch(arch)?;
    model.ensure_compatible(pool_set)?;
    let mut layers = Vec::new();
    let mut nws_idx = 0usize;
    let mut bn_idx = 0usize;
    for desc in &arch.layers {
        match desc {
            LayerDesc::NwsConv { .. } | LayerDesc::Head { .. } => {
                let (stride, padding) = match desc {
                    LayerDesc::NwsConv { stride, padding, .. } => (*stride, *padding),
                    _ => (1, 0),
                };
                let c = model.index_vectors.get(nws_idx).ok_or_else(|| {
                    NwsError::IncompatibleArtifact(format!(
                        "task model {} is missing layer {}",
                        model.task_id, nws_idx
                    ))
                })?;
                let vals = pool::decode(&pool_set.pools[nws_idx], c)?;
                let k = pool_set.pools[nws_idx].kernel_size;
                let kernels = Tensor::new(vec![c.d_out, c.d_in, k, k], vals, false)?;
                layers.push(NetLayer::Dense {
                    kernels,
                    stride,
                    padding,
                });
                nws_idx += 1;
            }
            LayerDesc::BatchNorm { .. } => {
                let snap = model.bn.get(bn_idx).ok_or_else(|| {
                    NwsError::IncompatibleArtifact(format!(
                        "task model {} is missing batchnorm {}",
                        model.task_id, bn_idx
                    ))
                })?;
                layers.push(NetLayer::Bn(snap.to_state()));
                bn_idx += 1;
            }
            LayerDesc::Relu => layers.push(NetLayer::Relu),
            LayerDesc::GlobalAvgPool => layers.push(NetLayer::GlobalAvgPool),
        }
    }
    Ok(Network {
        layers,
        num_classes: model.num_classes,
    })
}

pub struct Inference {
    pub predictions: Vec<usize>,
    pub logits: Vec<Float>,
    pub accuracy: f64,
}

/// Eval-mode inference from a stored task model; bit-deterministic.
pub fn infer_task(
    arch: &ArchSpec,
    pool_set: &PoolSet,
    model: &TaskModel,
    dataset: &Dataset,
) -> Result<Inference> {
    let mut network = reconstruct_network(arch, pool_set, model)?;
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut logits_all = Vec::new();
    let mut correct = 0usize;
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(64) {
        let (batch, labels) = dataset.batch(chunk);
        let fwd = network.forward(&[], &batch, false)?;
        let logits = fwd.logits.data();
        let v = model.num_classes;
        for (i, label) in labels.iter().enumerate() {
            let row = &logits[i * v..(i + 1) * v];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            predictions.push(pred);
            if pred == *label {
                correct += 1;
            }
        }
        logits_all.extend(logits);
    }
    Ok(Inference {
        predictions,
        logits: logits_all,
        accuracy: correct as f64 / dataset.len() as f64,
    })
}

/// Dense finetune baseline trained by the same loop; the accuracy yardstick
/// for the desk benchmark.
pub fn train_dense_task(arch: &ArchSpec, task: &TaskSpec, hyper: &TrainHyper) -> Result<f64> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(task.task_id as u64));
    let mut network = Network::build_dense(arch, task.num_classes, &mut rng)?;
    let mut optimizer = Sgd::new(
        network.parameters(),
        hyper.learning_rate,
        hyper.momentum,
        hyper.weight_decay,
    )
    .with_milestones(hyper.milestones.clone());
    for epoch in 0..hyper.epochs {
        optimizer.schedule_epoch(epoch);
        let order = task
            .train
            .shuffled_indices(hyper.seed.wrapping_add((task.task_id * 1000 + epoch) as u64));
        for chunk in order.chunks(hyper.batch_size) {
            let (batch, labels) = task.train.batch(chunk);
            let fwd = network.forward(&[], &batch, true)?;
            let ce = ops::softmax_cross_entropy(&fwd.logits, &labels)?;
            optimizer.zero_grad();
            ce.backward()?;
            optimizer.step();
        }
    }
    let mut correct = 0usize;
    let all: Vec<usize> = (0..task.test.len()).collect();
    for chunk in all.chunks(64) {
        let (batch, labels) = task.test.batch(chunk);
        let fwd = network.forward(&[], &batch, false)?;
        let logits = fwd.logits.data();
        for (i, label) in labels.iter().enumerate() {
            let row = &logits[i * task.num_classes..(i + 1) * task.num_classes];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            if pred == *label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / task.test.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: usize,
    pub num_classes: usize,
    pub accuracy: f64,
    pub kur: Vec<f64>,
    pub layer_sparsity: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub precision: String,
    pub arch_fingerprint: String,
    pub pool_fingerprint: String,
    pub thread_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub complete: bool,
    pub error: Option<String>,
    pub tasks: Vec<TaskReport>,
    pub average_accuracy: f64,
    pub memory: crate::analysis::MemoryReport,
    pub manifest: RunManifest,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{:02x}", b)).collect()
}

/// Thread count recorded into the manifest; ops are single-threaded, the
/// NWS_THREADS variable exists for forward compatibility and provenance.
pub fn recorded_thread_count() -> usize {
    std::env::var("NWS_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
}

/// Runs the whole sequential benchmark: train each task from the previous
/// task's indices, evaluate it, and collect metrics. A task failure aborts
/// the loop and flags the report incomplete.
pub fn run_sequence(
    arch: &ArchSpec,
    pool_set: &PoolSet,
    initial_indices: &[IndexVector],
    tasks: &[TaskSpec],
    hyper: &TrainHyper,
) -> Result<(Vec<TaskModel>, RunReport)> {
    pool_set.ensure_frozen()?;
    pool_set.ensure_matches_arch(arch)?;
    for pair in tasks.windows(2) {
        if pair[1].task_id <= pair[0].task_id {
            return Err(NwsError::InvalidInput(
                "task ids must be strictly increasing".into(),
            ));
        }
    }
    let mut models: Vec<TaskModel> = Vec::new();
    let mut reports = Vec::new();
    let mut error = None;
    for task in tasks {
        let init = match models.last() {
            Some(prev) => TaskInit::Model(prev),
            None => TaskInit::Indices(initial_indices),
        };
        let outcome = train_task(arch, pool_set, init, task, hyper).and_then(|model| {
            let inference = infer_task(arch, pool_set, &model, &task.test)?;
            Ok((model, inference))
        });
        match outcome {
            Ok((model, inference)) => {
                reports.push(TaskReport {
                    task_id: task.task_id,
                    num_classes: task.num_classes,
                    accuracy: inference.accuracy,
                    kur: crate::analysis::kur(&model, pool_set),
                    layer_sparsity: crate::analysis::layer_sparsity(&model),
                });
                models.push(model);
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    let average = if reports.is_empty() {
        0.0
    } else {
        reports.iter().map(|r| r.accuracy).sum::<f64>() / reports.len() as f64
    };
    let class_counts: Vec<usize> = tasks.iter().map(|t| t.num_classes).collect();
    let memory = crate::analysis::memory_report(
        &arch.to_memory_profile(),
        &class_counts,
        crate::analysis::IndexBitPolicy::PackedMinimal,
    );
    let report = RunReport {
        complete: error.is_none(),
        error,
        tasks: reports,
        average_accuracy: average,
        memory,
        manifest: RunManifest {
            seed: hyper.seed,
            precision: if cfg!(feature = "f64") { "f64".into() } else { "f32".into() },
            arch_fingerprint: hex(&pool_set.arch_fingerprint),
            pool_fingerprint: hex(&pool_set.fingerprint()),
            thread_count: recorded_thread_count(),
        },
    };
    Ok((models, report))
}
