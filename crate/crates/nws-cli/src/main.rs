//! `nws` — command-line driver: pretrain pools, train tasks, run the full
//! sequential benchmark, inspect models, and audit memory budgets.
//!
//! Every command emits a JSON report to stdout (or `--out`); failures print a
//! structured error to stderr and exit with the code documented in README.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use nws_core::analysis::{self, IndexBitPolicy};
use nws_core::arch::MemoryProfile;
use nws_core::config::RunConfig;
use nws_core::error::{NwsError, Result};
use nws_core::pool::IndexVector;
use nws_core::tensor::{Float, Tensor};
use nws_core::til::{self, PoolSet, TaskInit};
use nws_core::{io, ops, reference};

#[derive(Parser)]
#[command(name = "nws", about = "Neural weight search: pooled-kernel task-incremental learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Jointly train the layer-wise kernel pools, then freeze them.
    PretrainPools {
        #[arg(long)]
        config: PathBuf,
        /// Destination pool file (binary, .nwsp).
        #[arg(long)]
        out: PathBuf,
        /// Where to write the initial index vectors (JSON); defaults to
        /// `<out>.c0.json`.
        #[arg(long)]
        indices_out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one task against frozen pools and save its index model.
    TrainTask {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        pools: PathBuf,
        /// Task position in the config's task_split (0-based).
        #[arg(long)]
        task: usize,
        /// Previous task's model file; its indices seed the temporary kernels.
        #[arg(long)]
        prev_model: Option<PathBuf>,
        /// Initial index vectors (JSON from pretrain-pools) when there is no
        /// previous model.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Full benchmark: pretrain (or load) pools, then train every task in
    /// sequence and report accuracy, reuse, and memory metrics.
    RunSequence {
        #[arg(long)]
        config: PathBuf,
        /// Reuse an existing pool file instead of pretraining.
        #[arg(long)]
        pools: Option<PathBuf>,
        /// Initial index vectors (required with --pools).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Directory for the per-task model files (and the pool file when
        /// pretraining here).
        #[arg(long)]
        models_dir: Option<PathBuf>,
        /// JSON report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rebuild a task's network from its index model and classify its test set.
    Infer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        pools: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Task position in the config's task_split (0-based).
        #[arg(long)]
        task: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Kernel-usage metrics of a saved model: KUR, layer sparsity, selection
    /// rates.
    Analyze {
        #[arg(long)]
        pools: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Also write the per-entry selection-rate table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Storage accounting for a named architecture profile.
    MemReport {
        /// Profile name, e.g. resnet18-split-cifar100.
        #[arg(long)]
        profile: String,
        #[arg(long)]
        tasks: usize,
        /// Classes per task.
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in oracle/property suites against this binary.
    Verify {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        let code = e.exit_code();
        eprintln!("{}", json!({ "error": e.to_string(), "exit_code": code }));
        std::process::exit(code);
    }
}

fn emit(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| NwsError::Format(e.to_string()))?;
    match out {
        Some(path) => fs::write(path, text + "\n")?,
        None => {
            use std::io::Write;
            if let Err(e) = writeln!(std::io::stdout(), "{}", text) {
                // a closed pipe (e.g. `nws ... | head`) is not an error
                if e.kind() == std::io::ErrorKind::BrokenPipe {
                    std::process::exit(0);
                }
                return Err(e.into());
            }
        }
    }
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_init(path: &Path) -> Result<Vec<IndexVector>> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| NwsError::Format(format!("{}: {}", path.display(), e)))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::PretrainPools { config, out, indices_out, seed } => {
            let cfg = load_config(&config, seed)?;
            let arch = cfg.arch_spec()?;
            let (train, _) = cfg.load_dataset()?;
            let pre = train.subset_with_remap(&cfg.pretrain_classes);
            let result = nws_core::pretrain_pools(&arch, &pre, &cfg.distill_config())?;
            let pool_set = PoolSet::new(result.pools, arch.fingerprint());
            io::save_pools(&out, &pool_set)?;
            let indices_path = indices_out
                .unwrap_or_else(|| out.with_extension("c0.json"));
            let text = serde_json::to_string(&result.initial_indices)
                .map_err(|e| NwsError::Format(e.to_string()))?;
            fs::write(&indices_path, text)?;
            emit(
                None,
                &json!({
                    "pools": out,
                    "initial_indices": indices_path,
                    "initial_ce": result.initial_ce,
                    "final_ce": result.final_ce,
                    "pool_fingerprint": hex(&pool_set.fingerprint()),
                }),
            )
        }
        Command::TrainTask { config, pools, task, prev_model, init, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let arch = cfg.arch_spec()?;
            let pool_set = io::load_pools(&pools)?;
            pool_set.ensure_matches_arch(&arch)?;
            let (train, test) = cfg.load_dataset()?;
            let tasks = cfg.build_tasks(&train, &test);
            let spec = tasks.get(task).ok_or_else(|| {
                NwsError::InvalidInput(format!(
                    "task {} out of range ({} tasks configured)",
                    task,
                    tasks.len()
                ))
            })?;
            let prev = match &prev_model {
                Some(p) => Some(io::load_model(p)?),
                None => None,
            };
            let init_vecs = match (&prev, &init) {
                (Some(_), _) => None,
                (None, Some(p)) => Some(load_init(p)?),
                (None, None) => {
                    return Err(NwsError::InvalidInput(
                        "need --prev-model or --init for kernel initialization".into(),
                    ))
                }
            };
            let task_init = match (&prev, &init_vecs) {
                (Some(m), _) => TaskInit::Model(m),
                (None, Some(v)) => TaskInit::Indices(v),
                _ => unreachable!(),
            };
            let model = til::train_task(&arch, &pool_set, task_init, spec, &cfg.train_hyper())?;
            io::save_model(&out, &model, &pool_set)?;
            let inference = til::infer_task(&arch, &pool_set, &model, &spec.test)?;
            emit(
                None,
                &json!({
                    "model": out,
                    "task_id": model.task_id,
                    "num_classes": model.num_classes,
                    "test_accuracy": inference.accuracy,
                    "kur": analysis::kur(&model, &pool_set),
                    "layer_sparsity": analysis::layer_sparsity(&model),
                }),
            )
        }
        Command::RunSequence { config, pools, init, models_dir, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let arch = cfg.arch_spec()?;
            let (train, test) = cfg.load_dataset()?;
            let (pool_set, initial) = match (&pools, &init) {
                (Some(pool_path), Some(init_path)) => {
                    let set = io::load_pools(pool_path)?;
                    set.ensure_matches_arch(&arch)?;
                    (set, load_init(init_path)?)
                }
                (Some(_), None) | (None, Some(_)) => {
                    return Err(NwsError::InvalidInput(
                        "--pools and --init must be given together".into(),
                    ))
                }
                (None, None) => {
                    let pre = train.subset_with_remap(&cfg.pretrain_classes);
                    let result = nws_core::pretrain_pools(&arch, &pre, &cfg.distill_config())?;
                    let set = PoolSet::new(result.pools, arch.fingerprint());
                    if let Some(dir) = &models_dir {
                        fs::create_dir_all(dir)?;
                        io::save_pools(&dir.join("pools.nwsp"), &set)?;
                    }
                    (set, result.initial_indices)
                }
            };
            let tasks = cfg.build_tasks(&train, &test);
            let (models, report) =
                til::run_sequence(&arch, &pool_set, &initial, &tasks, &cfg.train_hyper())?;
            if let Some(dir) = &models_dir {
                fs::create_dir_all(dir)?;
                for model in &models {
                    io::save_model(
                        &dir.join(format!("task{:03}.nwsm", model.task_id)),
                        model,
                        &pool_set,
                    )?;
                }
            }
            let value = serde_json::to_value(&report)
                .map_err(|e| NwsError::Format(e.to_string()))?;
            emit(out.as_deref(), &value)
        }
        Command::Infer { config, pools, model, task, out } => {
            let cfg = load_config(&config, None)?;
            let arch = cfg.arch_spec()?;
            let pool_set = io::load_pools(&pools)?;
            pool_set.ensure_matches_arch(&arch)?;
            let model = io::load_model(&model)?;
            let (train, test) = cfg.load_dataset()?;
            let tasks = cfg.build_tasks(&train, &test);
            let spec = tasks.get(task).ok_or_else(|| {
                NwsError::InvalidInput(format!(
                    "task {} out of range ({} tasks configured)",
                    task,
                    tasks.len()
                ))
            })?;
            let inference = til::infer_task(&arch, &pool_set, &model, &spec.test)?;
            emit(
                out.as_deref(),
                &json!({
                    "task_id": model.task_id,
                    "num_classes": model.num_classes,
                    "predictions": inference.predictions,
                    "accuracy": inference.accuracy,
                }),
            )
        }
        Command::Analyze { pools, model, csv, out } => {
            let pool_set = io::load_pools(&pools)?;
            let model = io::load_model(&model)?;
            model.ensure_compatible(&pool_set)?;
            if let Some(path) = &csv {
                fs::write(path, analysis::selection_rate_csv(&model, &pool_set))?;
            }
            let usage = analysis::layer_usage(&model, &pool_set);
            emit(
                out.as_deref(),
                &json!({
                    "task_id": model.task_id,
                    "num_classes": model.num_classes,
                    "kur": analysis::kur(&model, &pool_set),
                    "layer_sparsity": analysis::layer_sparsity(&model),
                    "layers": usage
                        .iter()
                        .map(|u| json!({
                            "layer_id": u.layer_id,
                            "pool_size": u.pool_size,
                            "slots": u.slots,
                            "distinct": u.distinct(),
                        }))
                        .collect::<Vec<_>>(),
                    "csv": csv,
                }),
            )
        }
        Command::MemReport { profile, tasks, classes, out } => {
            let profile = MemoryProfile::by_name(&profile).ok_or_else(|| {
                NwsError::Config(format!("unknown memory profile {:?}", profile))
            })?;
            let class_counts = vec![classes; tasks];
            let comparison = analysis::memory_comparison(&profile, &class_counts);
            let value = serde_json::to_value(&comparison)
                .map_err(|e| NwsError::Format(e.to_string()))?;
            emit(out.as_deref(), &value)
        }
        Command::Verify { seed, out } => verify(seed, out.as_deref()),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{:02x}", b)).collect()
}

/// Self-contained oracle suites: each re-derives an expected answer by an
/// independent route and compares. Any failure exits non-zero.
fn verify(seed: u64, out: Option<&Path>) -> Result<()> {
    let mut suites: Vec<(&str, bool, String)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // conv2d against the naive quadruple loop
    let mut conv_ok = true;
    let mut conv_detail = String::new();
    for case in 0..8 {
        let (n, c, o) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
        let k = [1usize, 3, 5][rng.gen_range(0..3)];
        let stride = rng.gen_range(1..3);
        let padding = rng.gen_range(0..2);
        let h = rng.gen_range(k + stride..k + 5);
        let w = rng.gen_range(k + stride..k + 5);
        let input: Vec<Float> = (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let kernels: Vec<Float> = (0..o * c * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let it = Tensor::new(vec![n, c, h, w], input.clone(), false)?;
        let kt = Tensor::new(vec![o, c, k, k], kernels.clone(), false)?;
        let got = ops::conv2d(&it, &kt, stride, padding)?;
        let (want, _, _) =
            reference::naive_conv2d(&input, n, c, h, w, &kernels, o, k, stride, padding);
        let err = reference::max_relative_error(&got.data(), &want);
        if err > 1e-4 {
            conv_ok = false;
            conv_detail = format!("case {}: relative error {}", case, err);
            break;
        }
    }
    suites.push(("conv2d-vs-naive-loop", conv_ok, conv_detail));

    // nearest-neighbor search against exhaustive scan
    let mut search_ok = true;
    let mut search_detail = String::new();
    let mut pool = nws_core::KernelPool::random(0, 3, 64, 0.5, &mut rng);
    pool.freeze();
    let entries = pool.entries.data();
    for case in 0..200 {
        let query: Vec<Float> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (gi, gd) = nws_core::pool::nearest(&pool, &query)?;
        let (wi, wd) = reference::exhaustive_nearest(&entries, 9, &query);
        if gi != wi || (gd - wd).abs() > 1e-5 {
            search_ok = false;
            search_detail = format!("case {}: got ({}, {}), want ({}, {})", case, gi, gd, wi, wd);
            break;
        }
    }
    suites.push(("nearest-vs-exhaustive-scan", search_ok, search_detail));

    // encode -> decode is the identity on decoded kernels
    let temps: Vec<Float> = (0..4 * 2 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let code = nws_core::pool::encode(&pool, &temps, 2, 4)?;
    let decoded = nws_core::pool::decode(&pool, &code)?;
    let recode = nws_core::pool::encode(&pool, &decoded, 2, 4)?;
    let roundtrip_ok = code == recode;
    suites.push((
        "encode-decode-fixpoint",
        roundtrip_ok,
        if roundtrip_ok { String::new() } else { "re-encoding changed indices".into() },
    ));

    // bit packing roundtrip at every width
    let mut pack_ok = true;
    let mut pack_detail = String::new();
    for bits in 1..=16u32 {
        let limit = 1u32 << bits.min(16);
        let values: Vec<u32> = (0..97).map(|_| rng.gen_range(0..limit)).collect();
        let packed = io::pack_indices(&values, bits);
        let back = io::unpack_indices(&packed, bits, values.len())?;
        if back != values {
            pack_ok = false;
            pack_detail = format!("width {} roundtrip mismatch", bits);
            break;
        }
    }
    suites.push(("index-bit-packing-roundtrip", pack_ok, pack_detail));

    // gradient of a small conv against central finite differences
    let (n, c, o, k, h, w) = (1, 2, 2, 3, 4, 4);
    let input: Vec<Float> = (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut kernels: Vec<Float> = (0..o * c * k * k).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let it = Tensor::new(vec![n, c, h, w], input.clone(), false)?;
    let kt = Tensor::new(vec![o, c, k, k], kernels.clone(), true)?;
    let loss = ops::sum(&ops::mul(
        &ops::conv2d(&it, &kt, 1, 1)?,
        &ops::conv2d(&it, &kt, 1, 1)?,
    ));
    loss.backward()?;
    let grad = kt.grad().unwrap();
    let fd = reference::finite_difference(&mut kernels, 1e-2, |vals| {
        let kt = Tensor::new(vec![o, c, k, k], vals.to_vec(), false).unwrap();
        let out = ops::conv2d(&it, &kt, 1, 1).unwrap();
        ops::sum(&ops::mul(&out, &out)).item()
    });
    let err = reference::max_relative_error(&grad, &fd);
    let grad_ok = err < 1e-2;
    suites.push((
        "conv2d-grad-vs-finite-difference",
        grad_ok,
        if grad_ok { String::new() } else { format!("relative error {}", err) },
    ));

    // memory accounting bit-width sanity
    let bits_ok = analysis::index_bits(500, IndexBitPolicy::PackedMinimal) == 9
        && analysis::index_bits(500, IndexBitPolicy::Aligned16) == 16
        && analysis::index_bits(1, IndexBitPolicy::PackedMinimal) == 1;
    suites.push((
        "index-bit-width-policy",
        bits_ok,
        if bits_ok { String::new() } else { "unexpected bit widths".into() },
    ));

    let all_pass = suites.iter().all(|(_, ok, _)| *ok);
    emit(
        out,
        &json!({
            "seed": seed,
            "suites": suites
                .iter()
                .map(|(name, ok, detail)| json!({
                    "name": name,
                    "pass": ok,
                    "detail": detail,
                }))
                .collect::<Vec<_>>(),
            "all_pass": all_pass,
        }),
    )?;
    if all_pass {
        Ok(())
    } else {
        Err(NwsError::InvalidInput("verification suite failed".into()))
    }
}
