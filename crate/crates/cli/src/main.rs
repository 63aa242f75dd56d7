//! `qnn`: train, evaluate, benchmark and inspect binarized neural networks.

use std::fs::File;
use std::io::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use qnn_core::analysis::{
    count_unique_filters, energy_estimate, memory_report, EnergyTable, FilterBank, MemoryTier,
};
use qnn_core::bitkernel::{bench_gemm, BENCH_CSV_HEADER};
use qnn_core::data_io::{load_mnist, synth_dataset, Dataset};
use qnn_core::layers::BnMode;
use qnn_core::optim::{OptimMode, ADAMAX_ALPHA};
use qnn_core::quantize::{QuantKind, QuantSpec, Scheme};
use qnn_core::trainer::{
    evaluate, fit, load_checkpoint, predict_logits, save_checkpoint, InputMode, QnnModel,
    TrainConfig, FIT_CSV_HEADER,
};
use qnn_core::Rng;

#[derive(Parser)]
#[command(name = "qnn", version, about = "Binarized neural network trainer and inference engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus per-epoch metrics CSV
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test set via the packed kernels
    Eval(EvalArgs),
    /// Benchmark the float baseline against the packed XNOR kernel
    Bench(BenchArgs),
    /// Print memory, energy and filter-uniqueness reports for a checkpoint
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BnFlag {
    Vanilla,
    Shift,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimFlag {
    Adam,
    ShiftAdamax,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// vanilla BN + ADAM, deterministic binarization
    TheanoStyle,
    /// shift BN + shift AdaMax, stochastic activation binarization
    TorchStyle,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetFlag {
    Mnist,
    Synth,
}

#[derive(Args)]
struct TrainArgs {
    /// architecture: `mlp-3x1024` or a dash-separated chain like `mlp-256-128`
    #[arg(long, default_value = "mlp-3x1024")]
    arch: String,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    batch: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// base learning rate; defaults depend on the optimizer
    #[arg(long)]
    lr: Option<f64>,
    /// per-epoch exponential decay factor (ADAM schedule)
    #[arg(long, default_value_t = 0.97)]
    lr_decay: f64,
    /// halve the rate every N epochs instead of exponential decay
    #[arg(long, default_value_t = 0)]
    shift_lr_period: usize,
    #[arg(long, value_enum, default_value_t = BnFlag::Vanilla)]
    bn: BnFlag,
    #[arg(long, value_enum, default_value_t = OptimFlag::Adam)]
    optim: OptimFlag,
    /// named configuration bundle; overrides --bn/--optim/--stochastic
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// stochastic activation binarization during training
    #[arg(long, default_value_t = false)]
    stochastic: bool,
    /// log-quantize gradients to this many bits (omit for full precision)
    #[arg(long)]
    gradient_bits: Option<u8>,
    #[arg(long, value_enum, default_value_t = DatasetFlag::Mnist)]
    dataset: DatasetFlag,
    /// directory holding the IDX files (no downloading is performed)
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
    /// checkpoint output path
    #[arg(long, default_value = "model.qnn")]
    out: PathBuf,
    /// per-epoch metrics CSV output path
    #[arg(long, default_value = "metrics.csv")]
    metrics: PathBuf,
    /// examples held out from the end of the training set for validation
    #[arg(long, default_value_t = 10000)]
    val_size: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum, default_value_t = DatasetFlag::Mnist)]
    dataset: DatasetFlag,
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
    /// also run the float reference path and require identical predictions
    #[arg(long, default_value_t = false)]
    verify: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// comma-separated square sizes
    #[arg(long, default_value = "1024", value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// CSV output path (stdout if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TierFlag {
    #[value(name = "8k")]
    Cache8K,
    #[value(name = "32k")]
    Cache32K,
    #[value(name = "1m")]
    Cache1M,
    Dram,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum, default_value_t = TierFlag::Dram)]
    energy_tier: TierFlag,
}

fn parse_arch(arch: &str, in_dim: usize, classes: usize) -> Result<Vec<usize>> {
    if arch == "mlp-3x1024" {
        return Ok(vec![in_dim, 1024, 1024, 1024, classes]);
    }
    let rest = arch
        .strip_prefix("mlp-")
        .with_context(|| format!("unknown architecture {arch}"))?;
    let mut dims = vec![in_dim];
    for part in rest.split('-') {
        dims.push(part.parse::<usize>().with_context(|| format!("bad layer width {part}"))?);
    }
    dims.push(classes);
    Ok(dims)
}

fn load_train_data(flag: DatasetFlag, dir: &PathBuf, seed: u64) -> Result<(Dataset, Dataset)> {
    match flag {
        DatasetFlag::Mnist => load_mnist(dir).with_context(|| {
            format!("loading MNIST from {} (files must exist locally)", dir.display())
        }),
        DatasetFlag::Synth => {
            let train = synth_dataset(2000, 64, 10, seed)?;
            let test = synth_dataset(500, 64, 10, seed + 1)?;
            Ok((train, test))
        }
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (mut bn, mut optim, mut stochastic) = (
        match a.bn {
            BnFlag::Vanilla => BnMode::Vanilla,
            BnFlag::Shift => BnMode::Shift,
        },
        match a.optim {
            OptimFlag::Adam => OptimMode::Adam,
            OptimFlag::ShiftAdamax => OptimMode::ShiftAdaMax,
        },
        a.stochastic,
    );
    let mut shift_lr_period = a.shift_lr_period;
    if let Some(p) = a.preset {
        match p {
            Preset::TheanoStyle => {
                bn = BnMode::Vanilla;
                optim = OptimMode::Adam;
                stochastic = false;
            }
            Preset::TorchStyle => {
                bn = BnMode::Shift;
                optim = OptimMode::ShiftAdaMax;
                stochastic = true;
                if shift_lr_period == 0 {
                    shift_lr_period = 10;
                }
            }
        }
    }
    let lr = a.lr.unwrap_or(match optim {
        OptimMode::Adam => 0.001,
        OptimMode::ShiftAdaMax => ADAMAX_ALPHA,
    });

    let (full_train, test) = load_train_data(a.dataset, &a.data_dir, a.seed)?;
    if a.val_size >= full_train.n {
        bail!(
            "validation size {} leaves no training data (set has {})",
            a.val_size,
            full_train.n
        );
    }
    let train = full_train.slice(0, full_train.n - a.val_size);
    let val = if a.val_size > 0 {
        full_train.slice(full_train.n - a.val_size, a.val_size)
    } else {
        test.clone()
    };

    let mut spec = QuantSpec::binary();
    if let Some(bits) = a.gradient_bits {
        spec.gradients = Some(QuantKind::new(bits, Scheme::Log, -1.0, 1.0)?);
    }
    let dims = parse_arch(&a.arch, train.dim, train.classes)?;
    let mut rng = Rng::new(a.seed);
    let model = QnnModel::<f32>::mlp(&dims, bn, spec, InputMode::BytePlanes, &mut rng)?;

    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        lr,
        lr_decay: a.lr_decay,
        shift_lr_period,
        optim,
        stochastic,
    };

    let mut csv = File::create(&a.metrics)
        .with_context(|| format!("creating {}", a.metrics.display()))?;
    writeln!(csv, "{FIT_CSV_HEADER}")?;
    let mut log_row = |row: &qnn_core::trainer::FitRow| {
        let _ = writeln!(csv, "{}", row.to_csv());
        let _ = csv.flush();
        eprintln!(
            "epoch {:>3}  loss {:.4}  train_err {:.4}  val_err {:.4}",
            row.epoch, row.train_loss, row.train_err, row.val_err
        );
    };
    let result = fit(model, &train, &val, &cfg, Some(&mut log_row))?;

    let mut best = result.best_model;
    save_checkpoint(&best, None, &a.out)?;
    let test_err = evaluate(&mut best, &test, true)?;
    println!(
        "best validation error {:.4} at epoch {}; test error {:.4}",
        result.best_val_err, result.best_epoch, test_err
    );
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (mut model, _) = load_checkpoint::<f32>(&a.ckpt)
        .with_context(|| format!("loading {}", a.ckpt.display()))?;
    let (_, test) = load_train_data(a.dataset, &a.data_dir, 1)?;
    let err = evaluate(&mut model, &test, true)?;
    if a.verify {
        let packed = predict_logits(&mut model, &test, true)?;
        let float = predict_logits(&mut model, &test, false)?;
        if packed != float {
            bail!("packed and float inference paths disagree");
        }
        println!("paths agree: packed and float logits are identical");
    }
    println!("test error {err:.4}");
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let rows = bench_gemm(&a.sizes, a.reps, a.threads)?;
    let mut csv = format!("{BENCH_CSV_HEADER}\n");
    for r in &rows {
        csv.push_str(&r.to_csv());
        csv.push('\n');
    }
    match &a.out {
        Some(p) => {
            std::fs::write(p, &csv)?;
            println!("benchmark CSV written to {}", p.display());
        }
        None => print!("{csv}"),
    }
    for r in rows.iter().filter(|r| r.kernel == "xnor_packed") {
        println!(
            "size {} threads {}: packed kernel {:.1}x over float baseline",
            r.size, r.threads, r.speedup
        );
    }
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let (model, _) = load_checkpoint::<f32>(&a.ckpt)
        .with_context(|| format!("loading {}", a.ckpt.display()))?;
    let dims = model.layer_dims();
    let mem = memory_report(&dims);
    println!("layers: {:?}", dims);
    println!("{}", mem.to_text());

    let tier = match a.energy_tier {
        TierFlag::Cache8K => MemoryTier::Cache8K,
        TierFlag::Cache32K => MemoryTier::Cache32K,
        TierFlag::Cache1M => MemoryTier::Cache1M,
        TierFlag::Dram => MemoryTier::Dram,
    };
    let e = energy_estimate(&dims, &EnergyTable::default(), tier);
    println!("forward MACs: {}", e.macs);
    println!("float32 arithmetic: {:.3} uJ", e.float_pj / 1e6);
    println!("packed arithmetic:  {:.3} uJ ({})", e.packed_pj / 1e6, e.assumption);
    println!("weight fetch (float): {:.3} uJ", e.fetch_float_pj / 1e6);
    println!("weight fetch (packed): {:.3} uJ", e.fetch_packed_pj / 1e6);

    // square hidden layers can be viewed as k x k filter banks
    let mut printed = false;
    for (idx, layer) in model.layers.iter().enumerate() {
        let n = layer.in_dim();
        let k = (n as f64).sqrt() as usize;
        if k * k == n && k >= 2 && k <= 11 {
            // each output unit's incoming weight column is one k x k filter
            let w = layer.weights();
            let mut values = Vec::with_capacity(n * layer.out_dim());
            for j in 0..layer.out_dim() {
                for i in 0..n {
                    values.push(if w.get(i, j) >= 0.0 { 1i8 } else { -1 });
                }
            }
            if let Ok(bank) = FilterBank::new(layer.out_dim(), 1, k, values) {
                let (u, frac) = count_unique_filters(&bank, false);
                let (ui, frac_i) = count_unique_filters(&bank, true);
                println!(
                    "layer {idx}: {u} unique {k}x{k} filters ({:.1}%), {ui} with inverses folded ({:.1}%)",
                    frac * 100.0,
                    frac_i * 100.0
                );
                printed = true;
            }
        }
    }
    if !printed {
        println!("no square filter banks present; filter report omitted");
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
