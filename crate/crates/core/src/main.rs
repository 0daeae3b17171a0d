use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lrfpn::harness::ablate::{run_ablation, run_one, run_reference};
use lrfpn::harness::bench::{run_bench, BenchConfig};
use lrfpn::harness::checkpoint::save_checkpoint;
use lrfpn::harness::config::RunConfig;
use lrfpn::harness::gradcheck::{run_gradcheck, GradcheckConfig};
use lrfpn::harness::metrics::{median_final_loss, write_file, write_metrics};
use lrfpn::harness::oracle::run_oracle;
use lrfpn::pyramid::{AblationFlags, LrFpnModel, TrainTrace};
use lrfpn::{DType, Error, OpKind, Result, Tensor};

#[derive(Parser)]
#[command(name = "lrfpn", version, about = "LR-FPN neck: verification, ablation and benchmark runs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single seed, replacing the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated tokens from {sp, pp, si, ci, li, ni}, `none`, or a
    /// lattice label such as `full` or `+SPIEM+CI`.
    #[arg(long, global = true)]
    flags: Option<String>,
    /// Training steps, replacing the configured value.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Precision of benchmark kernels and written checkpoints.
    #[arg(long, global = true, value_parser = ["f32", "f64"])]
    dtype: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Print F₁..F₄ and P₁..P₅ shapes and parameter counts.
    Shapes,
    /// Finite-difference check of every op and of the full model.
    Gradcheck {
        /// Corrupt the backward rule of one op (test fixture).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Kernel oracles: conv paths, pooling windows, depthwise.
    Oracle,
    /// Train every configured flag set on every seed and write metrics.
    Ablate,
    /// Train one flag set on one seed; writes metrics and a checkpoint.
    TrainToy,
    /// Time naive vs. optimized convolutions and the full forward pass.
    Bench,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    flags: Option<AblationFlags>,
    dtype: DType,
}

impl Ctx {
    fn seeds(&self, common: &Common) -> Vec<u64> {
        common.seed.map_or_else(|| self.cfg.seeds.clone(), |s| vec![s])
    }
}

enum Outcome {
    Pass,
    Fail,
}

fn context(common: &Common, command: &Command) -> Result<Ctx> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        // The gradient check targets the miniature model unless configured.
        None if matches!(command, Command::Gradcheck { .. }) => RunConfig::miniature(),
        None => RunConfig::default(),
    };
    if let Some(steps) = common.steps {
        cfg.steps = steps;
    }
    let dtype = match &common.dtype {
        Some(d) => d.parse().map_err(Error::Config)?,
        None => cfg.dtype,
    };
    cfg.dtype = dtype;
    let flags = common.flags.as_deref().map(AblationFlags::parse).transpose()?;
    cfg.validate()?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    if !matches!(command, Command::Shapes) {
        std::fs::create_dir_all(&out).map_err(|source| Error::Io { path: out.clone(), source })?;
    }
    Ok(Ctx { cfg, out, flags, dtype })
}

fn shapes(ctx: &Ctx) -> Result<Outcome> {
    let flags = ctx.flags.unwrap_or(AblationFlags::FULL);
    let model = LrFpnModel::new(ctx.cfg.model_config(), flags, 0)?;
    let mut tape = model.tape();
    let images = Tensor::zeros(model.expected_input_dims(1));
    let pyr = model.forward(&mut tape, &images)?;
    println!("flags: {} ({})", flags.label(), flags.tokens());
    println!("input: {:?}", images.dims());
    for (k, &f) in pyr.features.iter().enumerate() {
        println!("F{}: {:?}", k + 1, tape.value(f).dims());
    }
    let mut ok = true;
    let mut prev: Option<[usize; 4]> = None;
    for (k, &p) in pyr.levels.iter().enumerate() {
        let dims = tape.value(p).dims();
        println!("P{}: {:?}", k + 1, dims);
        if let Some(q) = prev {
            ok &= dims[2] == q[2].div_ceil(2) && dims[3] == q[3].div_ceil(2);
        }
        prev = Some(dims);
    }
    let mut groups: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    for (_, p) in model.store.iter() {
        *groups.entry(p.name.split('.').next().unwrap_or("")).or_default() += p.numel();
    }
    for (g, n) in &groups {
        println!("params {g}: {n}");
    }
    println!("params total: {}", model.store.numel());
    println!("halving: {}", if ok { "PASS" } else { "FAIL" });
    Ok(if ok { Outcome::Pass } else { Outcome::Fail })
}

fn gradcheck(ctx: &Ctx, common: &Common, fault: Option<&str>) -> Result<Outcome> {
    let fault = fault
        .map(|name| {
            OpKind::from_name(name).ok_or_else(|| {
                let valid: Vec<&str> = OpKind::DIFFERENTIABLE.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown op '{name}'; valid ops are {}", valid.join(", ")))
            })
        })
        .transpose()?;
    let gc = GradcheckConfig {
        probes: ctx.cfg.probes,
        tolerance: ctx.cfg.tolerance,
        fd_step: ctx.cfg.fd_step,
        seed: common.seed.unwrap_or(0),
        fault,
        ..GradcheckConfig::default()
    };
    let report = run_gradcheck(&ctx.cfg.model_config(), &gc)?;
    let text = report.render();
    write_file(&ctx.out.join("gradcheck.txt"), &text)?;
    print!("{text}");
    Ok(if report.passed() { Outcome::Pass } else { Outcome::Fail })
}

fn oracle(ctx: &Ctx, common: &Common) -> Result<Outcome> {
    let report = run_oracle(ctx.cfg.oracle_cases, common.seed.unwrap_or(0))?;
    let text = report.render();
    write_file(&ctx.out.join("oracle.txt"), &text)?;
    print!("{text}");
    Ok(if report.passed() { Outcome::Pass } else { Outcome::Fail })
}

fn ablate(ctx: &Ctx, common: &Common) -> Result<Outcome> {
    let sets = match ctx.flags {
        Some(f) => vec![f],
        None => ctx.cfg.parsed_flag_sets()?,
    };
    let seeds = ctx.seeds(common);
    let records = run_ablation(&ctx.cfg, &sets, &seeds)?;
    write_metrics(&ctx.out, &records)?;
    let mut labels: Vec<AblationFlags> = Vec::new();
    for r in &records {
        if !labels.iter().any(|f| f.bits() == r.flags.bits()) {
            labels.push(r.flags);
        }
    }
    for f in &labels {
        println!("{:<14} median final loss {:.6}", f.label(), median_final_loss(&records, *f));
    }
    // Baseline rows must reproduce the independent plain-FPN runner exactly.
    let mut outcome = Outcome::Pass;
    for r in records.iter().filter(|r| r.flags.bits() == 0) {
        let reference = run_reference(&ctx.cfg, r.seed)?;
        let same = reference.bit_eq(&TrainTrace { losses: r.losses.clone() });
        println!("baseline seed {} vs plain FPN: {}", r.seed, if same { "bitwise equal" } else { "MISMATCH" });
        if !same {
            outcome = Outcome::Fail;
        }
    }
    println!("wrote {} rows to {}", records.len(), ctx.out.join("metrics.csv").display());
    Ok(outcome)
}

fn train_toy(ctx: &Ctx, common: &Common) -> Result<Outcome> {
    let flags = ctx.flags.unwrap_or(AblationFlags::FULL);
    let seed = common.seed.unwrap_or(0);
    let (record, model) = run_one(&ctx.cfg, flags, seed)?;
    let records = [record];
    write_metrics(&ctx.out, &records)?;
    let ckpt = ctx.out.join(format!("{}.lrfpn", records[0].run_id()));
    save_checkpoint(&model.store, &ckpt, ctx.dtype)?;
    let r = &records[0];
    println!(
        "{} seed {}: loss {:.6} -> {:.6} (ratio {:.4}) over {} steps",
        flags.label(),
        seed,
        r.initial_loss(),
        r.final_loss(),
        r.loss_ratio(),
        r.losses.len()
    );
    println!("checkpoint: {}", ckpt.display());
    Ok(Outcome::Pass)
}

fn bench(ctx: &Ctx, common: &Common) -> Result<Outcome> {
    let cfg = BenchConfig {
        model: ctx.cfg.model_config(),
        batch: ctx.cfg.batch,
        reps: ctx.cfg.bench_reps,
        warmup: ctx.cfg.bench_warmup,
        dtype: ctx.dtype,
        seed: common.seed.unwrap_or(0),
    };
    let report = run_bench(&cfg)?;
    write_file(&ctx.out.join("bench.json"), &report.to_json())?;
    for k in &report.kernels {
        println!(
            "{:<12} fwd {:>9.3} ms -> {:>9.3} ms ({:>5.2}x)  bwd {:>9.3} ms -> {:>9.3} ms ({:>5.2}x)",
            k.name,
            k.naive_forward_s * 1e3,
            k.optimized_forward_s * 1e3,
            k.forward_speedup,
            k.naive_backward_s * 1e3,
            k.optimized_backward_s * 1e3,
            k.backward_speedup
        );
    }
    println!(
        "full forward {:.3} ms -> {:.3} ms ({:.2}x)",
        report.forward.naive_s * 1e3,
        report.forward.optimized_s * 1e3,
        report.forward.speedup
    );
    println!("conv speedup ({}): {:.2}x (target 3x, report only)", report.dtype, report.speedup);
    Ok(Outcome::Pass)
}

fn run(cli: &Cli) -> Result<Outcome> {
    let ctx = context(&cli.common, &cli.command)?;
    let c = &cli.common;
    match &cli.command {
        Command::Shapes => shapes(&ctx),
        Command::Gradcheck { inject_fault } => gradcheck(&ctx, c, inject_fault.as_deref()),
        Command::Oracle => oracle(&ctx, c),
        Command::Ablate => ablate(&ctx, c),
        Command::TrainToy => train_toy(&ctx, c),
        Command::Bench => bench(&ctx, c),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Verification(_) | Error::Diverged { .. } | Error::BackwardTwice | Error::NonScalarLoss(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
