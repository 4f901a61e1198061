//! `sscmmd`: data generation, training, ablation and verification.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use sscmmd::ablation::ablate;
use sscmmd::data::{
    generate_gaussian_mixture, generate_rings, load_csv, load_feature_matrix, make_ssl_split, save_csv, CsvSchema,
    GaussianMixtureSpec, RingsSpec,
};
use sscmmd::gradcheck_suite::{run_gradcheck, Fault, GradcheckOptions};
use sscmmd::loss_mmd::{mmd_value, BandwidthMode, KernelConfig};
use sscmmd::loss_ssc::TemperatureForm;
use sscmmd::model::Activation;
use sscmmd::trainer::{evaluate, load_run_model, train, LrSchedule, RunOptions, TrainConfig};

/// Bad input from the user; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "sscmmd", version, about = "Semi-supervised contrastive learning with MMD distribution matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write a run directory.
    Train(TrainArgs),
    /// Test accuracy of a trained run.
    Eval(EvalArgs),
    /// Base vs. w.mmd over several seeds.
    Ablate(AblateArgs),
    /// Finite-difference check of every loss gradient.
    Gradcheck(GradcheckArgs),
    /// MMD between the rows of two CSV files.
    Mmd(MmdArgs),
    /// Write a synthetic dataset as CSV.
    GenData(GenDataArgs),
    /// Write a labeled / unlabeled / test split as JSON.
    Split(SplitArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    PerEpoch,
    PerStep,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Scaled,
    Printed,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, ValueEnum)]
enum BandwidthArg {
    Median,
    Fixed,
}

/// Flags mirroring `TrainConfig` keys; each overrides the config file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    mu: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long, value_enum)]
    lr_schedule: Option<ScheduleArg>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, value_enum)]
    temperature_form: Option<FormArg>,
    #[arg(long)]
    t_prime: Option<f64>,
    #[arg(long)]
    lambda_mmd: Option<f64>,
    #[arg(long)]
    epsilon_p: Option<f64>,
    #[arg(long)]
    selection_uses_t_prime: Option<bool>,
    #[arg(long, value_enum)]
    bandwidth: Option<BandwidthArg>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    #[arg(long)]
    labels_per_class: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    data_seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, c: &mut TrainConfig) {
        macro_rules! set {
            ($flag:ident => $($field:ident).+) => {
                if let Some(v) = self.$flag.clone() {
                    c.$($field).+ = v;
                }
            };
        }
        set!(batch_size => batch_size);
        set!(mu => mu);
        set!(epochs => epochs);
        set!(eta0 => eta0);
        set!(momentum => momentum);
        set!(tau => tau);
        set!(temperature => temperature);
        set!(t_prime => t_prime);
        set!(lambda_mmd => lambda_mmd);
        set!(selection_uses_t_prime => selection_uses_t_prime);
        set!(sigma => kernel.sigma);
        set!(seed => seed);
        set!(hidden => encoder.hidden);
        set!(embed_dim => encoder.embed_dim);
        set!(labels_per_class => data.labels_per_class);
        set!(test_fraction => data.test_fraction);
        if self.grad_clip.is_some() {
            c.grad_clip = self.grad_clip;
        }
        if self.epsilon_p.is_some() {
            c.epsilon_p = self.epsilon_p;
        }
        if self.data_seed.is_some() {
            c.data.seed = self.data_seed;
        }
        if let Some(s) = self.lr_schedule {
            c.lr_schedule = match s {
                ScheduleArg::PerEpoch => LrSchedule::PerEpoch,
                ScheduleArg::PerStep => LrSchedule::PerStep,
            };
        }
        if let Some(f) = self.temperature_form {
            c.temperature_form = match f {
                FormArg::Scaled => TemperatureForm::Scaled,
                FormArg::Printed => TemperatureForm::Printed,
            };
        }
        if let Some(a) = self.activation {
            c.encoder.activation = match a {
                ActivationArg::Relu => Activation::Relu,
                ActivationArg::Tanh => Activation::Tanh,
            };
        }
        if let Some(b) = self.bandwidth {
            c.kernel.bandwidth = match b {
                BandwidthArg::Median => BandwidthMode::Median,
                BandwidthArg::Fixed => BandwidthMode::Fixed,
            };
        }
    }
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct TrainArgs {
    /// JSON config; defaults are used for absent keys or without a file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Continue from the checkpoint in the run directory.
    #[arg(long)]
    resume: bool,
    /// Stop after this many completed epochs.
    #[arg(long)]
    halt_after_epoch: Option<usize>,
    /// Print the effective config as JSON and exit.
    #[arg(long)]
    print_config: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory holding config.json and checkpoint.bin.
    #[arg(long)]
    run: PathBuf,
    /// Labeled CSV to evaluate instead of the run's test split.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    seeds: Vec<u64>,
    #[arg(long, default_value = "ablation")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Flip the sign of the MMD gradient (checks that the check fails).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct MmdArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Kernel bandwidth: a positive number or `median`.
    #[arg(long, default_value = "median")]
    sigma: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Gmm,
    Rings,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum, default_value = "gmm")]
    kind: DataKind,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    distractor_classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    /// Labeled CSV (label in the last column).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4)]
    labels_per_class: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) if !p.exists() => return Err(usage(format!("config file {} not found", p.display()))),
        Some(p) => TrainConfig::from_json_file(p)?,
        None => TrainConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let cfg = load_config(args.config.as_deref(), &args.overrides)?;
    if args.print_config {
        // a closed pipe (`| head`) is not an error here
        let _ = writeln!(std::io::stdout(), "{}", cfg.to_json_pretty());
        return Ok(());
    }
    let (ds, split) = cfg.prepare_data::<f64>()?;
    let data = split.training_data(&ds);
    let opts = RunOptions {
        run_dir: Some(args.out.clone()),
        resume: args.resume,
        halt_after_epoch: args.halt_after_epoch,
    };
    let out = train(&cfg, &data, &opts)?;
    println!("run directory: {}", args.out.display());
    println!("epochs completed: {}/{}", out.epochs_completed, cfg.epochs);
    if let Some(acc) = out.final_accuracy {
        println!("test accuracy: {acc:.4}");
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let cfg_path = args.run.join("config.json");
    if !cfg_path.exists() {
        return Err(usage(format!("{} not found", cfg_path.display())));
    }
    let cfg = TrainConfig::from_json_file(&cfg_path)?;
    let (features, labels, k) = match &args.data {
        Some(p) => {
            let (ds, _) = load_csv::<f64>(p, &CsvSchema::default())?;
            let k = ds.class_count();
            (ds.features().clone(), ds.labels().to_vec(), k)
        }
        None => {
            let (ds, split) = cfg.prepare_data::<f64>()?;
            let data = split.training_data(&ds);
            (data.test.features, data.test.labels, ds.class_count())
        }
    };
    let (model, epoch) = load_run_model(&args.run, &cfg, features.cols(), k)?;
    let acc = evaluate(&model, &features, &labels)?;
    println!("epoch: {epoch}");
    println!("rows: {}", labels.len());
    println!("test accuracy: {acc:.4}");
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> anyhow::Result<()> {
    let cfg = load_config(args.config.as_deref(), &args.overrides)?;
    let report = ablate(&cfg, &args.seeds, Some(&args.out))?;
    print!("{}", report.render_table());
    match report.mmd_not_worse() {
        Some(true) => println!("direction: w.mmd >= base"),
        Some(false) => println!("direction: w.mmd < base (soft check, not an error)"),
        None => {}
    }
    println!("written: {}", args.out.display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> anyhow::Result<bool> {
    let report = run_gradcheck(&GradcheckOptions {
        seeds: args.seeds,
        tolerance: args.tolerance,
        fault: args.inject_fault.then_some(Fault::MmdSignFlip),
        ..Default::default()
    })?;
    print!("{}", report.render());
    if !report.passed() {
        eprintln!("gradcheck failed: {}", report.failing_terms().join(", "));
    }
    Ok(report.passed())
}

/// `v` with 12 significant digits.
fn significant(v: f64, digits: i32) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.prec$}", prec = (digits - 1) as usize);
    }
    let exp = v.abs().log10().floor() as i32;
    let prec = (digits - 1 - exp).max(0) as usize;
    format!("{v:.prec$}")
}

fn cmd_mmd(args: MmdArgs) -> anyhow::Result<()> {
    let kernel = match args.sigma.as_str() {
        "median" => KernelConfig::default(),
        s => {
            let sigma: f64 = s
                .parse()
                .map_err(|_| usage(format!("--sigma expects a number or `median`, got `{s}`")))?;
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(usage("--sigma must be positive"));
            }
            KernelConfig::fixed(sigma)
        }
    };
    let a = load_feature_matrix::<f64>(&args.a)?;
    let b = load_feature_matrix::<f64>(&args.b)?;
    if a.cols() != b.cols() {
        return Err(usage(format!(
            "width mismatch: {} has {} columns, {} has {}",
            args.a.display(),
            a.cols(),
            args.b.display(),
            b.cols()
        )));
    }
    println!("{}", significant(mmd_value(&a, &b, &kernel)?, 12));
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> anyhow::Result<()> {
    let ds = match args.kind {
        DataKind::Gmm => generate_gaussian_mixture::<f64>(
            args.seed,
            &GaussianMixtureSpec {
                classes: args.classes,
                per_class: args.per_class,
                dim: args.dim,
                separation: args.separation,
                distractor_classes: args.distractor_classes,
            },
        )?,
        DataKind::Rings => generate_rings::<f64>(
            args.seed,
            &RingsSpec {
                classes: args.classes,
                per_class: args.per_class,
                noise: args.noise,
                distractor_classes: args.distractor_classes,
            },
        )?,
    };
    save_csv(&ds, &args.out)?;
    println!("wrote {} rows to {}", ds.len(), args.out.display());
    Ok(())
}

fn cmd_split(args: SplitArgs) -> anyhow::Result<()> {
    let (ds, warnings) = load_csv::<f64>(&args.data, &CsvSchema::default())?;
    for w in warnings {
        log::warn!("{w}");
    }
    let split = make_ssl_split(&ds, args.labels_per_class, args.test_fraction, args.seed)?;
    let json = serde_json::to_string_pretty(split.indices())?;
    std::fs::write(&args.out, json + "\n").with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "labeled {}, unlabeled {}, test {} -> {}",
        split.labeled().len(),
        split.unlabeled().len(),
        split.test().len(),
        args.out.display()
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match err.downcast_ref::<sscmmd::Error>() {
        Some(e) if e.is_usage() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Gradcheck(a) => match cmd_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::Mmd(a) => cmd_mmd(a),
        Command::GenData(a) => cmd_gen_data(a),
        Command::Split(a) => cmd_split(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
