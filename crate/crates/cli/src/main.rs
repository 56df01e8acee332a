use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{ArgGroup, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tas_core::channel::{generate_rayleigh, stream_rng, ChannelMatrix};
use tas_core::harness::{emit_csv, emit_summary, run_sweep, trials_jsonl, ExperimentConfig};
use tas_core::metrics::{db_to_linear, linear_to_db, Measure, MeasureKind, PowerModel};
use tas_core::oracle::{exhaustive_search, random_tas, DEFAULT_SUBSET_BUDGET};
use tas_core::precoders::PrecoderSpec;
use tas_core::stepwise::{run, trajectory_jsonl, AlgoConfig, ScanPath};
use tas_core::{Execution, TasError};

use rand::RngCore;

#[derive(Parser, Debug)]
#[command(name = "tas", version, about = "Stepwise transmit-antenna selection with power control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the selection on one channel.
    Run(RunArgs),
    /// Monte-Carlo sweep over L_max from a JSON config.
    Sweep(SweepArgs),
    /// Compare the stepwise result with exhaustive search on small instances.
    OracleCheck(OracleArgs),
    /// Time the rank-one and from-scratch candidate scans.
    Bench(BenchArgs),
    /// Write an i.i.d. Rayleigh channel to a JSON file.
    Generate(GenerateArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PrecoderArg {
    Mrt,
    Zf,
    Rzf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum MeasureArg {
    Se,
    Ee,
}

#[derive(Args, Debug)]
struct PrecoderOpts {
    #[arg(long, value_enum)]
    precoder: PrecoderArg,
    /// Ridge for rzf.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["channel", "gen"])))]
struct RunArgs {
    /// Channel JSON file.
    #[arg(long)]
    channel: Option<PathBuf>,
    /// Generate a Rayleigh channel: N,K,SEED.
    #[arg(long, value_name = "N,K,SEED")]
    gen: Option<String>,
    #[command(flatten)]
    precoder: PrecoderOpts,
    #[arg(long, value_enum)]
    measure: MeasureArg,
    #[arg(long)]
    l_max: usize,
    /// Transmit power cap in dB (0 dB = 1 W).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    p_max_db: f64,
    /// Select exactly L_max antennas instead of stopping early.
    #[arg(long)]
    force_full: bool,
    /// Write the step trajectory as JSON Lines.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write per-trial outcomes as JSON Lines.
    #[arg(long)]
    dump_trials: Option<PathBuf>,
    /// Run trials on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, value_name = "N,K,SEED")]
    gen: String,
    #[arg(long)]
    l_max: usize,
    #[command(flatten)]
    precoder: PrecoderOpts,
    #[arg(long, value_enum)]
    measure: MeasureArg,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    p_max_db: f64,
    /// Largest number of subsets the exhaustive search may score.
    #[arg(long, default_value_t = DEFAULT_SUBSET_BUDGET)]
    budget: u128,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    l_max: usize,
    #[command(flatten)]
    precoder: PrecoderOpts,
    /// Also time the from-scratch scan.
    #[arg(long)]
    naive: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Repetitions; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    repeat: usize,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::OracleCheck(a) => cmd_oracle(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Exits with status 2 like clap's own argument errors.
fn usage_error(kind: ErrorKind, msg: impl std::fmt::Display) -> ! {
    Cli::command().error(kind, msg).exit()
}

fn precoder_spec(opts: &PrecoderOpts) -> PrecoderSpec {
    match (opts.precoder, opts.lambda) {
        (PrecoderArg::Rzf, None) => usage_error(ErrorKind::MissingRequiredArgument, "--precoder rzf requires --lambda"),
        (PrecoderArg::Rzf, Some(l)) => PrecoderSpec::regularized(l)
            .unwrap_or_else(|e| usage_error(ErrorKind::InvalidValue, e)),
        (_, Some(_)) => usage_error(ErrorKind::ArgumentConflict, "--lambda only applies to --precoder rzf"),
        (PrecoderArg::Mrt, None) => PrecoderSpec::mrt(),
        (PrecoderArg::Zf, None) => PrecoderSpec::zero_forcing(),
    }
}

fn measure(kind: MeasureArg, users: usize) -> Measure {
    let kind = match kind {
        MeasureArg::Se => MeasureKind::SpectralEfficiency,
        MeasureArg::Ee => MeasureKind::EnergyEfficiency,
    };
    Measure::uniform(kind, users, PowerModel::reference()).expect("uniform weights are valid")
}

fn parse_gen(spec: &str) -> (usize, usize, u64) {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let parsed = match parts.as_slice() {
        [n, k, s] => n.parse().ok().zip(k.parse().ok()).zip(s.parse().ok()),
        _ => None,
    };
    match parsed {
        Some(((n, k), s)) => (n, k, s),
        None => usage_error(ErrorKind::ValueValidation, format!("--gen expects N,K,SEED, got {spec:?}")),
    }
}

fn unit(kind: MeasureKind) -> &'static str {
    match kind {
        MeasureKind::SpectralEfficiency => "bits/s/Hz",
        MeasureKind::EnergyEfficiency => "bits/Joule",
    }
}

fn write(path: &Path, text: &str) -> Result<(), TasError> {
    fs::write(path, text).map_err(|e| TasError::io(path, e))
}

fn cmd_run(a: RunArgs) -> Result<(), TasError> {
    let spec = precoder_spec(&a.precoder);
    let channel = match (&a.channel, &a.gen) {
        (Some(path), None) => ChannelMatrix::load(path)?,
        (None, Some(g)) => {
            let (n, k, seed) = parse_gen(g);
            generate_rayleigh(n, k, seed)?
        }
        _ => unreachable!("clap enforces exactly one channel source"),
    };
    let m = measure(a.measure, channel.n_users());
    let kind = m.kind();
    let config = AlgoConfig::new(a.l_max, db_to_linear(a.p_max_db), spec, m).forced(a.force_full);
    let result = run(&channel, &config)?;

    println!(
        "channel: N={} K={} seed={} label={}",
        channel.n_antennas(),
        channel.n_users(),
        channel.seed(),
        channel.label()
    );
    println!("precoder: {spec}");
    println!("L* = {}", result.l_star);
    println!("P* = {:.9} W ({:.6} dB)", result.p_star, linear_to_db(result.p_star));
    let subset: Vec<String> = result.selected_sorted().iter().map(ToString::to_string).collect();
    println!("S(L*) = {{{}}}", subset.join(", "));
    println!("{} = {:.12} {}", config.measure.name(), result.value, unit(kind));
    if let Some(path) = &a.out {
        write(path, &trajectory_jsonl(&result))?;
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), TasError> {
    let config = ExperimentConfig::load(&a.config)?;
    let exec = if a.sequential { Execution::Sequential } else { Execution::Parallel };
    let result = run_sweep(&config, exec)?;
    emit_csv(&result, &a.out)?;
    if let Some(path) = &a.dump_trials {
        write(path, &trials_jsonl(&result))?;
    }
    print!("{}", emit_summary(&result, &config));
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> Result<(), TasError> {
    let spec = precoder_spec(&a.precoder);
    let (n, k, master) = parse_gen(&a.gen);
    if a.trials == 0 {
        usage_error(ErrorKind::InvalidValue, "--trials must be positive");
    }
    let config = AlgoConfig::new(a.l_max, db_to_linear(a.p_max_db), spec, measure(a.measure, k));
    let mut ratios = Vec::with_capacity(a.trials);
    let mut random_ratios = Vec::with_capacity(a.trials);
    let mut optimal = 0usize;
    println!("trial,seed,stepwise,optimum,ratio,random,random_ratio");
    for t in 0..a.trials {
        let mut rng = stream_rng(master, t as u64);
        let seed = rng.next_u64();
        let channel = generate_rayleigh(n, k, seed)?;
        let oracle = exhaustive_search(&channel, &config, a.budget)?;
        let greedy = run(&channel, &config)?;
        let rnd = random_tas(&channel, greedy.l_star, spec, &config.measure, config.p_max, &config.search, &mut rng)?;
        let opt = oracle.best.value;
        let ratio = greedy.value / opt;
        let rnd_ratio = rnd.value / opt;
        if ratio >= 1.0 - 1e-9 {
            optimal += 1;
        }
        println!("{t},{seed},{:.12},{opt:.12},{ratio:.12},{:.12},{rnd_ratio:.12}", greedy.value, rnd.value);
        ratios.push(ratio);
        random_ratios.push(rnd_ratio);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("mean_ratio = {:.12}", mean(&ratios));
    println!("max_ratio = {:.12}", ratios.iter().copied().fold(f64::MIN, f64::max));
    println!("optimal_fraction = {:.6}", optimal as f64 / a.trials as f64);
    println!("mean_random_ratio = {:.12}", mean(&random_ratios));
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), TasError> {
    let spec = precoder_spec(&a.precoder);
    let channel = generate_rayleigh(a.n, a.k, a.seed)?;
    let base = AlgoConfig::new(a.l_max, 1.0, spec, measure(MeasureArg::Ee, a.k)).forced(true);
    let mut paths = vec![("rank_one", ScanPath::RankOne)];
    if a.naive {
        paths.push(("naive", ScanPath::Naive));
    }
    for (name, scan) in paths {
        let config = base.clone().with_scan(scan);
        let mut best = f64::INFINITY;
        let mut scanned = 0;
        for _ in 0..a.repeat.max(1) {
            let start = Instant::now();
            let r = run(&channel, &config)?;
            best = best.min(start.elapsed().as_secs_f64());
            scanned = r.candidates_scanned;
        }
        let line = json!({
            "path": name,
            "n": a.n,
            "k": a.k,
            "l_max": a.l_max,
            "precoder": spec.name(),
            "candidates": scanned,
            "total_seconds": best,
            "per_candidate_ns": best * 1e9 / scanned.max(1) as f64,
        });
        println!("{line}");
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<(), TasError> {
    let channel = generate_rayleigh(a.n, a.k, a.seed)?;
    channel.save(&a.out)?;
    println!("wrote {} ({}x{}, seed {})", a.out.display(), a.n, a.k, a.seed);
    Ok(())
}
