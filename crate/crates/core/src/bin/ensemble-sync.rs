use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use ensemble_sync::io::{self, ConfigFile};
use ensemble_sync::model::{filter_performance, smooth_performance, EnsembleConfig, IoiSeries};
use ensemble_sync::recovery::{sweep, RecoveryReport, RecoverySetup};
use ensemble_sync::synth::{make_script, simulate, Condition, SimulationParams};
use ensemble_sync::{Error, Execution, Result};

#[derive(Parser)]
#[command(name = "ensemble-sync", version, about = "Time-varying phase/period correction gains for ensemble timing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a performance with known gains.
    Simulate(SimulateArgs),
    /// Kalman-filter a performance and write filtered gains.
    Filter(FitArgs),
    /// Filter and smooth a performance and write smoothed gains.
    Smooth(FitArgs),
    /// Simulate, smooth and compare recovered gains with the truth.
    Recover(RecoverArgs),
    /// Time smoothing (median over repetitions).
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    condition: Condition,
    #[arg(long = "K")]
    k: usize,
    #[arg(long = "N")]
    n: usize,
    /// Base timekeeper period, ms.
    #[arg(long = "base-T", default_value_t = 500.0)]
    base_t: f64,
    /// Leader (1-based); required for the speed condition.
    #[arg(long)]
    leader: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Onset noise standard deviation, ms.
    #[arg(long = "sigma-t", default_value_t = EnsembleConfig::DEFAULT_SIGMA_T2.sqrt())]
    sigma_t: f64,
    /// True phase correction gain on every pair.
    #[arg(long, default_value_t = EnsembleConfig::DEFAULT_ALPHA_INIT)]
    alpha: f64,
    /// True period correction gain on every pair.
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    /// Onset CSV output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ground-truth gain CSV output.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long)]
    condition: Condition,
    #[arg(long = "K")]
    k: usize,
    #[arg(long = "N")]
    n: usize,
    /// First seed; trials use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    trials: u64,
    #[arg(long)]
    leader: Option<usize>,
    #[arg(long = "sigma-t", default_value_t = EnsembleConfig::DEFAULT_SIGMA_T2.sqrt())]
    sigma_t: f64,
    #[arg(long, default_value_t = EnsembleConfig::DEFAULT_ALPHA_INIT)]
    alpha: f64,
    /// Scripted rise of followers' α toward the leader (and fall of the
    /// leader's own α) over the tempo-change window.
    #[arg(long = "leader-drift", default_value_t = 0.0)]
    leader_drift: f64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    /// Run trials one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Performance to smooth; a simulated K=4, N=46 normal performance when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_config(path: Option<&Path>, k: usize) -> Result<EnsembleConfig> {
    match path {
        Some(p) => ConfigFile::read(p)?.resolve(k),
        None => EnsembleConfig::new(k),
    }
}

fn load_performance(path: &Path) -> Result<IoiSeries> {
    let perf = io::read_performance(path)?;
    for w in &perf.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(perf.series)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let script = make_script(a.condition, a.k, a.n, a.base_t, a.leader, a.seed)?;
    let params = SimulationParams::uniform(a.k, a.n, a.alpha, a.beta, a.sigma_t, script, a.seed);
    let (timeline, truth) = simulate(&params)?;
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            io::write_onsets(&mut w, &timeline)?;
            w.flush()?;
        }
        None => io::write_onsets(std::io::stdout().lock(), &timeline)?,
    }
    if let Some(p) = &a.truth {
        let mut w = create(p)?;
        io::write_truth(&mut w, a.k, &truth)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_fit(a: FitArgs, smooth: bool) -> Result<()> {
    let data = load_performance(&a.input)?;
    let config = load_config(a.config.as_deref(), data.k())?;
    let start = Instant::now();
    let fit = if smooth { smooth_performance(&data, &config)? } else { filter_performance(&data, &config)? };
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let loglik = fit.loglik()?;
    let mut w = create(&a.out)?;
    io::write_gains(&mut w, &fit.gains)?;
    w.flush()?;
    println!("N={} K={} runtime_ms={ms:.3} loglik={}", data.len(), data.k(), io::fmt_real(loglik));
    Ok(())
}

fn write_report(mut w: impl Write, setup: &RecoverySetup, reports: &[RecoveryReport]) -> Result<()> {
    writeln!(w, "# condition: {}", setup.condition)?;
    writeln!(w, "# K: {}", setup.k)?;
    writeln!(w, "# N: {}", setup.n)?;
    if let Some(l) = setup.leader {
        writeln!(w, "# leader: {l}")?;
    }
    if let Some(r) = reports.first() {
        writeln!(w, "# window: {},{}", r.window.0, r.window.1)?;
    }
    writeln!(w, "seed,i,j,mae_final_quarter,mean_final_quarter,truth_final_quarter,window_slope,slope_sign")?;
    for r in reports {
        for p in &r.pairs {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.seed,
                p.i,
                p.j,
                io::fmt_real(p.mae_final_quarter),
                io::fmt_real(p.mean_final_quarter),
                io::fmt_real(p.truth_final_quarter),
                io::fmt_real(p.window_slope),
                p.window_slope.signum() as i32
            )?;
        }
    }
    Ok(())
}

fn cmd_recover(a: RecoverArgs) -> Result<()> {
    let mut setup = RecoverySetup::new(a.condition, a.k, a.n, a.leader)?;
    setup.config = load_config(a.config.as_deref(), a.k)?;
    setup.sigma_t = a.sigma_t;
    setup.alpha.init = a.alpha;
    setup.leader_drift = a.leader_drift;
    // Surface flag errors before running any trial.
    setup.params(a.seed)?.validate()?;

    let seeds: Vec<u64> = (a.seed..a.seed + a.trials.max(1)).collect();
    let exec = if a.sequential { Execution::Sequential } else { Execution::Parallel };
    let reports = sweep(exec, &setup, &seeds).into_iter().collect::<Result<Vec<_>>>()?;

    let mut w = create(&a.report)?;
    write_report(&mut w, &setup, &reports)?;
    w.flush()?;

    for r in &reports {
        let leadership = match r.leader {
            Some(_) => format!(" leadership={}", r.shows_leadership()),
            None => String::new(),
        };
        println!("seed={} max_mae={:.4}{leadership}", r.seed, r.max_mae());
    }
    if reports.len() > 1 {
        let within = reports.iter().filter(|r| r.max_mae() <= 0.1).count();
        println!("trials={} max_mae<=0.1: {within}", reports.len());
        if setup.leader.is_some() {
            let led = reports.iter().filter(|r| r.shows_leadership()).count();
            println!("leadership pattern: {led}/{}", reports.len());
        }
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let data = match &a.input {
        Some(p) => load_performance(p)?,
        None => {
            let (k, n) = (4, 46);
            let script = make_script(Condition::Normal, k, n, 500.0, None, a.seed)?;
            let sigma_t = EnsembleConfig::DEFAULT_SIGMA_T2.sqrt();
            let params =
                SimulationParams::uniform(k, n, EnsembleConfig::DEFAULT_ALPHA_INIT, 0.0, sigma_t, script, a.seed);
            simulate(&params)?.0.to_ioi_series()?
        }
    };
    let config = load_config(a.config.as_deref(), data.k())?;
    let reps = a.reps.max(1);
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        smooth_performance(&data, &config)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let median = if reps % 2 == 1 { times[reps / 2] } else { 0.5 * (times[reps / 2 - 1] + times[reps / 2]) };
    println!(
        "N={} K={} reps={reps} median_ms={median:.3} min_ms={:.3} max_ms={:.3}",
        data.len(),
        data.k(),
        times[0],
        times[reps - 1]
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Filter(a) => cmd_fit(a, false),
        Command::Smooth(a) => cmd_fit(a, true),
        Command::Recover(a) => cmd_recover(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let runtime = e.is_numerical() || matches!(e, Error::Io(_) | Error::OracleTooLarge { .. });
            ExitCode::from(if runtime { 1 } else { 2 })
        }
    }
}
