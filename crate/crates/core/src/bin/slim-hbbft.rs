//! Command-line driver: single runs, sweeps, trace checking and baseline sizes.
//!
//! Exit codes: 0 success, 1 a property was violated (or a trace is malformed),
//! 2 invalid usage or parameters.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use slim_hbbft::crypto::{DealerCrypto, ThresholdCrypto};
use slim_hbbft::harness::{
    baseline_bytes, check_lemmas, run_sweep, trace_dir, write_outputs, LemmaReport, MetricsReport,
    Phase, RunOptions, SweepFile, SweepReport,
};
use slim_hbbft::sim::{
    run_with_crypto, AdversaryProfile, SchedulerPolicy, SimError, Trace, TraceError,
};

const EXIT_VIOLATION: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "slim-hbbft",
    version,
    about = "Committee-based asynchronous atomic broadcast simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one configuration, write its trace and check it.
    Run(RunArgs),
    /// Run a parameter sweep described by a TOML file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a recorded trace.
    Check {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Print the per-epoch byte cost of the all-parties-propose baseline.
    Baseline {
        #[arg(long)]
        n: usize,
        /// Batch bytes per proposer.
        #[arg(long)]
        v: usize,
        /// Security parameter in bytes.
        #[arg(long)]
        k: usize,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    f: usize,
    /// Committee size; defaults to f + 1.
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    /// Security parameter K in bytes.
    #[arg(long, default_value_t = 32)]
    sec_param: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    epochs: u32,
    /// none, crash, mute, equivocate, withhold or garbage.
    #[arg(long, default_value = "none")]
    adversary: AdversaryProfile,
    /// fair, targeted-delay[:PARTY[:KIND|ANY[:AGE]]] or send-order[:AGE].
    #[arg(long, default_value = "fair")]
    scheduler: SchedulerPolicy,
    #[arg(long, default_value_t = 1)]
    promotion_steps: u16,
    /// Make every proposer's batch encode to exactly this many bytes.
    #[arg(long)]
    payload_bytes: Option<usize>,
    /// Deliveries before the run counts as a liveness failure.
    #[arg(long)]
    max_steps: Option<u64>,
    /// Use the dealer key file at this path instead of dealing fresh keys.
    #[arg(long)]
    keys: Option<PathBuf>,
    /// Save the dealt keys to this path.
    #[arg(long)]
    key_out: Option<PathBuf>,
    /// Trace file; the directory is replaced by $SLIM_HBBFT_TRACE_DIR when set.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

fn usage_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep { config, out } => cmd_sweep(&config, &out),
        Command::Check { trace } => cmd_check(&trace),
        Command::Baseline { n, v, k } => cmd_baseline(n, v, k),
    }
}

fn trace_path(args: &RunArgs) -> PathBuf {
    let name = format!("trace-n{}-f{}-s{}.jsonl", args.n, args.f, args.seed);
    match &args.trace_out {
        Some(p) => {
            let file = p
                .file_name()
                .map(PathBuf::from)
                .unwrap_or_else(|| name.into());
            let parent = p.parent().map(Path::to_path_buf).unwrap_or_default();
            trace_dir(parent).join(file)
        }
        None => trace_dir(".").join(name),
    }
}

fn print_report(report: &LemmaReport) {
    for (name, flag) in report.flags() {
        match (&flag.counterexample, &flag.detail) {
            (Some(i), detail) => println!(
                "{name:<15} FAIL event {i} (line {}): {}",
                i + 2,
                detail.as_deref().unwrap_or("")
            ),
            _ => println!("{name:<15} ok"),
        }
    }
    if !report.lemma2_full.holds {
        println!(
            "note: stored-proposal reach below 2f+1 at event {} ({})",
            report.lemma2_full.counterexample.unwrap_or(0),
            report.lemma2_full.detail.as_deref().unwrap_or("")
        );
    }
    println!("mean_aba_rounds {:.4}", report.mean_aba_rounds);
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let opts = RunOptions {
        n: args.n,
        f: args.f,
        kappa: args.kappa,
        batch_size: args.batch_size,
        sec_param: args.sec_param,
        seed: args.seed,
        epochs: args.epochs,
        adversary: args.adversary,
        scheduler: args.scheduler,
        promotion_steps: args.promotion_steps,
        batch_bytes: args.payload_bytes,
        max_steps: args.max_steps,
    };
    let config = match opts.to_config() {
        Ok(c) => c,
        Err(e) => return usage_error(e),
    };
    let crypto = match &args.keys {
        Some(path) => match DealerCrypto::load(path) {
            Ok(k)
                if k.seed() == args.seed && k.n() == args.n && k.sec_param() == args.sec_param =>
            {
                k
            }
            Ok(_) => return usage_error("key file does not match --n, --sec-param and --seed"),
            Err(e) => return usage_error(format!("{}: {e}", path.display())),
        },
        None => DealerCrypto::deal(&config.params),
    };
    if let Some(path) = &args.key_out {
        if let Err(e) = crypto.save(path) {
            return usage_error(format!("{}: {e}", path.display()));
        }
    }
    let (trace, timeout) = match run_with_crypto(&config, Arc::new(crypto)) {
        Ok(t) => (t, None),
        Err(SimError::LivenessTimeout {
            steps,
            reason,
            trace,
        }) => (
            *trace,
            Some(format!("liveness timeout after {steps} steps: {reason}")),
        ),
        Err(e) => return usage_error(e),
    };

    let path = trace_path(&args);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        if let Err(e) = std::fs::create_dir_all(dir) {
            return usage_error(format!("{}: {e}", dir.display()));
        }
    }
    let blocks_dir = path.with_extension("blocks");
    if let Err(e) = trace
        .write_jsonl(&path)
        .and_then(|_| trace.write_block_logs(&blocks_dir))
    {
        return usage_error(format!("{}: {e}", path.display()));
    }

    let p = config.params;
    println!(
        "run n={} f={} kappa={} seed={} epochs={} adversary={} scheduler={}",
        p.n(),
        p.f(),
        p.kappa(),
        p.seed(),
        config.epochs,
        args.adversary,
        config.scheduler
    );
    println!("trace {} sha256={}", path.display(), trace.digest().hex());
    println!("blocks {}", blocks_dir.display());
    let m = MetricsReport::from_trace(&trace);
    let v = config.workload.batch_bytes(p.batch_size());
    let ratio =
        m.total.bytes as f64 / (f64::from(config.epochs) * baseline_bytes(p.n(), v, p.sec_param()));
    println!(
        "steps={} messages={} bytes={} ratio={ratio:.6}",
        trace.outcome.steps, m.total.messages, m.total.bytes
    );
    for phase in Phase::ALL {
        let c = m.phase(phase);
        println!(
            "phase {:<10} messages={} bytes={}",
            phase.name(),
            c.messages,
            c.bytes
        );
    }
    let report = match check_lemmas(&trace) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VIOLATION);
        }
    };
    print_report(&report);
    if let Some(t) = &timeout {
        println!("{t}");
    }
    if timeout.is_some() || !report.all_hold() {
        ExitCode::from(EXIT_VIOLATION)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_sweep(config: &Path, out: &Path) -> ExitCode {
    let cells = match SweepFile::load(config).and_then(|f| f.cells()) {
        Ok(c) => c,
        Err(e) => return usage_error(e),
    };
    let traces = trace_dir(out.join("traces"));
    let results = match run_sweep(&cells, Some(&traces)) {
        Ok(r) => r,
        Err(e) => return usage_error(e),
    };
    let report = SweepReport::from_results(&results);
    if let Err(e) = write_outputs(out, &results, &report) {
        return usage_error(e);
    }
    println!("sweep runs={} out={}", report.runs, out.display());
    for g in &report.groups {
        println!(
            "n={:<3} adversary={:<10} runs={:<4} bytes/epoch={:.1} baseline={:.1} ratio={:.6} aba_rounds={:.4}",
            g.n, g.adversary, g.runs, g.mean_bytes_per_epoch, g.baseline_bytes, g.mean_ratio, g.mean_aba_rounds
        );
    }
    for s in &report.scaling {
        println!(
            "table {} exponent={} ratio_strictly_decreasing={} formulas_exact={}",
            s.table,
            s.exponent.map_or("n/a".into(), |e| format!("{e:.4}")),
            s.ratio_strictly_decreasing,
            s.formulas_exact
        );
    }
    for (n, adv, seed, v) in &report.violations {
        println!(
            "violation n={n} adversary={adv} seed={seed}: {}",
            v.join(",")
        );
    }
    if report.violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VIOLATION)
    }
}

fn cmd_check(path: &Path) -> ExitCode {
    let trace = match Trace::read_jsonl(path) {
        Ok(t) => t,
        Err(TraceError::Io(e)) => return usage_error(format!("{}: {e}", path.display())),
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(EXIT_VIOLATION);
        }
    };
    println!("trace {} sha256={}", path.display(), trace.digest().hex());
    match check_lemmas(&trace) {
        Ok(report) => {
            print_report(&report);
            if report.all_hold() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VIOLATION)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_VIOLATION)
        }
    }
}

fn cmd_baseline(n: usize, v: usize, k: usize) -> ExitCode {
    if n < 4 {
        return usage_error("n must be at least 4");
    }
    println!("{:.1}", baseline_bytes(n, v, k));
    ExitCode::SUCCESS
}
