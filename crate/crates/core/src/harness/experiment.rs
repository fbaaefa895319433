//! Single runs from flat options, and parameter sweeps from a TOML file.
//!
//! A sweep file holds one or more `[[sweep]]` tables:
//!
//! ```toml
//! [[sweep]]
//! n = [4, 7, 10, 13]
//! seeds = 20
//! epochs = 1
//! adversaries = ["none"]
//! scheduler = "fair"
//! batch_bytes = 256
//! sec_param = 32
//! ```
//!
//! Every (table, n, adversary, seed) cell is simulated in parallel; results keep
//! cell order, so the outputs are deterministic.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::checks::{check_lemmas, LemmaReport};
use super::metrics::{baseline_bytes, expected_phase_bytes, loglog_slope, MetricsReport, Phase};
use crate::crypto::Digest;
use crate::params::ProtocolParams;
use crate::sim::{
    default_max_steps, run_simulation, AdversaryProfile, SchedulerPolicy, SimConfig, SimError,
    Trace, Workload,
};

/// Environment variable overriding where traces are written.
pub const TRACE_DIR_ENV: &str = "SLIM_HBBFT_TRACE_DIR";

/// Directory for trace files: `$SLIM_HBBFT_TRACE_DIR` if set, else `default`.
pub fn trace_dir(default: impl Into<PathBuf>) -> PathBuf {
    match std::env::var_os(TRACE_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => default.into(),
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("sweep config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Flat description of one run, as taken by the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub n: usize,
    pub f: usize,
    pub kappa: Option<usize>,
    pub batch_size: usize,
    pub sec_param: usize,
    pub seed: u64,
    pub epochs: u32,
    pub adversary: AdversaryProfile,
    pub scheduler: SchedulerPolicy,
    pub promotion_steps: u16,
    /// Exact plaintext bytes of every proposer's batch; `None` keeps the default
    /// request size.
    pub batch_bytes: Option<usize>,
    pub max_steps: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            n: 4,
            f: 1,
            kappa: None,
            batch_size: 1,
            sec_param: 32,
            seed: 0,
            epochs: 1,
            adversary: AdversaryProfile::None,
            scheduler: SchedulerPolicy::Fair,
            promotion_steps: 1,
            batch_bytes: None,
            max_steps: None,
        }
    }
}

impl RunOptions {
    pub fn params(&self) -> Result<ProtocolParams, ExperimentError> {
        ProtocolParams::new(
            self.n,
            self.f,
            self.kappa.unwrap_or(self.f + 1),
            self.batch_size,
            self.sec_param,
            self.seed,
        )
        .map_err(|e| ExperimentError::Params(e.to_string()))
    }

    pub fn to_config(&self) -> Result<SimConfig, ExperimentError> {
        let params = self.params()?;
        let mut cfg = SimConfig::new(params, self.epochs);
        cfg.scheduler = self.scheduler;
        cfg.byzantine = self.adversary.assign(&params, self.seed);
        cfg.promotion_steps = self.promotion_steps;
        cfg.max_steps = self
            .max_steps
            .unwrap_or_else(|| default_max_steps(&params, self.epochs));
        let needed = self.batch_size * self.epochs as usize;
        cfg.workload = match self.batch_bytes {
            Some(v) => {
                Workload::fixed_batch_bytes(v, self.batch_size, self.epochs).ok_or_else(|| {
                    ExperimentError::Params(format!(
                        "batch of {v} bytes cannot hold {} equal requests",
                        self.batch_size
                    ))
                })?
            }
            None => Workload {
                requests_per_party: Workload::default().requests_per_party.max(needed),
                ..Workload::default()
            },
        };
        cfg.validate()
            .map_err(|e| ExperimentError::Params(e.to_string()))?;
        Ok(cfg)
    }
}

/// Result of simulating and checking one configuration.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub trace: Trace,
    pub report: LemmaReport,
    pub metrics: MetricsReport,
    /// Set when the run hit the liveness cap.
    pub timeout: Option<String>,
    pub digest: Digest,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.timeout.is_none() && self.report.all_hold()
    }

    /// Names of violated properties, `liveness` first if the run timed out.
    pub fn violations(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .timeout
            .iter()
            .map(|_| "liveness".to_string())
            .collect();
        v.extend(
            self.report
                .violations()
                .into_iter()
                .map(|(n, _)| n.to_string()),
        );
        v
    }
}

/// Simulates `cfg` and checks the resulting trace. A liveness timeout is recorded,
/// not returned as an error, so its partial trace can still be inspected.
pub fn run_and_check(cfg: &SimConfig) -> Result<RunRecord, ExperimentError> {
    let (trace, timeout) = match run_simulation(cfg) {
        Ok(t) => (t, None),
        Err(SimError::LivenessTimeout {
            steps,
            reason,
            trace,
        }) => (*trace, Some(format!("after {steps} steps: {reason}"))),
        Err(SimError::ConfigInvalid(e)) => return Err(ExperimentError::Params(e)),
    };
    let report = check_lemmas(&trace).map_err(|e| ExperimentError::Params(e.to_string()))?;
    Ok(RunRecord {
        metrics: MetricsReport::from_trace(&trace),
        digest: trace.digest(),
        report,
        timeout,
        trace,
    })
}

fn default_seeds() -> u64 {
    20
}
fn default_epochs() -> u32 {
    1
}
fn default_adversaries() -> Vec<String> {
    vec!["none".into()]
}
fn default_scheduler() -> String {
    "fair".into()
}
fn default_batch_bytes() -> usize {
    256
}
fn default_one() -> usize {
    1
}
fn default_sec_param() -> usize {
    32
}
fn default_steps() -> u16 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub n: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default = "default_adversaries")]
    pub adversaries: Vec<String>,
    #[serde(default = "default_scheduler")]
    pub scheduler: String,
    #[serde(default = "default_batch_bytes")]
    pub batch_bytes: usize,
    #[serde(default = "default_one")]
    pub batch_size: usize,
    #[serde(default = "default_sec_param")]
    pub sec_param: usize,
    pub kappa: Option<usize>,
    #[serde(default = "default_steps")]
    pub promotion_steps: u16,
    #[serde(default)]
    pub write_traces: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub sweep: Vec<SweepSpec>,
}

impl SweepFile {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let file: SweepFile =
            toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        if file.sweep.is_empty() {
            return Err(ExperimentError::Config("no [[sweep]] tables".into()));
        }
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Expands every table into run cells, validating each.
    pub fn cells(&self) -> Result<Vec<Cell>, ExperimentError> {
        let mut out = Vec::new();
        for (table, spec) in self.sweep.iter().enumerate() {
            let scheduler: SchedulerPolicy = spec
                .scheduler
                .parse()
                .map_err(|e: String| ExperimentError::Config(e))?;
            let adversaries = spec
                .adversaries
                .iter()
                .map(|a| a.parse::<AdversaryProfile>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(ExperimentError::Config)?;
            for &n in &spec.n {
                if n < 4 || (n - 1) % 3 != 0 {
                    return Err(ExperimentError::Params(format!(
                        "n = {n} is not 3f + 1 with f >= 1"
                    )));
                }
                for &adversary in &adversaries {
                    for seed in spec.seed_base..spec.seed_base + spec.seeds {
                        let opts = RunOptions {
                            n,
                            f: (n - 1) / 3,
                            kappa: spec.kappa,
                            batch_size: spec.batch_size,
                            sec_param: spec.sec_param,
                            seed,
                            epochs: spec.epochs,
                            adversary,
                            scheduler,
                            promotion_steps: spec.promotion_steps,
                            batch_bytes: Some(spec.batch_bytes),
                            max_steps: None,
                        };
                        let config = opts.to_config()?;
                        out.push(Cell {
                            table,
                            adversary,
                            batch_bytes: spec.batch_bytes,
                            write_trace: spec.write_traces,
                            config,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One simulation of a sweep.
#[derive(Debug, Clone)]
pub struct Cell {
    pub table: usize,
    pub adversary: AdversaryProfile,
    pub batch_bytes: usize,
    pub write_trace: bool,
    pub config: SimConfig,
}

/// One CSV line; `runs.csv` has one per cell (phase `total`), `phases.csv` one per
/// cell and phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub n: usize,
    pub f: usize,
    pub kappa: usize,
    pub seed: u64,
    pub adversary: String,
    pub epochs: u32,
    pub phase: String,
    pub messages: u64,
    pub bytes: u64,
    pub baseline_bytes: String,
    pub ratio: String,
    pub agreement: bool,
    pub totality: bool,
    pub lemma1: bool,
    pub lemma2: bool,
    pub censorship_ok: bool,
    pub mean_aba_rounds: String,
}

/// Outcome of one cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub table: usize,
    pub n: usize,
    pub f: usize,
    pub kappa: usize,
    pub seed: u64,
    pub adversary: String,
    pub epochs: u32,
    pub batch_bytes: usize,
    pub sec_param: usize,
    pub messages: u64,
    pub bytes: u64,
    pub phases: BTreeMap<Phase, (u64, u64)>,
    /// Per-phase bytes equal the closed form (honest runs only).
    pub formulas_exact: Option<bool>,
    pub violations: Vec<String>,
    pub agreement: bool,
    pub totality: bool,
    pub lemma1: bool,
    pub lemma2: bool,
    pub censorship_ok: bool,
    pub mean_aba_rounds: f64,
    pub digest: String,
}

impl CellResult {
    pub fn baseline(&self) -> f64 {
        baseline_bytes(self.n, self.batch_bytes, self.sec_param)
    }

    /// Measured bytes per epoch over baseline bytes per epoch.
    pub fn ratio(&self, bytes: u64) -> f64 {
        bytes as f64 / (f64::from(self.epochs) * self.baseline())
    }

    fn row(&self, phase: &str, messages: u64, bytes: u64) -> CsvRow {
        CsvRow {
            n: self.n,
            f: self.f,
            kappa: self.kappa,
            seed: self.seed,
            adversary: self.adversary.clone(),
            epochs: self.epochs,
            phase: phase.to_string(),
            messages,
            bytes,
            baseline_bytes: format!("{:.1}", self.baseline()),
            ratio: format!("{:.6}", self.ratio(bytes)),
            agreement: self.agreement,
            totality: self.totality,
            lemma1: self.lemma1,
            lemma2: self.lemma2,
            censorship_ok: self.censorship_ok,
            mean_aba_rounds: format!("{:.4}", self.mean_aba_rounds),
        }
    }

    pub fn total_row(&self) -> CsvRow {
        self.row("total", self.messages, self.bytes)
    }

    pub fn phase_rows(&self) -> Vec<CsvRow> {
        self.phases
            .iter()
            .map(|(p, (m, b))| self.row(p.name(), *m, *b))
            .collect()
    }
}

pub fn run_cell(cell: &Cell, trace_out: Option<&Path>) -> Result<CellResult, ExperimentError> {
    let rec = run_and_check(&cell.config)?;
    let p = cell.config.params;
    if let Some(dir) = trace_out.filter(|_| cell.write_trace) {
        fs::create_dir_all(dir)?;
        rec.trace.write_jsonl(dir.join(format!(
            "sweep{}-n{}-{}-s{}.jsonl",
            cell.table,
            p.n(),
            cell.adversary,
            p.seed()
        )))?;
    }
    let formulas_exact =
        (cell.adversary == AdversaryProfile::None && rec.timeout.is_none()).then(|| {
            let expected = expected_phase_bytes(&rec.trace, cell.batch_bytes);
            Phase::ALL
                .iter()
                .all(|ph| rec.metrics.phase(*ph).bytes == expected[ph])
        });
    let r = &rec.report;
    Ok(CellResult {
        table: cell.table,
        n: p.n(),
        f: p.f(),
        kappa: p.kappa(),
        seed: p.seed(),
        adversary: cell.adversary.to_string(),
        epochs: cell.config.epochs,
        batch_bytes: cell.batch_bytes,
        sec_param: p.sec_param(),
        messages: rec.metrics.total.messages,
        bytes: rec.metrics.total.bytes,
        phases: rec
            .metrics
            .phases
            .iter()
            .map(|(ph, c)| (*ph, (c.messages, c.bytes)))
            .collect(),
        formulas_exact,
        violations: rec.violations(),
        agreement: r.agreement.holds,
        totality: r.totality.holds && rec.timeout.is_none(),
        lemma1: r.lemma1.holds,
        lemma2: r.lemma2.holds,
        censorship_ok: r.censorship.holds,
        mean_aba_rounds: r.mean_aba_rounds,
        digest: rec.digest.hex(),
    })
}

/// Mean figures of one (table, n, adversary) group.
#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub table: usize,
    pub n: usize,
    pub adversary: String,
    pub runs: usize,
    pub mean_bytes_per_epoch: f64,
    pub baseline_bytes: f64,
    pub mean_ratio: f64,
    pub mean_aba_rounds: f64,
}

/// Scaling figures of one table's honest runs.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingSummary {
    pub table: usize,
    /// Least-squares exponent of mean bytes per epoch against n.
    pub exponent: Option<f64>,
    /// Mean measured/baseline ratio strictly decreases as n grows.
    pub ratio_strictly_decreasing: bool,
    /// Every honest run matched the closed-form per-phase bytes.
    pub formulas_exact: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub runs: usize,
    pub groups: Vec<GroupSummary>,
    pub scaling: Vec<ScalingSummary>,
    /// `(n, adversary, seed, violated properties)` of failing runs.
    pub violations: Vec<(usize, String, u64, Vec<String>)>,
}

impl SweepReport {
    pub fn from_results(results: &[CellResult]) -> Self {
        let mut groups: BTreeMap<(usize, usize, String), Vec<&CellResult>> = BTreeMap::new();
        for r in results {
            groups
                .entry((r.table, r.n, r.adversary.clone()))
                .or_default()
                .push(r);
        }
        let groups: Vec<GroupSummary> = groups
            .into_iter()
            .map(|((table, n, adversary), rs)| {
                let len = rs.len() as f64;
                let mean =
                    |g: &dyn Fn(&CellResult) -> f64| rs.iter().map(|r| g(r)).sum::<f64>() / len;
                GroupSummary {
                    table,
                    n,
                    adversary,
                    runs: rs.len(),
                    mean_bytes_per_epoch: mean(&|r| r.bytes as f64 / f64::from(r.epochs)),
                    baseline_bytes: rs[0].baseline(),
                    mean_ratio: mean(&|r| r.ratio(r.bytes)),
                    mean_aba_rounds: mean(&|r| r.mean_aba_rounds),
                }
            })
            .collect();
        let tables: std::collections::BTreeSet<usize> = results.iter().map(|r| r.table).collect();
        let scaling = tables
            .into_iter()
            .map(|table| {
                let honest: Vec<&GroupSummary> = groups
                    .iter()
                    .filter(|g| g.table == table && g.adversary == "none")
                    .collect();
                let points: Vec<(f64, f64)> = honest
                    .iter()
                    .map(|g| (g.n as f64, g.mean_bytes_per_epoch))
                    .collect();
                ScalingSummary {
                    table,
                    exponent: loglog_slope(&points),
                    ratio_strictly_decreasing: honest.len() >= 2
                        && honest.windows(2).all(|w| w[1].mean_ratio < w[0].mean_ratio),
                    formulas_exact: results
                        .iter()
                        .filter(|r| r.table == table && r.adversary == "none")
                        .all(|r| r.formulas_exact == Some(true)),
                }
            })
            .collect();
        SweepReport {
            runs: results.len(),
            groups,
            scaling,
            violations: results
                .iter()
                .filter(|r| !r.violations.is_empty())
                .map(|r| (r.n, r.adversary.clone(), r.seed, r.violations.clone()))
                .collect(),
        }
    }
}

/// Runs every cell in parallel, preserving cell order.
pub fn run_sweep(
    cells: &[Cell],
    trace_out: Option<&Path>,
) -> Result<Vec<CellResult>, ExperimentError> {
    cells.par_iter().map(|c| run_cell(c, trace_out)).collect()
}

/// Writes `runs.csv`, `phases.csv` and `report.json` into `out`.
pub fn write_outputs(
    out: &Path,
    results: &[CellResult],
    report: &SweepReport,
) -> Result<(), ExperimentError> {
    fs::create_dir_all(out)?;
    let mut runs = csv::Writer::from_path(out.join("runs.csv"))?;
    let mut phases = csv::Writer::from_path(out.join("phases.csv"))?;
    for r in results {
        runs.serialize(r.total_row())?;
        for row in r.phase_rows() {
            phases.serialize(row)?;
        }
    }
    runs.flush()?;
    phases.flush()?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(out.join("report.json"), json + "\n")?;
    Ok(())
}
