use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fpa_qkd::rates::{
    qber_crossing_budget, reports_to_csv, secure_threshold_qber, sweep_budget, sweep_classical_power, SweepAxis,
};
use fpa_qkd::scenario::{grid, Calibration, LinkScenario, ScenarioConfig, ScenarioError};
use fpa_qkd::sim::{generate_tags, sift_and_estimate, tags_to_csv, write_tags_binary};
use fpa_qkd::sounding::{run_sounding, trace_to_jsonl};
use fpa_qkd::{rates, ElementId};

mod writeback;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "fpa-qkd", version, about = "FPA-beamformed free-space QKD link simulator")]
struct Cli {
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Format of tables and summaries.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the calibrated constants and write them into the scenario file.
    Calibrate { scenario: PathBuf },
    /// Coupling map, sounding sweep and pair ranking.
    Map { scenario: PathBuf },
    /// Key rate and QBER against optical budget.
    SweepBudget {
        scenario: PathBuf,
        /// start,stop,step in dB
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Key rate and QBER against aggregate classical launch power.
    SweepPower {
        scenario: PathBuf,
        /// start,stop,step in dBm
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Time-tag Monte Carlo run with offline sifting.
    Montecarlo {
        scenario: PathBuf,
        #[arg(long)]
        duration: Option<f64>,
        /// Also export the tag stream as CSV.
        #[arg(long)]
        tags_csv: bool,
    },
    /// Data volume securable by AES-GCM key renewal at a secure-key rate.
    Capacity { skr_bps: f64 },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let code = if e.is_config_error() { EXIT_CONFIG } else { EXIT_NUMERICAL };
        Failure { code, error: e.into() }
    }
}

fn numerical(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_NUMERICAL, error: e.into() }
}

fn config(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_CONFIG, error: e.into() }
}

fn io(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: e.into() }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display())).map_err(io)?;
    match &cli.command {
        Command::Calibrate { scenario } => cmd_calibrate(cli, scenario),
        Command::Map { scenario } => cmd_map(cli, scenario),
        Command::SweepBudget { scenario, grid } => cmd_sweep_budget(cli, scenario, grid.as_deref()),
        Command::SweepPower { scenario, grid } => cmd_sweep_power(cli, scenario, grid.as_deref()),
        Command::Montecarlo { scenario, duration, tags_csv } => cmd_montecarlo(cli, scenario, *duration, *tags_csv),
        Command::Capacity { skr_bps } => cmd_capacity(cli, *skr_bps),
    }
}

fn write_out(cli: &Cli, name: &str, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    let path = cli.out_dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display())).map_err(io)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn print_header(seed: u64, cal: &Calibration) {
    println!("seed = {seed}");
    for line in cal.summary_lines() {
        println!("calibration.{line}");
    }
}

fn load(cli: &Cli, path: &Path) -> Result<(ScenarioConfig, LinkScenario, u64), Failure> {
    let cfg = ScenarioConfig::load(path)?;
    let scenario = cfg.resolve()?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    print_header(seed, &scenario.calibration);
    Ok((cfg, scenario, seed))
}

fn cmd_calibrate(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let cfg = ScenarioConfig::load(path)?;
    let cal = cfg.calibrate()?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    print_header(seed, &cal);
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(io)?;
    let updated = writeback::set_calibration(&text, &cal).map_err(config)?;
    fs::write(path, updated).with_context(|| format!("writing {}", path.display())).map_err(io)?;
    println!("updated {}", path.display());
    match cli.format {
        Format::Json => write_out(cli, "calibration.json", to_json(&cal)),
        Format::Csv => {
            let mut csv = String::from("key,value\n");
            for line in cal.summary_lines() {
                let (k, v) = line.split_once(" = ").expect("key = value");
                csv.push_str(&format!("{k},\"{v}\"\n"));
            }
            write_out(cli, "calibration.csv", csv)
        }
    }
}

#[derive(Debug, Serialize)]
struct MapSummary {
    seed: u64,
    distance_m: f64,
    best_tx: ElementId,
    best_rx: ElementId,
    best_loss_db: f64,
    second_best_rx: ElementId,
    second_best_drop_db: f64,
    selected_tx: ElementId,
    selected_rx: ElementId,
    selected_measured_loss_db: f64,
    usable_pairs: usize,
    pairs_within_3db: usize,
}

impl MapSummary {
    fn to_csv(&self) -> String {
        let v = serde_json::to_value(self).expect("serializable");
        let obj = v.as_object().expect("struct");
        let keys: Vec<_> = obj.keys().cloned().collect();
        let vals: Vec<_> = obj.values().map(|x| x.to_string()).collect();
        format!("{}\n{}\n", keys.join(","), vals.join(","))
    }
}

fn cmd_map(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let (_, scenario, seed) = load(cli, path)?;
    let map = scenario.coupling_map()?;
    let best = map.best().expect("non-empty map");
    let row = map.row(best.tx).expect("best tx is in the map");
    let (second_idx, second_loss) = row
        .iter()
        .enumerate()
        .filter(|(i, _)| map.rx_ids[*i] != best.rx)
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, l)| (i, *l))
        .ok_or_else(|| config(anyhow::anyhow!("receiver subset has a single element")))?;
    let session = run_sounding(&map, &scenario.tx_subset, &scenario.rx_subset, scenario.distance_m, &scenario.sounding, seed)
        .map_err(config)?
        .map_err(|abort| numerical(anyhow::anyhow!("sounding aborted: {}", abort.cause.reason)))?;
    let selected = session.ranking.best().ok_or_else(|| numerical(anyhow::anyhow!("no pair measured")))?;
    let summary = MapSummary {
        seed,
        distance_m: scenario.distance_m,
        best_tx: best.tx,
        best_rx: best.rx,
        best_loss_db: best.loss_db,
        second_best_rx: map.rx_ids[second_idx],
        second_best_drop_db: second_loss - best.loss_db,
        selected_tx: selected.tx,
        selected_rx: selected.rx,
        selected_measured_loss_db: selected.loss_db,
        usable_pairs: session.ranking.usable_count,
        pairs_within_3db: session.ranking.within_of_best(3.0),
    };
    println!(
        "best pair ({}, {}) at {:.3} dB; second-best receiver {} is {:.1} dB lower",
        best.tx, best.rx, best.loss_db, summary.second_best_rx, summary.second_best_drop_db
    );
    println!(
        "sounding selected ({}, {}) at {:.3} dB; {} usable pairs, {} within 3 dB",
        selected.tx, selected.rx, selected.loss_db, summary.usable_pairs, summary.pairs_within_3db
    );
    match cli.format {
        Format::Csv => {
            write_out(cli, "coupling_map.csv", map.to_csv())?;
            write_out(cli, "ranking.csv", session.ranking.to_csv())?;
            write_out(cli, "map_summary.csv", summary.to_csv())?;
        }
        Format::Json => {
            write_out(cli, "coupling_map.json", to_json(&map.to_document(scenario.tx.pose, scenario.rx.pose, seed)))?;
            write_out(cli, "ranking.json", to_json(&session.ranking))?;
            write_out(cli, "map_summary.json", to_json(&summary))?;
        }
    }
    write_out(cli, "sounding_trace.jsonl", trace_to_jsonl(&session.trace))
}

fn grid_or(cli_grid: Option<&[f64]>, default: &[f64], name: &str) -> Result<Vec<f64>, Failure> {
    match cli_grid {
        Some(&[a, b, c]) => grid([a, b, c], name).map_err(Failure::from),
        Some(_) => Err(config(anyhow::anyhow!("{name} takes start,stop,step"))),
        None => Ok(default.to_vec()),
    }
}

fn cmd_sweep_budget(cli: &Cli, path: &Path, cli_grid: Option<&[f64]>) -> Result<(), Failure> {
    let (_, scenario, _) = load(cli, path)?;
    let budgets = grid_or(cli_grid, &scenario.budget_grid_db, "--grid")?;
    let reports = sweep_budget(&scenario.link, &budgets).map_err(numerical)?;
    let threshold = secure_threshold_qber(scenario.link.ec_efficiency);
    let b0 = scenario.link.evaluate(0.0).map_err(numerical)?;
    println!("budget 0 dB: sifted {:.1} b/s, QBER {:.4}", b0.sifted_rate_hz, b0.qber);
    match qber_crossing_budget(&scenario.link, threshold, 200.0) {
        Ok(cross) => {
            let link_budget = scenario.budget_db()?;
            println!("QBER reaches {:.4} at {cross:.2} dB ({:.1} km of fiber)", threshold, rates::fiber_equivalent(cross));
            println!("link budget {link_budget:.2} dB leaves {:.2} dB of headroom", cross - link_budget);
        }
        Err(e) => println!("no QBER threshold crossing: {e}"),
    }
    match cli.format {
        Format::Csv => write_out(cli, "sweep_budget.csv", reports_to_csv(&reports, SweepAxis::Budget)),
        Format::Json => write_out(cli, "sweep_budget.json", to_json(&reports)),
    }
}

fn cmd_sweep_power(cli: &Cli, path: &Path, cli_grid: Option<&[f64]>) -> Result<(), Failure> {
    let (_, scenario, _) = load(cli, path)?;
    let powers = grid_or(cli_grid, &scenario.power_grid_dbm, "--grid")?;
    let budget = scenario.budget_db()?;
    let reports = sweep_classical_power(&scenario.quiet_link, budget, &scenario.coexistence, &powers).map_err(numerical)?;
    let quiet = scenario.quiet_link.evaluate(budget).map_err(numerical)?;
    println!("link budget {budget:.2} dB, no classical load: QBER {:.4}", quiet.qber);
    let at0 = sweep_classical_power(&scenario.quiet_link, budget, &scenario.coexistence, &[0.0]).map_err(numerical)?;
    println!("at 0 dBm: QBER {:.4} (shift {:.3} pp)", at0[0].qber, 100.0 * (at0[0].qber - quiet.qber));
    match cli.format {
        Format::Csv => write_out(cli, "sweep_power.csv", reports_to_csv(&reports, SweepAxis::ClassicalPower)),
        Format::Json => write_out(cli, "sweep_power.json", to_json(&reports)),
    }
}

#[derive(Debug, Serialize)]
struct MonteCarloReport {
    seed: u64,
    duration_s: f64,
    budget_db: f64,
    tags: usize,
    registered_hz: Vec<f64>,
    sifted_rate_hz: f64,
    sifted_rate_std_err_hz: f64,
    analytic_sifted_rate_hz: f64,
    qber: Option<f64>,
    qber_std_err: Option<f64>,
    analytic_qber: Option<f64>,
}

fn cmd_montecarlo(cli: &Cli, path: &Path, duration: Option<f64>, tags_csv: bool) -> Result<(), Failure> {
    let (_, scenario, seed) = load(cli, path)?;
    let duration = duration.unwrap_or(scenario.montecarlo_duration_s);
    let budget = scenario.budget_db()?;
    let run = generate_tags(&scenario.link, budget, duration, seed).map_err(numerical)?;
    let est = sift_and_estimate(&run);
    let analytic = rates::detection_rates(&scenario.link, budget).map_err(numerical)?;
    let report = MonteCarloReport {
        seed,
        duration_s: duration,
        budget_db: budget,
        tags: run.tags.len(),
        registered_hz: (0..est.registered_per_detector.len()).map(|d| est.registered_rate_hz(d)).collect(),
        sifted_rate_hz: est.sifted_rate_hz,
        sifted_rate_std_err_hz: est.sifted_rate_std_err(),
        analytic_sifted_rate_hz: 0.5 * (analytic.sifted_rate_hz + analytic.accepted_background_hz),
        qber: est.qber,
        qber_std_err: est.qber_std_err(),
        analytic_qber: rates::qber(
            analytic.sifted_rate_hz,
            analytic.accepted_background_hz,
            scenario.link.environment.intrinsic_error,
        )
        .ok(),
    };
    println!(
        "{} tags over {duration} s; matched-basis rate {:.1} ± {:.1} b/s (model {:.1})",
        report.tags, report.sifted_rate_hz, report.sifted_rate_std_err_hz, report.analytic_sifted_rate_hz
    );
    match (report.qber, report.qber_std_err) {
        (Some(q), Some(se)) => println!("QBER {q:.5} ± {se:.5} (model {:.5})", report.analytic_qber.unwrap_or(f64::NAN)),
        _ => println!("QBER undefined: no sifted events"),
    }
    for (d, r) in report.registered_hz.iter().enumerate() {
        println!("detector {d}: {r:.1} counts/s");
    }
    let mut bin = Vec::with_capacity(16 + 9 * run.tags.len());
    write_tags_binary(&run, &mut bin).map_err(io)?;
    write_out(cli, "tags.fsoq", bin)?;
    if tags_csv {
        write_out(cli, "tags.csv", tags_to_csv(&run))?;
    }
    match cli.format {
        Format::Json => write_out(cli, "montecarlo.json", to_json(&report)),
        Format::Csv => {
            let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
            let mut csv = String::from(
                "seed,duration_s,budget_db,tags,registered_hz,sifted_rate_hz,sifted_rate_std_err_hz,analytic_sifted_rate_hz,qber,qber_std_err,analytic_qber\n",
            );
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                report.seed,
                report.duration_s,
                report.budget_db,
                report.tags,
                report.registered_hz.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(";"),
                report.sifted_rate_hz,
                report.sifted_rate_std_err_hz,
                report.analytic_sifted_rate_hz,
                opt(report.qber),
                opt(report.qber_std_err),
                opt(report.analytic_qber)
            ));
            write_out(cli, "montecarlo.csv", csv)
        }
    }
}

#[derive(Debug, Serialize)]
struct CapacityReport {
    secure_rate_bps: f64,
    secured_capacity_bps: f64,
}

fn cmd_capacity(cli: &Cli, skr: f64) -> Result<(), Failure> {
    if !(skr >= 0.0 && skr.is_finite()) {
        return Err(config(anyhow::anyhow!("secure-key rate must be a non-negative number")));
    }
    println!("seed = {}", cli.seed.unwrap_or(0));
    let report = CapacityReport { secure_rate_bps: skr, secured_capacity_bps: rates::aes_gcm_secured_capacity(skr) };
    println!("{skr} b/s secures {:.3} Tb/s", report.secured_capacity_bps / 1e12);
    let name = format!("capacity.{}", cli.format.ext());
    match cli.format {
        Format::Json => write_out(cli, &name, to_json(&report)),
        Format::Csv => {
            write_out(cli, &name, format!("secure_rate_bps,secured_capacity_bps\n{},{}\n", skr, report.secured_capacity_bps))
        }
    }
}
