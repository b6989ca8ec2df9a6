use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anderson_core::experiments::commands::{run_command, suite_output, Command, Output};
use anderson_core::verify::run_suite;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

/// Discrete Anderson model: sampling, multiscale decomposition, energy following,
/// eigenvalue-movement sweeps, disorder ensembles and the acceptance suite.
#[derive(Parser)]
#[command(name = "anderson", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Common {
    /// TOML file with the same keys as the long flags (underscores for dashes).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for report.json and the CSV tables; stdout gets the JSON otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Sub {
    /// Sample a Hamiltonian and print its disorder record and spectrum.
    Sample(SampleArgs),
    /// Fixed-energy multiscale cascade dump.
    Decompose(DecomposeArgs),
    /// Energy-following procedure from one or more start sites.
    Efp(EfpArgs),
    /// Eigenvalue-movement sweep over a corpus of strict-regime trials.
    Sweep(SweepArgs),
    /// Monte Carlo ensemble statistics.
    Stats(StatsArgs),
    /// Run the acceptance suite.
    Verify(VerifyArgs),
}

#[derive(Args, Serialize, Default)]
struct ModelArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    /// Side lengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    sides: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_levels: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
}

#[derive(Args, Serialize, Default)]
struct ScheduleArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    l0: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    /// `standard` or `geometric`.
    #[arg(long = "schedule")]
    #[serde(skip)]
    kind: Option<String>,
    /// Window ratio of the geometric schedule.
    #[arg(long)]
    #[serde(skip)]
    ratio: Option<f64>,
}

impl ScheduleArgs {
    fn schedule(&self) -> Option<Value> {
        match (self.kind.as_deref(), self.ratio) {
            (None, None) => None,
            (Some("standard"), _) => Some(serde_json::json!({"kind": "standard"})),
            (kind, ratio) => Some(serde_json::json!({
                "kind": kind.unwrap_or("geometric"),
                "ratio": ratio.unwrap_or(0.125),
            })),
        }
    }
}

#[derive(Args, Serialize)]
struct SampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Args, Serialize)]
struct DecomposeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    schedule: ScheduleArgs,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    energy: Option<f64>,
    /// Start site; its `v_x + 2 d gamma` is the energy when none is given.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    site: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_scale: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Args, Serialize)]
struct EfpArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    schedule: ScheduleArgs,
    /// Start sites, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    sites: Option<Vec<usize>>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    all_sites: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    fan_out_cap: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_scale: Option<usize>,
    /// Keep eigenvectors in the report.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    vectors: Option<bool>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    /// Chain length.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sites: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_levels: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    schedule: ScheduleArgs,
    /// Valid trials wanted.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_attempts: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<bool>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Args, Serialize)]
struct StatsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    schedule: ScheduleArgs,
    /// Base seed; trial `i` uses a seed mixed from it and `i`.
    #[arg(long)]
    #[serde(rename = "base_seed")]
    seed: u64,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    energies: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    deltas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    spacing_deltas: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_distance: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    exceedance_from: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<usize>,
    /// Observables to compute, comma separated: dos, correlator, spacing, blocks, strict, cross_check.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip)]
    observables: Option<Vec<String>>,
    /// Extra `N` values for the spacing comparison table.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    compare_levels: Option<Vec<u32>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    focus_delta: Option<f64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    /// Run only checks whose name contains this string.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    filter: Option<String>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

const OBSERVABLES: [&str; 6] = ["dos", "correlator", "spacing", "blocks", "strict", "cross_check"];

fn read_config(path: Option<&Path>) -> Result<Map<String, Value>, String> {
    let Some(path) = path else { return Ok(Map::new()) };
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let value: Value = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(format!("{}: expected a table", path.display())),
    }
}

/// Config file first, then every flag given on the command line.
fn build(name: &str, flags: &impl Serialize, schedule: Option<Value>, common: &Common) -> Result<(Command, Option<PathBuf>), String> {
    let mut merged = read_config(common.config.as_deref())?;
    let file_out = merged.remove("out").and_then(|v| v.as_str().map(PathBuf::from));
    let Value::Object(cli) = serde_json::to_value(flags).map_err(|e| e.to_string())? else {
        unreachable!("flags serialize to a map")
    };
    merged.extend(cli);
    if let Some(s) = schedule {
        merged.insert("schedule".into(), s);
    }
    merged.insert("command".into(), Value::String(name.into()));
    let command: Command = serde_json::from_value(Value::Object(merged)).map_err(|e| format!("{name}: {e}"))?;
    Ok((command, common.out.clone().or(file_out)))
}

fn parse(sub: &Sub) -> Result<(Command, Option<PathBuf>), String> {
    match sub {
        Sub::Sample(a) => build("sample", a, None, &a.common),
        Sub::Decompose(a) => build("decompose", a, a.schedule.schedule(), &a.common),
        Sub::Efp(a) => build("efp", a, a.schedule.schedule(), &a.common),
        Sub::Sweep(a) => build("sweep", a, a.schedule.schedule(), &a.common),
        Sub::Verify(a) => build("verify", a, None, &a.common),
        Sub::Stats(a) => {
            let (mut command, out) = build("stats", a, a.schedule.schedule(), &a.common)?;
            if let (Command::Stats(config), Some(list)) = (&mut command, &a.observables) {
                if let Some(bad) = list.iter().find(|o| !OBSERVABLES.contains(&o.as_str())) {
                    return Err(format!("unknown observable {bad}"));
                }
                let on = |name: &str| list.iter().any(|o| o == name);
                config.observables.dos = on("dos");
                config.observables.correlator = on("correlator");
                config.observables.spacing = on("spacing");
                config.observables.blocks = on("blocks");
                config.observables.strict = on("strict");
                config.observables.cross_check = on("cross_check");
            }
            Ok((command, out))
        }
    }
}

fn emit(output: &Output, out: Option<&Path>) -> Result<(), String> {
    let Some(dir) = out else {
        let mut stdout = std::io::stdout().lock();
        return match stdout.write_all(output.json.as_bytes()).and_then(|()| stdout.flush()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(format!("stdout: {e}")),
            _ => Ok(()),
        };
    };
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let write = |name: String, text: &str| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))
    };
    write("report.json".into(), &output.json)?;
    for (stem, csv) in &output.tables {
        write(format!("{stem}.csv"), csv)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, out) = match parse(&cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &command {
        Command::Verify(spec) => run_suite(spec.filter.as_deref()).and_then(|suite| {
            for c in &suite.checks {
                eprintln!("{}", c.line());
            }
            suite_output(&suite)
        }),
        _ => run_command(&command),
    };
    let output = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = emit(&output, out.as_deref()) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    if output.success {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
