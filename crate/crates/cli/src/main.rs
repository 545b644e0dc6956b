//! `qkdnet` command line: run campaigns, pair devices, pin switch states and
//! render reports from exported timelines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgGroup, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use qkdnet::fixtures::{BundledSource, DirSource, FixtureError, FixtureSource};
use qkdnet::keymgmt::{best_pairing, pairing_objectives, symmetry_check, MatrixError, PairingMatrix};
use qkdnet::netctl::{NetError, Network, PolicySpec};
use qkdnet::registry::RegistryError;
use qkdnet::simkit::{read_samples_csv, run, Scenario, SimError, Summary, Timeline};

const CONTROL_SCHEMA_VERSION: u32 = 1;
const DEFAULT_CONTROL: &str = "qkdnet-control.json";
const DEFAULT_NETWORK: &str = "hcw-network.json";

#[derive(Parser)]
#[command(name = "qkdnet", version, about = "Wide-area QKD network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the timeline, event log and summary.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Keep the state's domain pinned for this run only.
        #[arg(long)]
        pin: Option<String>,
        /// Control file written by `state`.
        #[arg(long, default_value = DEFAULT_CONTROL)]
        control: PathBuf,
    },
    /// Best transmitter/receiver assignment for a back-to-back QBER table.
    Pair {
        #[arg(long)]
        matrix: String,
        #[arg(long, default_value = "min_sum")]
        objective: String,
        /// Also check every entry against this QBER threshold, in percent.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Pin a switch state for subsequent runs, or restore automatic switching.
    #[command(group(ArgGroup::new("mode").required(true).args(["pin", "auto"])))]
    State {
        #[arg(long)]
        pin: Option<String>,
        #[arg(long)]
        auto: bool,
        /// Network definition used to check the state id.
        #[arg(long)]
        network: Option<String>,
        #[arg(long, default_value = DEFAULT_CONTROL)]
        control: PathBuf,
    },
    /// Re-render the report of an exported timeline (.json or .csv).
    Report {
        #[arg(long)]
        timeline: PathBuf,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Control {
    schema_version: u32,
    pin: Option<String>,
}

/// Files next to the given input first, then the bundled copies.
struct InputSource {
    dir: Option<DirSource>,
}

impl FixtureSource for InputSource {
    fn read(&self, name: &str) -> Result<String, FixtureError> {
        match &self.dir {
            Some(dir) => dir.read(name).or_else(|e| BundledSource.read(name).map_err(|_| e)),
            None => BundledSource.read(name),
        }
    }

    fn locate(&self, name: &str) -> String {
        match &self.dir {
            Some(dir) if dir.read(name).is_ok() => dir.locate(name),
            _ => BundledSource.locate(name),
        }
    }
}

/// Opens `arg` as a path, falling back to a bundled file or scenario name.
fn input(arg: &str) -> Result<(InputSource, String)> {
    let path = Path::new(arg);
    if path.is_file() {
        let name = path
            .file_name()
            .ok_or_else(|| anyhow!("'{arg}' is not a file"))?
            .to_string_lossy()
            .into_owned();
        return Ok((InputSource { dir: Some(DirSource::beside(path)) }, name));
    }
    let bundled = BundledSource::scenario_file(arg)
        .map(str::to_string)
        .or_else(|| BundledSource::names().find(|n| *n == arg).map(str::to_string));
    match bundled {
        Some(name) => Ok((InputSource { dir: None }, name)),
        None => Err(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{arg}: no such file")).into()),
    }
}

fn read_control(path: &Path) -> Result<Option<String>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let control: Control =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if control.schema_version != CONTROL_SCHEMA_VERSION {
        bail!("{}: unsupported control schema_version {}", path.display(), control.schema_version);
    }
    Ok(control.pin)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(scenario: &str, seed: Option<u64>, out: &Path, pin: Option<String>, control: &Path) -> Result<()> {
    let (source, file) = input(scenario)?;
    let (mut sc, net) = Scenario::load(&source, &file)?;
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    if let Some(state) = pin.or(read_control(control)?) {
        let domain = net.domain_of_state(&state)?.id.clone();
        sc.domain_policies.insert(domain, PolicySpec::preemptive(&state));
    }
    sc.validate()?;
    let timeline = run(&sc, &net)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut samples = Vec::new();
    timeline.write_csv(&mut samples)?;
    write_file(&out.join("timeline.csv"), &samples)?;
    write_file(&out.join("timeline.json"), timeline.to_json().as_bytes())?;
    let mut events = Vec::new();
    timeline.write_events_csv(&mut events)?;
    write_file(&out.join("events.csv"), &events)?;
    let summary = serde_json::to_string_pretty(&timeline.summary())?;
    write_file(&out.join("summary.json"), summary.as_bytes())?;
    let report = render_timeline(&timeline);
    write_file(&out.join("summary.txt"), report.as_bytes())?;

    print!("{report}");
    println!("wrote timeline.csv, timeline.json, events.csv, summary.json, summary.txt to {}", out.display());
    Ok(())
}

fn cmd_pair(matrix: &str, objective: &str, threshold: Option<f64>) -> Result<()> {
    let (source, file) = input(matrix)?;
    let text = source.read(&file)?;
    let m = PairingMatrix::from_csv(text.as_bytes())
        .with_context(|| source.locate(&file))?;
    let obj = pairing_objectives().create(objective, &serde_json::Value::Null)?;
    let assignment = best_pairing(&m, obj.as_ref())?;
    println!("{assignment}");
    if let Some(pct) = threshold {
        let report = symmetry_check(&m, pct / 100.0)?;
        if report.pass {
            println!("symmetry: every entry below {pct:.2}%");
        } else {
            println!("symmetry: {} entries at or above {pct:.2}%", report.violations.len());
            for (t, r, q) in &report.violations {
                println!("  {t} -> {r}  {:.2}%", q * 100.0);
            }
        }
    }
    Ok(())
}

fn cmd_state(pin: Option<String>, network: Option<String>, control: &Path) -> Result<()> {
    if let Some(state) = &pin {
        let (source, file) = input(network.as_deref().unwrap_or(DEFAULT_NETWORK))?;
        let net = Network::load(&source, &file)?;
        let domain = net.domain_of_state(state)?;
        println!("pinned {state} (domain {}); runs stay in this state until `state --auto`", domain.id);
    } else {
        println!("automatic switching restored");
    }
    let body = Control { schema_version: CONTROL_SCHEMA_VERSION, pin };
    write_file(control, serde_json::to_string_pretty(&body)?.as_bytes())
}

fn render_timeline(t: &Timeline) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} ({} mode, seed {}): {:.1} h at {} s sampling",
        t.scenario,
        t.mode,
        t.seed,
        t.duration_s / 3600.0,
        t.sample_interval_s
    );
    s.push_str(&t.summary().render());
    if !t.pools.is_empty() {
        let _ = writeln!(s, "\n{:<14} {:>14} {:>14} {:>14}", "pool", "produced", "consumed", "available");
        for p in &t.pools {
            let _ = writeln!(
                s,
                "{:<14} {:>14} {:>14} {:>14}",
                p.pair.to_string(),
                p.produced,
                p.consumed,
                p.available
            );
        }
    }
    if !t.sessions.is_empty() {
        let _ = writeln!(
            s,
            "\n{:<16} {:<4} {:>14} {:>12} {:>8} {:>10}  first exhausted",
            "session", "app", "consumed bits", "served", "missed", "exhausted"
        );
        for r in &t.sessions {
            let first = r.first_exhausted_s.map_or("-".to_string(), |x| format!("{x} s"));
            let _ = writeln!(
                s,
                "{:<16} {:<4} {:>14} {:>12} {:>8} {:>10}  {first}",
                r.id, r.app, r.consumed_bits, r.served, r.missed, r.exhausted_samples
            );
        }
    }
    let _ = writeln!(s, "\n{} state transitions, {} logged events", t.transitions.len(), t.events.len());
    for e in t.events.iter().filter(|e| e.kind != "key_exhausted") {
        let _ = writeln!(s, "  {:>10.0} s  {} {} {}", e.t_s, e.kind, e.phase, e.target);
    }
    s
}

fn cmd_report(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let samples = read_samples_csv(text.as_bytes()).with_context(|| path.display().to_string())?;
        print!("{}", Summary::from_samples(&samples, &[]).render());
    } else {
        let timeline = Timeline::from_json(&text).with_context(|| path.display().to_string())?;
        print!("{}", render_timeline(&timeline));
    }
    Ok(())
}

/// Short machine-readable label for the error's origin.
fn kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return if io.kind() == std::io::ErrorKind::NotFound { "not_found" } else { "io" };
        }
        if cause.is::<FixtureError>() {
            return "not_found";
        }
        if cause.is::<serde_json::Error>() {
            return "parse";
        }
        if cause.is::<MatrixError>() {
            return "matrix";
        }
        if cause.is::<RegistryError>() {
            return "usage";
        }
        if let Some(net) = cause.downcast_ref::<NetError>() {
            return match net {
                NetError::UnknownState { .. } => "state",
                NetError::Fixture(_) => "not_found",
                _ => "network",
            };
        }
        if let Some(sim) = cause.downcast_ref::<SimError>() {
            return match sim {
                SimError::Fixture(_) => "not_found",
                SimError::Net(NetError::UnknownState { .. }) => "state",
                SimError::Load { .. } => "parse",
                SimError::Scenario(_) | SimError::Event { .. } | SimError::Session { .. } => "scenario",
                _ => "simulation",
            };
        }
    }
    "error"
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let body: Vec<&str> = msg
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("error[usage]: {}", body.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Run { scenario, seed, out, pin, control } => cmd_run(&scenario, seed, &out, pin, &control),
        Command::Pair { matrix, objective, threshold } => cmd_pair(&matrix, &objective, threshold),
        Command::State { pin, network, control, .. } => cmd_state(pin, network, &control),
        Command::Report { timeline } => cmd_report(&timeline),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{}]: {msg}", kind(&e));
            ExitCode::FAILURE
        }
    }
}
