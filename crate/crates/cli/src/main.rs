//! Command-line front end for the tracewatt benchmarking harness.
//!
//! Subcommands cover the full workflow: inspecting recorded traces
//! (`validate`, `stats`), turning them into replay schedules (`plan`),
//! executing a single configuration (`replay`) or a whole grid (`sweep`)
//! on the virtual clock or against a live endpoint, serving the built-in
//! simulator over HTTP (`mock-serve`), and reducing stored runs to tables
//! and ratio reports (`analyze`, `report`). `synth` generates test traces
//! and `calibrate` compares the built-in profiles against their reference
//! operating points.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};

use tracewatt::config::{SimulationConfig, StreamingMode, TriggerMode};
use tracewatt::engine::live::execute_plan_live;
use tracewatt::engine::virtual_clock::{execute_plan, RoundExecution};
use tracewatt::engine::EngineOptions;
use tracewatt::metrics::{
    analyze_rounds, SaturationThresholds, SimulationMetrics, DEFAULT_CARBON_INTENSITY,
};
use tracewatt::net::MockServer;
use tracewatt::plan::{build_plan, ReplayPlan, DEFAULT_WINDOW_MS};
use tracewatt::sim::profile::{ProfilesFile, ServerSettings};
use tracewatt::sim::write_step_rows_csv;
use tracewatt::sweep::report::{full_report, render_scenario_table, scenario_rows};
use tracewatt::sweep::store::RunStore;
use tracewatt::sweep::{
    aggregate_replicates, replicate_seed, run_sweep, ConfigOutcome, ConfigSpace, ExecutionMode,
    SweepOptions,
};
use tracewatt::trace::parse::{parse_dataset_path, serialize_events, Dataset, SchemaMap};
use tracewatt::trace::synthetic::{generate, SyntheticConfig};
use tracewatt::trace::{lifecycle_stats, usage_stats};

#[derive(Parser)]
#[command(
    name = "tracewatt",
    version,
    about = "Replays recorded code-assistant traces against an inference server \
             (real or simulated) and measures latency, energy, and CO2."
)]
struct Cli {
    /// Base random seed for planning, trace synthesis, and simulation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Directory for command outputs (also the sweep store root).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Run-settings file (TOML): window_ms, timeout_ms, carbon_intensity,
    /// profiles path, saturation thresholds, and a [config] block.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Model/hardware profiles file (TOML); built-in profiles otherwise.
    #[arg(long, global = true)]
    profiles: Option<PathBuf>,

    /// Execute on the deterministic virtual clock (no real time passes).
    #[arg(long, global = true)]
    virtual_time: bool,

    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a trace and report malformed lines and orphan events.
    Validate {
        /// Telemetry trace (JSONL).
        trace: PathBuf,
        #[command(flatten)]
        schema: SchemaArgs,
    },
    /// Lifecycle breakdown and per-developer usage rates of a trace.
    Stats {
        trace: PathBuf,
        #[command(flatten)]
        schema: SchemaArgs,
        /// Also write the numbers to <out>/stats.json.
        #[arg(long)]
        json: bool,
    },
    /// Build a replay schedule and write it to <out>/plan.json.
    Plan {
        trace: PathBuf,
        #[command(flatten)]
        schema: SchemaArgs,
        #[command(flatten)]
        config: ConfigFlags,
        /// Replay window in milliseconds (default one hour).
        #[arg(long)]
        window_ms: Option<u64>,
    },
    /// Replay a trace under one configuration and print its metrics.
    ///
    /// Pick an execution mode: --virtual-time for the built-in simulator,
    /// or --endpoint URL for a live server speaking the wire protocol.
    Replay {
        trace: PathBuf,
        #[command(flatten)]
        schema: SchemaArgs,
        #[command(flatten)]
        config: ConfigFlags,
        /// Base URL of a live endpoint, e.g. http://127.0.0.1:8080.
        #[arg(long, conflicts_with = "virtual_time")]
        endpoint: Option<String>,
        #[arg(long)]
        window_ms: Option<u64>,
        /// Per-request timeout in milliseconds.
        #[arg(long)]
        timeout_ms: Option<u64>,
    },
    /// Serve the built-in batching simulator over HTTP until Ctrl-C.
    MockServe {
        #[command(flatten)]
        config: ConfigFlags,
        /// Listen address.
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Execute every configuration of a space, resuming completed work.
    Sweep {
        trace: PathBuf,
        #[command(flatten)]
        schema: SchemaArgs,
        /// Configuration space (TOML); omitted axes use their defaults.
        #[arg(long)]
        space: PathBuf,
        /// Replay against a live endpoint instead of the simulator.
        #[arg(long, conflicts_with = "virtual_time")]
        endpoint: Option<String>,
        /// Worker threads (virtual mode only).
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long)]
        window_ms: Option<u64>,
        /// Fault injection for tests: abort after N replicate saves.
        #[arg(long, hide = true)]
        crash_after: Option<u64>,
    },
    /// Aggregate a sweep store into per-configuration outcomes.
    Analyze {
        /// Re-derive metrics from the stored raw logs using this trace
        /// and fail if they differ from the stored metrics.
        #[arg(long, value_name = "TRACE")]
        recompute: Option<PathBuf>,
        #[command(flatten)]
        schema: SchemaArgs,
    },
    /// Render scenario, impact-ratio, and energy-curve reports from a store.
    Report,
    /// Generate a synthetic telemetry trace (JSONL).
    Synth {
        #[arg(long, default_value_t = 8)]
        developers: usize,
        /// Mean session length in minutes.
        #[arg(long, default_value_t = 45.0)]
        minutes: f64,
        /// Per-developer request rate range (requests/minute).
        #[arg(long, default_value_t = 1.9)]
        rate_min: f64,
        #[arg(long, default_value_t = 14.7)]
        rate_max: f64,
        /// Output path (default <out>/synthetic_trace.jsonl).
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Replay the reference scenarios and compare the simulator's latency
    /// and power against their published operating points.
    Calibrate,
}

/// Schema-mapping option shared by every trace-reading command.
#[derive(Args)]
struct SchemaArgs {
    /// Field-name mapping (TOML) for traces in a foreign schema.
    #[arg(long)]
    schema_map: Option<PathBuf>,
}

/// Per-command configuration overrides (highest precedence).
#[derive(Args)]
struct ConfigFlags {
    /// Virtual developer count.
    #[arg(long)]
    developers: Option<u32>,
    /// "stream_with_cancel" or "no_stream".
    #[arg(long)]
    streaming: Option<String>,
    /// "automatic" or "manual_emulated".
    #[arg(long)]
    trigger: Option<String>,
    /// Model profile name from the profiles file.
    #[arg(long)]
    model: Option<String>,
    /// Quantization tag declared by the profile, or "none".
    #[arg(long)]
    quantization: Option<String>,
    /// Admission cap: queued plus running requests.
    #[arg(long)]
    max_concurrent: Option<u32>,
    /// GPUs the server runs on.
    #[arg(long)]
    gpus: Option<u32>,
}

/// `[config]` block of the run-settings file.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigPatch {
    developers: Option<u32>,
    streaming: Option<StreamingMode>,
    trigger: Option<TriggerMode>,
    model_profile: Option<String>,
    quantization: Option<String>,
    max_concurrent_requests: Option<u32>,
    gpu_count: Option<u32>,
}

/// Run-settings file (--config).
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    window_ms: Option<u64>,
    timeout_ms: Option<u64>,
    sample_interval_ms: Option<u64>,
    carbon_intensity: Option<f64>,
    saturation_rejected_fraction: Option<f64>,
    saturation_latency_s: Option<f64>,
    profiles: Option<PathBuf>,
    #[serde(default)]
    config: ConfigPatch,
}

/// Everything a command needs after merging defaults, the run file, and flags.
struct Effective {
    config: SimulationConfig,
    window_ms: u64,
    engine: EngineOptions,
    profiles: ProfilesFile,
    thresholds: SaturationThresholds,
    carbon_intensity: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

/// Exits with a usage error (code 2), matching clap's own conflicts.
fn usage_error(msg: &str) -> ! {
    Cli::command().error(clap::error::ErrorKind::ArgumentConflict, msg).exit()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Validate { trace, schema } => cmd_validate(trace, schema),
        Command::Stats { trace, schema, json } => cmd_stats(&cli, trace, schema, *json),
        Command::Plan { trace, schema, config, window_ms } => {
            cmd_plan(&cli, trace, schema, config, *window_ms)
        }
        Command::Replay { trace, schema, config, endpoint, window_ms, timeout_ms } => {
            cmd_replay(&cli, trace, schema, config, endpoint.as_deref(), *window_ms, *timeout_ms)
        }
        Command::MockServe { config, addr } => cmd_mock_serve(&cli, config, *addr),
        Command::Sweep { trace, schema, space, endpoint, parallel, window_ms, crash_after } => {
            cmd_sweep(
                &cli,
                trace,
                schema,
                space,
                endpoint.as_deref(),
                *parallel,
                *window_ms,
                *crash_after,
            )
        }
        Command::Analyze { recompute, schema } => {
            cmd_analyze(&cli, recompute.as_deref(), schema)
        }
        Command::Report => cmd_report(&cli),
        Command::Synth { developers, minutes, rate_min, rate_max, trace_out } => {
            cmd_synth(&cli, *developers, *minutes, *rate_min, *rate_max, trace_out.as_deref())
        }
        Command::Calibrate => cmd_calibrate(&cli),
    }
}

// ---------------------------------------------------------------------------
// Settings resolution

fn load_run_file(cli: &Cli) -> anyhow::Result<RunFile> {
    match &cli.config {
        None => Ok(RunFile::default()),
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("read run settings {}", path.display()))?;
            toml::from_str(&text)
                .with_context(|| format!("parse run settings {}", path.display()))
        }
    }
}

fn parse_streaming(s: &str) -> anyhow::Result<StreamingMode> {
    StreamingMode::ALL
        .into_iter()
        .find(|m| m.name() == s)
        .with_context(|| format!("unknown streaming mode {s:?} (stream_with_cancel, no_stream)"))
}

fn parse_trigger(s: &str) -> anyhow::Result<TriggerMode> {
    TriggerMode::ALL
        .into_iter()
        .find(|m| m.name() == s)
        .with_context(|| format!("unknown trigger mode {s:?} (automatic, manual_emulated)"))
}

fn effective(
    cli: &Cli,
    flags: Option<&ConfigFlags>,
    window_override: Option<u64>,
    timeout_override: Option<u64>,
) -> anyhow::Result<Effective> {
    let run_file = load_run_file(cli)?;

    let mut config = SimulationConfig::default();
    let patch = &run_file.config;
    if let Some(v) = patch.developers {
        config.developers = v;
    }
    if let Some(v) = patch.streaming {
        config.streaming = v;
    }
    if let Some(v) = patch.trigger {
        config.trigger = v;
    }
    if let Some(v) = &patch.model_profile {
        config.model_profile = v.clone();
    }
    if let Some(v) = &patch.quantization {
        config.quantization_tag = v.clone();
    }
    if let Some(v) = patch.max_concurrent_requests {
        config.max_concurrent_requests = v;
    }
    if let Some(v) = patch.gpu_count {
        config.gpu_count = v;
    }
    if let Some(flags) = flags {
        if let Some(v) = flags.developers {
            config.developers = v;
        }
        if let Some(v) = &flags.streaming {
            config.streaming = parse_streaming(v)?;
        }
        if let Some(v) = &flags.trigger {
            config.trigger = parse_trigger(v)?;
        }
        if let Some(v) = &flags.model {
            config.model_profile = v.clone();
        }
        if let Some(v) = &flags.quantization {
            config.quantization_tag = v.clone();
        }
        if let Some(v) = flags.max_concurrent {
            config.max_concurrent_requests = v;
        }
        if let Some(v) = flags.gpus {
            config.gpu_count = v;
        }
    }
    config.validate()?;

    let profiles = match cli.profiles.as_ref().or(run_file.profiles.as_ref()) {
        Some(path) => ProfilesFile::load(path)?,
        None => ProfilesFile::builtin(),
    };

    let mut engine = EngineOptions::default();
    if let Some(t) = timeout_override.or(run_file.timeout_ms) {
        engine.timeout_ms = t;
    }
    if let Some(s) = run_file.sample_interval_ms {
        engine.sample_interval_ms = Some(s);
    }

    let defaults = SaturationThresholds::default();
    let thresholds = SaturationThresholds {
        rejected_fraction: run_file
            .saturation_rejected_fraction
            .unwrap_or(defaults.rejected_fraction),
        mean_latency_s: run_file.saturation_latency_s.unwrap_or(defaults.mean_latency_s),
    };

    Ok(Effective {
        config,
        window_ms: window_override.or(run_file.window_ms).unwrap_or(DEFAULT_WINDOW_MS),
        engine,
        profiles,
        thresholds,
        carbon_intensity: run_file.carbon_intensity.unwrap_or(DEFAULT_CARBON_INTENSITY),
    })
}

fn load_dataset(path: &Path, schema: &SchemaArgs) -> anyhow::Result<Dataset> {
    let map = match &schema.schema_map {
        None => None,
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("read schema map {}", p.display()))?;
            Some(SchemaMap::from_toml(&text)?)
        }
    };
    let dataset = parse_dataset_path(path, map.as_ref())
        .with_context(|| format!("parse trace {}", path.display()))?;
    Ok(dataset)
}

fn write_out(dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("create {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("write {}", path.display()))?;
    Ok(path)
}

fn new_runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("start async runtime")
}

// ---------------------------------------------------------------------------
// validate / stats / plan

fn cmd_validate(trace: &Path, schema: &SchemaArgs) -> anyhow::Result<()> {
    let dataset = load_dataset(trace, schema)?;
    let r = &dataset.report;
    println!("events:          {}", r.events);
    println!("developers:      {}", r.developers);
    println!("requests:        {}", dataset.total_requests());
    println!("malformed lines: {}", r.malformed.len());
    println!("orphan events:   {}", r.orphan_events);
    for (line, msg) in r.malformed.iter().take(10) {
        println!("  line {line}: {msg}");
    }
    if r.malformed.len() > 10 {
        println!("  ... and {} more", r.malformed.len() - 10);
    }
    if !r.malformed.is_empty() || r.orphan_events > 0 {
        bail!(
            "trace has {} malformed lines and {} orphan events",
            r.malformed.len(),
            r.orphan_events
        );
    }
    println!("trace is clean");
    Ok(())
}

fn cmd_stats(cli: &Cli, trace: &Path, schema: &SchemaArgs, json: bool) -> anyhow::Result<()> {
    let dataset = load_dataset(trace, schema)?;
    let b = lifecycle_stats(&dataset.sessions);
    println!("requests: {}", b.total);
    let row = |label: &str, n: usize| println!("  {label:<22} {n:>7} ({:.1}%)", b.percent(n));
    row("canceled:", b.canceled);
    row("empty:", b.empty);
    row("displayed, rejected:", b.displayed_rejected);
    row("accepted, not kept:", b.accepted);
    row("kept in code:", b.kept);
    row("displayed (cum.):", b.displayed_cumulative());
    row("accepted (cum.):", b.accepted_cumulative());

    let mut usage = Vec::new();
    println!("per developer:");
    for session in &dataset.sessions {
        let u = usage_stats(session)?;
        let shown = u
            .accepted_to_shown
            .map_or("   -".to_string(), |v| format!("{:4.1}%", v * 100.0));
        println!(
            "  {:<12} {:>5} requests  {:>5.2} req/min  accept/shown {}  accept/total {:4.1}%",
            u.developer_id,
            u.requests,
            u.requests_per_minute,
            shown,
            u.accepted_to_total * 100.0
        );
        usage.push(u);
    }

    if json {
        let out = serde_json::json!({
            "lifecycle": {
                "total": b.total,
                "canceled": b.canceled,
                "empty": b.empty,
                "displayed_rejected": b.displayed_rejected,
                "accepted": b.accepted,
                "kept": b.kept,
                "displayed_cumulative": b.displayed_cumulative(),
                "accepted_cumulative": b.accepted_cumulative(),
            },
            "usage": usage
                .iter()
                .map(|u| {
                    serde_json::json!({
                        "developer_id": u.developer_id,
                        "requests": u.requests,
                        "requests_per_minute": u.requests_per_minute,
                        "accepted_to_shown": u.accepted_to_shown,
                        "accepted_to_total": u.accepted_to_total,
                    })
                })
                .collect::<Vec<_>>(),
        });
        let path =
            write_out(&cli.out, "stats.json", serde_json::to_string_pretty(&out)?.as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_plan(
    cli: &Cli,
    trace: &Path,
    schema: &SchemaArgs,
    flags: &ConfigFlags,
    window_ms: Option<u64>,
) -> anyhow::Result<()> {
    let eff = effective(cli, Some(flags), window_ms, None)?;
    let dataset = load_dataset(trace, schema)?;
    let plan = build_plan(&dataset.sessions, &eff.config, cli.seed, eff.window_ms)?;
    let path = write_out(&cli.out, "plan.json", plan.to_json()?.as_bytes())?;
    print_plan_summary(&plan);
    println!("wrote {}", path.display());
    Ok(())
}

fn print_plan_summary(plan: &ReplayPlan) {
    println!(
        "plan: {} requests, {} round(s), {} virtual developer(s), window {} ms",
        plan.schedule.len(),
        plan.rounds,
        plan.config.developers,
        plan.window_ms
    );
    for w in &plan.overlap_windows {
        println!(
            "  round {}: {} requests, overlap window [{} ms, {} ms)",
            w.round,
            plan.round_schedule(w.round).count(),
            w.start_ms,
            w.end_ms
        );
    }
}

// ---------------------------------------------------------------------------
// replay

fn cmd_replay(
    cli: &Cli,
    trace: &Path,
    schema: &SchemaArgs,
    flags: &ConfigFlags,
    endpoint: Option<&str>,
    window_ms: Option<u64>,
    timeout_ms: Option<u64>,
) -> anyhow::Result<()> {
    if endpoint.is_none() && !cli.virtual_time {
        usage_error("replay needs an execution mode: --virtual-time or --endpoint <URL>");
    }
    let eff = effective(cli, Some(flags), window_ms, timeout_ms)?;
    let dataset = load_dataset(trace, schema)?;
    let plan = build_plan(&dataset.sessions, &eff.config, cli.seed, eff.window_ms)?;
    print_plan_summary(&plan);

    let rounds = match endpoint {
        Some(url) => {
            println!("replaying against {url} in real time");
            new_runtime()?.block_on(execute_plan_live(&plan, url, &eff.engine))?
        }
        None => {
            let settings = ServerSettings::resolve(&eff.profiles, &eff.config, cli.seed)?;
            execute_plan(&plan, &settings, &eff.engine)?
        }
    };
    let metrics = analyze_rounds(&rounds, &plan, eff.thresholds, eff.carbon_intensity)?;

    let dir = cli.out.join("replay");
    write_out(&dir, "rounds.json", serde_json::to_string(&rounds)?.as_bytes())?;
    write_out(&dir, "metrics.json", serde_json::to_string_pretty(&metrics)?.as_bytes())?;
    print_metrics(&metrics);
    println!("wrote {}", dir.display());
    Ok(())
}

fn print_metrics(m: &SimulationMetrics) {
    println!("configuration:      {}", m.config.label());
    println!("rounds:             {}", m.rounds);
    println!("requests in window: {} fired, {} completed (all rounds)", m.fired, m.completed);
    println!("mean latency:       {:.2} s (p95 {:.2} s)", m.mean_latency_s, m.p95_latency_s);
    println!("rejected:           {:.1}%", m.rejected_fraction * 100.0);
    println!("mean power:         {:.1} W", m.mean_power_watts);
    println!("window energy:      {:.1} Wh", m.energy_wh);
    println!(
        "per developer-hour: {:.2} Wh, {:.2} g CO2",
        m.energy_per_hour_per_developer_wh, m.co2_per_hour_per_developer_g
    );
    println!("per 1000 requests:  {:.2} Wh", m.energy_per_1000_requests_wh);
    println!("saturated:          {}", if m.saturated { "yes" } else { "no" });
}

// ---------------------------------------------------------------------------
// mock-serve

fn cmd_mock_serve(cli: &Cli, flags: &ConfigFlags, addr: SocketAddr) -> anyhow::Result<()> {
    let eff = effective(cli, Some(flags), None, None)?;
    let settings = ServerSettings::resolve(&eff.profiles, &eff.config, cli.seed)?;
    let out = cli.out.clone();

    new_runtime()?.block_on(async move {
        let server = MockServer::start(settings, addr).await?;
        println!("serving {} on {}", eff.config.label(), server.base_url());
        println!("  POST {}/v1/generate", server.base_url());
        println!("  GET  {}/v1/power", server.base_url());
        println!("press Ctrl-C to stop");
        tokio::signal::ctrl_c().await.context("wait for Ctrl-C")?;

        let stats = server.shutdown().await?;
        println!(
            "served {} requests ({} rejected), {} batch steps",
            stats.admitted_total,
            stats.rejected_total,
            stats.step_log.len()
        );
        let mut buf = Vec::new();
        write_step_rows_csv(&stats.step_log, &mut buf)?;
        let path = write_out(&out, "mock_step_log.csv", &buf)?;
        println!("wrote {}", path.display());
        anyhow::Ok(())
    })
}

// ---------------------------------------------------------------------------
// sweep

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    cli: &Cli,
    trace: &Path,
    schema: &SchemaArgs,
    space_path: &Path,
    endpoint: Option<&str>,
    parallel: usize,
    window_ms: Option<u64>,
    crash_after: Option<u64>,
) -> anyhow::Result<()> {
    if endpoint.is_some() && parallel > 1 {
        usage_error("--parallel only applies to virtual-clock sweeps; drop --endpoint");
    }
    let eff = effective(cli, None, window_ms, None)?;
    let dataset = load_dataset(trace, schema)?;
    let space = ConfigSpace::load(space_path)?;
    println!(
        "sweeping {} configurations over a {} ms window into {}",
        space.size(),
        eff.window_ms,
        cli.out.display()
    );

    let store = RunStore::open(&cli.out)?;
    let options = SweepOptions {
        base_seed: cli.seed,
        window_ms: eff.window_ms,
        profiles: eff.profiles,
        engine: eff.engine,
        mode: match endpoint {
            Some(url) => ExecutionMode::Live { base_url: url.to_string() },
            None => ExecutionMode::Virtual,
        },
        parallel,
        thresholds: eff.thresholds,
        carbon_intensity_g_per_kwh: eff.carbon_intensity,
        crash_after_replicates: crash_after,
    };
    let summary = run_sweep(&dataset.sessions, &space, &store, &options)?;

    println!(
        "{} configurations done: {} replicates executed, {} reused from the store",
        summary.outcomes.len(),
        summary.executed_replicates,
        summary.skipped_replicates
    );
    if !summary.failures.is_empty() {
        for (config, msg) in &summary.failures {
            eprintln!("failed: {}: {msg}", config.label());
        }
        bail!("{} configuration(s) failed", summary.failures.len());
    }
    println!("{}", render_scenario_table(&scenario_rows(&summary.outcomes)));
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze / report

/// Rebuilds per-configuration outcomes from whatever the store holds.
fn load_outcomes(
    store: &RunStore,
    thresholds: SaturationThresholds,
) -> anyhow::Result<Vec<ConfigOutcome>> {
    let mut outcomes = Vec::new();
    for (config, replicates) in store.collect_metrics()? {
        let aggregate = aggregate_replicates(&config, &replicates, thresholds)?;
        let stability = if replicates.len() >= 2 {
            let powers: Vec<f64> = replicates.iter().map(|m| m.mean_power_watts).collect();
            Some(tracewatt::metrics::stability(&powers)?)
        } else {
            None
        };
        outcomes.push(ConfigOutcome { config, replicates, aggregate, stability });
    }
    if outcomes.is_empty() {
        bail!("store at {} holds no completed runs", store.root().display());
    }
    Ok(outcomes)
}

fn cmd_analyze(
    cli: &Cli,
    recompute: Option<&Path>,
    schema: &SchemaArgs,
) -> anyhow::Result<()> {
    let eff = effective(cli, None, None, None)?;
    let store = RunStore::open(&cli.out)?;
    let outcomes = load_outcomes(&store, eff.thresholds)?;

    if let Some(trace) = recompute {
        verify_store(&store, trace, schema, &eff)?;
    }

    write_out(&cli.out, "outcomes.json", serde_json::to_string_pretty(&outcomes)?.as_bytes())?;
    println!("{}", render_scenario_table(&scenario_rows(&outcomes)));
    for o in &outcomes {
        if let Some(s) = o.stability {
            println!(
                "{}: {} replicates, power stability {:.3}% (std/mean)",
                o.config.label(),
                o.replicates.len(),
                s * 100.0
            );
        }
    }
    println!("wrote {}", cli.out.join("outcomes.json").display());
    Ok(())
}

/// Re-derives every stored metrics file from its raw round logs and the
/// replay plan rebuilt from the trace, failing on any difference.
fn verify_store(
    store: &RunStore,
    trace: &Path,
    schema: &SchemaArgs,
    eff: &Effective,
) -> anyhow::Result<()> {
    let manifest = store
        .load_manifest()?
        .with_context(|| format!("store at {} has no manifest", store.root().display()))?;
    let dataset = load_dataset(trace, schema)?;
    let mut verified = 0usize;
    for config in store.list_configs()? {
        for rep in store.completed_replicates(&config) {
            let seed = replicate_seed(manifest.base_seed, &config, rep);
            let plan = build_plan(&dataset.sessions, &config, seed, manifest.window_ms)?;
            let rounds: Vec<RoundExecution> = store.load_rounds(&config, rep)?;
            let expected: SimulationMetrics = store.load_metrics(&config, rep)?;
            let recomputed =
                analyze_rounds(&rounds, &plan, eff.thresholds, eff.carbon_intensity)?;
            if recomputed != expected {
                bail!(
                    "stored metrics for {} replicate {rep} do not match their raw logs",
                    config.label()
                );
            }
            verified += 1;
        }
    }
    println!("recomputed and verified {verified} replicate metrics from raw logs");
    Ok(())
}

fn cmd_report(cli: &Cli) -> anyhow::Result<()> {
    let eff = effective(cli, None, None, None)?;
    let store = RunStore::open(&cli.out)?;
    let outcomes = load_outcomes(&store, eff.thresholds)?;
    let report = full_report(&outcomes);

    write_out(&cli.out, "report.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
    let mut buf = Vec::new();
    tracewatt::sweep::report::write_scenario_csv(&mut buf, &report.scenarios)?;
    write_out(&cli.out, "scenario.csv", &buf)?;
    buf = Vec::new();
    tracewatt::sweep::report::write_impact_csv(&mut buf, &report.impacts)?;
    write_out(&cli.out, "impacts.csv", &buf)?;
    buf = Vec::new();
    tracewatt::sweep::report::write_curve_csv(&mut buf, &report.curves)?;
    write_out(&cli.out, "curves.csv", &buf)?;

    println!("{}", render_scenario_table(&report.scenarios));
    println!(
        "{} impact ratios over {} factor pairs, {} energy curves",
        report.impacts.len(),
        report.impacts.iter().map(|r| r.pairs).sum::<u32>(),
        report.curves.len()
    );
    println!(
        "wrote report.json, scenario.csv, impacts.csv, curves.csv under {}",
        cli.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// synth / calibrate

fn cmd_synth(
    cli: &Cli,
    developers: usize,
    minutes: f64,
    rate_min: f64,
    rate_max: f64,
    trace_out: Option<&Path>,
) -> anyhow::Result<()> {
    if !(rate_min > 0.0 && rate_max >= rate_min) {
        bail!("request rate range must satisfy 0 < rate-min <= rate-max");
    }
    let config = SyntheticConfig {
        developers,
        session_minutes: minutes,
        requests_per_minute: (rate_min, rate_max),
        ..SyntheticConfig::default()
    };
    let events = generate(&config, cli.seed);
    let mut buf = Vec::new();
    serialize_events(&events, &mut buf)?;
    let path = match trace_out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(p, &buf)?;
            p.to_path_buf()
        }
        None => write_out(&cli.out, "synthetic_trace.jsonl", &buf)?,
    };
    println!(
        "generated {} events for {} developers (seed {}) -> {}",
        events.len(),
        developers,
        cli.seed,
        path.display()
    );
    Ok(())
}

/// Published operating points the built-in profiles were fitted against.
/// The two right columns are the expected mean latency (s) and mean power (W).
struct ReferenceScenario {
    name: &'static str,
    developers: u32,
    trigger: TriggerMode,
    streaming: StreamingMode,
    model: &'static str,
    quantization: &'static str,
    gpus: u32,
    latency_s: f64,
    power_w: f64,
    /// The affine batch-power model cannot reach this row's published power
    /// at its published latency; kept for the residual report.
    known_divergence: bool,
}

const REFERENCE_SCENARIOS: &[ReferenceScenario] = &[
    ReferenceScenario {
        name: "small-frugal",
        developers: 5,
        trigger: TriggerMode::ManualEmulated,
        streaming: StreamingMode::NoStream,
        model: "sc2-7b",
        quantization: "none",
        gpus: 1,
        latency_s: 6.4,
        power_w: 249.3,
        known_divergence: false,
    },
    ReferenceScenario {
        name: "small-performance",
        developers: 5,
        trigger: TriggerMode::Automatic,
        streaming: StreamingMode::StreamWithCancel,
        model: "starcoder",
        quantization: "none",
        gpus: 4,
        latency_s: 1.2,
        power_w: 633.1,
        known_divergence: true,
    },
    ReferenceScenario {
        name: "medium-frugal",
        developers: 20,
        trigger: TriggerMode::ManualEmulated,
        streaming: StreamingMode::NoStream,
        model: "sc2-7b",
        quantization: "none",
        gpus: 1,
        latency_s: 7.7,
        power_w: 363.2,
        known_divergence: false,
    },
    ReferenceScenario {
        name: "medium-performance",
        developers: 20,
        trigger: TriggerMode::Automatic,
        streaming: StreamingMode::StreamWithCancel,
        model: "starcoder",
        quantization: "none",
        gpus: 4,
        latency_s: 1.7,
        power_w: 898.8,
        known_divergence: true,
    },
    ReferenceScenario {
        name: "large-frugal-distributed",
        developers: 75,
        trigger: TriggerMode::ManualEmulated,
        streaming: StreamingMode::NoStream,
        model: "sc2-7b",
        quantization: "eetq",
        gpus: 4,
        latency_s: 16.5,
        power_w: 858.9,
        known_divergence: false,
    },
    ReferenceScenario {
        name: "large-performance",
        developers: 50,
        trigger: TriggerMode::Automatic,
        streaming: StreamingMode::StreamWithCancel,
        model: "starcoder",
        quantization: "none",
        gpus: 4,
        latency_s: 2.3,
        power_w: 1038.2,
        known_divergence: true,
    },
];

/// Synthetic workload matching the reference activity level: a constant
/// 8.3 requests/minute per developer, of which the manual-emulated trigger
/// keeps the ~30% that reach the editor (~2.5 requests/minute).
fn calibration_trace(seed: u64) -> Vec<tracewatt::trace::DeveloperSession> {
    let config = SyntheticConfig {
        developers: 25,
        // Long enough that every session spans the whole replay window even
        // after the per-developer +/-40% length jitter.
        session_minutes: 110.0,
        requests_per_minute: (8.3, 8.3),
        ..SyntheticConfig::default()
    };
    let events = generate(&config, seed);
    let mut buf = Vec::new();
    serialize_events(&events, &mut buf).expect("serialize synthetic events");
    let text = String::from_utf8(buf).expect("synthetic events are UTF-8");
    tracewatt::trace::parse::parse_dataset(text.as_bytes())
        .expect("synthetic trace parses")
        .sessions
}

fn cmd_calibrate(cli: &Cli) -> anyhow::Result<()> {
    let eff = effective(cli, None, None, None)?;
    let sessions = calibration_trace(cli.seed);
    println!(
        "{:<26} {:>9} {:>9} {:>7}   {:>9} {:>9} {:>7}",
        "scenario", "lat_s", "ref_s", "err", "power_W", "ref_W", "err"
    );

    let mut worst_fitted_err: f64 = 0.0;
    for s in REFERENCE_SCENARIOS {
        let config = SimulationConfig {
            developers: s.developers,
            streaming: s.streaming,
            trigger: s.trigger,
            model_profile: s.model.to_string(),
            quantization_tag: s.quantization.to_string(),
            max_concurrent_requests: 1000,
            gpu_count: s.gpus,
        };
        let plan = build_plan(&sessions, &config, cli.seed, eff.window_ms)?;
        let settings = ServerSettings::resolve(&eff.profiles, &config, cli.seed)?;
        let rounds = execute_plan(&plan, &settings, &eff.engine)?;
        let m = analyze_rounds(&rounds, &plan, eff.thresholds, eff.carbon_intensity)?;

        let lat_err = (m.mean_latency_s - s.latency_s) / s.latency_s;
        let pow_err = (m.mean_power_watts - s.power_w) / s.power_w;
        let marker = if s.known_divergence {
            "  (known divergence)"
        } else {
            worst_fitted_err = worst_fitted_err.max(lat_err.abs()).max(pow_err.abs());
            ""
        };
        println!(
            "{:<26} {:>9.2} {:>9.2} {:>6.1}%   {:>9.1} {:>9.1} {:>6.1}%{}",
            s.name,
            m.mean_latency_s,
            s.latency_s,
            lat_err * 100.0,
            m.mean_power_watts,
            s.power_w,
            pow_err * 100.0,
            marker
        );
    }
    println!(
        "worst fitted-scenario error: {:.1}% (tolerance 20%)",
        worst_fitted_err * 100.0
    );
    if worst_fitted_err > 0.20 {
        bail!("fitted scenarios drifted outside the 20% tolerance");
    }
    Ok(())
}
