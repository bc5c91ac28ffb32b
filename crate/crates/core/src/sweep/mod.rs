//! Sweep orchestration: enumerate the factor space, execute the missing
//! replicates, persist results, and reduce them per configuration.

pub mod report;
pub mod space;
pub mod store;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SimulationConfig;
use crate::engine::virtual_clock::{execute_plan, RoundExecution};
use crate::engine::EngineOptions;
use crate::error::{Error, Result};
use crate::metrics::{
    analyze_rounds, is_saturated, stability, SaturationThresholds, SimulationMetrics,
    DEFAULT_CARBON_INTENSITY,
};
use crate::plan::{build_plan, DEFAULT_WINDOW_MS};
use crate::sim::{ProfilesFile, ServerSettings};
use crate::trace::DeveloperSession;
use crate::Scalar;

pub use space::ConfigSpace;
use store::{RunStore, SweepManifest};

/// Statistical replicates per configuration: small crowds are noisier, so
/// they are repeated until about twenty virtual developer-hours exist.
pub fn replication_count(developers: u32) -> u32 {
    if developers >= 20 {
        1
    } else {
        20u32.div_ceil(developers.max(1))
    }
}

/// Deterministic per-replicate seed: a resumed sweep re-derives the same
/// seed for the same (base seed, configuration, replicate) triple.
pub fn replicate_seed(base_seed: u64, config: &SimulationConfig, replicate: u32) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base_seed.to_le_bytes());
    hasher.update(config.stable_hash().as_bytes());
    hasher.update(replicate.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Where the replay requests go.
#[derive(Debug, Clone, PartialEq)]
pub enum ExecutionMode {
    /// Deterministic in-process simulation on a virtual clock.
    Virtual,
    /// Real-clock HTTP replay against an endpoint serving the protocol.
    Live { base_url: String },
}

/// Sweep-wide knobs.
#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub base_seed: u64,
    pub window_ms: u64,
    pub profiles: ProfilesFile,
    pub engine: EngineOptions,
    pub mode: ExecutionMode,
    /// Worker threads; more than one requires the virtual mode.
    pub parallel: usize,
    pub thresholds: SaturationThresholds,
    pub carbon_intensity_g_per_kwh: Scalar,
    /// Fault injection: abort the process after this many replicate saves.
    /// Exercises crash recovery; never set outside tests.
    pub crash_after_replicates: Option<u64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            base_seed: 0,
            window_ms: DEFAULT_WINDOW_MS,
            profiles: ProfilesFile::builtin(),
            engine: EngineOptions::default(),
            mode: ExecutionMode::Virtual,
            parallel: 1,
            thresholds: SaturationThresholds::default(),
            carbon_intensity_g_per_kwh: DEFAULT_CARBON_INTENSITY,
            crash_after_replicates: None,
        }
    }
}

/// Reduced result of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigOutcome {
    pub config: SimulationConfig,
    pub replicates: Vec<SimulationMetrics>,
    pub aggregate: SimulationMetrics,
    /// Population std over mean of replicate mean powers; needs >= 2 reps.
    pub stability: Option<Scalar>,
}

/// What a sweep did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub outcomes: Vec<ConfigOutcome>,
    /// Configurations whose execution failed, with the error text.
    pub failures: Vec<(SimulationConfig, String)>,
    pub executed_replicates: usize,
    pub skipped_replicates: usize,
}

/// Arithmetic mean of the replicate metrics of one configuration.
pub fn aggregate_replicates(
    config: &SimulationConfig,
    replicates: &[SimulationMetrics],
    thresholds: SaturationThresholds,
) -> Result<SimulationMetrics> {
    if replicates.is_empty() {
        return Err(Error::NoCompletedRuns);
    }
    let n = replicates.len() as Scalar;
    let mean = |f: fn(&SimulationMetrics) -> Scalar| {
        replicates.iter().map(f).sum::<Scalar>() / n
    };
    let mean_latency_s = mean(|m| m.mean_latency_s);
    let rejected_fraction = mean(|m| m.rejected_fraction);
    Ok(SimulationMetrics {
        config: config.clone(),
        mean_latency_s,
        p95_latency_s: mean(|m| m.p95_latency_s),
        rejected_fraction,
        completed: (mean(|m| m.completed as Scalar)).round() as u64,
        fired: (mean(|m| m.fired as Scalar)).round() as u64,
        mean_power_watts: mean(|m| m.mean_power_watts),
        energy_wh: mean(|m| m.energy_wh),
        energy_per_hour_per_developer_wh: mean(|m| m.energy_per_hour_per_developer_wh),
        energy_per_1000_requests_wh: mean(|m| m.energy_per_1000_requests_wh),
        co2_per_hour_per_developer_g: mean(|m| m.co2_per_hour_per_developer_g),
        saturated: is_saturated(rejected_fraction, mean_latency_s, thresholds),
        rounds: replicates[0].rounds,
    })
}

/// Builds and executes one replicate, returning its rounds and metrics.
pub fn execute_replicate(
    sessions: &[DeveloperSession],
    config: &SimulationConfig,
    seed: u64,
    options: &SweepOptions,
) -> Result<(Vec<RoundExecution>, SimulationMetrics)> {
    let plan = build_plan(sessions, config, seed, options.window_ms)?;
    let rounds = match &options.mode {
        ExecutionMode::Virtual => {
            let settings = ServerSettings::resolve(&options.profiles, config, seed)?;
            execute_plan(&plan, &settings, &options.engine)?
        }
        ExecutionMode::Live { base_url } => {
            let runtime = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .map_err(|e| Error::ServerStartup(e.to_string()))?;
            runtime.block_on(crate::engine::live::execute_plan_live(
                &plan,
                base_url,
                &options.engine,
            ))?
        }
    };
    let metrics = analyze_rounds(
        &rounds,
        &plan,
        options.thresholds,
        options.carbon_intensity_g_per_kwh,
    )?;
    Ok((rounds, metrics))
}

struct WorkQueue {
    items: Mutex<Vec<(SimulationConfig, u32)>>,
}

impl WorkQueue {
    fn next(&self) -> Option<(SimulationConfig, u32)> {
        self.items.lock().expect("queue lock").pop()
    }
}

/// Runs every missing replicate of the space, resuming from whatever the
/// store already holds. Failures are isolated per configuration; the sweep
/// finishes the rest and reports them.
pub fn run_sweep(
    sessions: &[DeveloperSession],
    space: &ConfigSpace,
    store: &RunStore,
    options: &SweepOptions,
) -> Result<SweepSummary> {
    if options.parallel > 1 && !matches!(options.mode, ExecutionMode::Virtual) {
        return Err(Error::InvalidConfig(
            "parallel sweeps require the virtual clock against the built-in simulator"
                .to_string(),
        ));
    }
    let manifest = SweepManifest {
        version: 1,
        base_seed: options.base_seed,
        window_ms: options.window_ms,
        space: space.clone(),
    };
    match store.load_manifest()? {
        None => store.save_manifest(&manifest)?,
        Some(existing) if existing == manifest => {}
        Some(_) => {
            return Err(Error::InvalidConfig(format!(
                "store at {} holds a sweep with different parameters; use a fresh --out",
                store.root().display()
            )));
        }
    }

    let configs = space.enumerate()?;
    let mut pending: Vec<(SimulationConfig, u32)> = Vec::new();
    let mut skipped_replicates = 0usize;
    for config in &configs {
        for rep in 0..replication_count(config.developers) {
            if store.is_complete(config, rep) {
                skipped_replicates += 1;
            } else {
                pending.push((config.clone(), rep));
            }
        }
    }
    // Pop order is back-to-front; reverse so work proceeds in space order.
    pending.reverse();

    let queue = WorkQueue { items: Mutex::new(pending) };
    let failures: Mutex<Vec<(SimulationConfig, String)>> = Mutex::new(Vec::new());
    let executed = AtomicU64::new(0);
    let saves = AtomicU64::new(0);

    let worker = |queue: &WorkQueue| {
        while let Some((config, rep)) = queue.next() {
            let seed = replicate_seed(options.base_seed, &config, rep);
            match execute_replicate(sessions, &config, seed, options) {
                Ok((rounds, metrics)) => {
                    match store.save_replicate(&config, rep, &rounds, &metrics) {
                        Ok(()) => {
                            executed.fetch_add(1, Ordering::SeqCst);
                            let saved = saves.fetch_add(1, Ordering::SeqCst) + 1;
                            if options.crash_after_replicates.is_some_and(|n| saved >= n) {
                                log::error!("fault injection: aborting after {saved} saves");
                                std::process::abort();
                            }
                        }
                        Err(e) => failures
                            .lock()
                            .expect("failure lock")
                            .push((config.clone(), e.to_string())),
                    }
                }
                Err(e) => failures
                    .lock()
                    .expect("failure lock")
                    .push((config.clone(), e.to_string())),
            }
        }
    };

    if options.parallel > 1 {
        std::thread::scope(|scope| {
            for _ in 0..options.parallel {
                scope.spawn(|| worker(&queue));
            }
        });
    } else {
        worker(&queue);
    }

    let mut outcomes = Vec::new();
    for config in &configs {
        let replicates: Vec<SimulationMetrics> = store
            .completed_replicates(config)
            .into_iter()
            .map(|rep| store.load_metrics(config, rep))
            .collect::<Result<_>>()?;
        if replicates.is_empty() {
            continue; // reported in failures
        }
        let aggregate = aggregate_replicates(config, &replicates, options.thresholds)?;
        let stability_value = if replicates.len() >= 2 {
            let powers: Vec<Scalar> =
                replicates.iter().map(|m| m.mean_power_watts).collect();
            Some(stability(&powers)?)
        } else {
            None
        };
        outcomes.push(ConfigOutcome {
            config: config.clone(),
            replicates,
            aggregate,
            stability: stability_value,
        });
    }

    Ok(SweepSummary {
        outcomes,
        failures: failures.into_inner().expect("failure lock"),
        executed_replicates: executed.load(Ordering::SeqCst) as usize,
        skipped_replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::StreamingMode;
    use crate::trace::parse::{assemble_sessions, ParseReport};
    use crate::trace::synthetic::{generate, SyntheticConfig};

    fn busy_sessions() -> Vec<DeveloperSession> {
        let events = generate(
            &SyntheticConfig {
                developers: 3,
                session_minutes: 2.0,
                requests_per_minute: (8.0, 15.0),
                ..Default::default()
            },
            21,
        );
        let mut report = ParseReport::default();
        assemble_sessions(&events, &mut report)
    }

    fn fast_options(dir: &std::path::Path) -> (RunStore, SweepOptions) {
        let store = RunStore::open(dir).unwrap();
        let options = SweepOptions {
            window_ms: 60_000,
            ..SweepOptions::default()
        };
        (store, options)
    }

    #[test]
    fn replication_counts_follow_the_crowd_size() {
        assert_eq!(replication_count(1), 20);
        assert_eq!(replication_count(2), 10);
        assert_eq!(replication_count(5), 4);
        assert_eq!(replication_count(10), 2);
        assert_eq!(replication_count(20), 1);
        assert_eq!(replication_count(500), 1);
    }

    #[test]
    fn replicate_seeds_are_deterministic_and_distinct() {
        let a = SimulationConfig::default();
        let b = SimulationConfig { developers: 5, ..SimulationConfig::default() };
        assert_eq!(replicate_seed(1, &a, 0), replicate_seed(1, &a, 0));
        assert_ne!(replicate_seed(1, &a, 0), replicate_seed(1, &a, 1));
        assert_ne!(replicate_seed(1, &a, 0), replicate_seed(2, &a, 0));
        assert_ne!(replicate_seed(1, &a, 0), replicate_seed(1, &b, 0));
    }

    #[test]
    fn sweep_executes_persists_and_resumes() {
        let sessions = busy_sessions();
        let dir = tempfile::tempdir().unwrap();
        let (store, options) = fast_options(dir.path());
        let space = ConfigSpace {
            developers: vec![5, 10],
            streaming: StreamingMode::ALL.to_vec(),
            ..Default::default()
        };

        let first = run_sweep(&sessions, &space, &store, &options).unwrap();
        assert!(first.failures.is_empty(), "failures: {:?}", first.failures);
        // 5 devs -> 4 replicates, 10 devs -> 2, twice for the streaming axis.
        assert_eq!(first.executed_replicates, 12);
        assert_eq!(first.skipped_replicates, 0);
        assert_eq!(first.outcomes.len(), 4);
        for outcome in &first.outcomes {
            let expected = replication_count(outcome.config.developers) as usize;
            assert_eq!(outcome.replicates.len(), expected);
            assert_eq!(outcome.stability.is_some(), expected >= 2);
            assert!(outcome.aggregate.mean_power_watts > 0.0);
            assert!(outcome.aggregate.fired > 0);
        }

        // Resume: everything already stored, nothing executes again.
        let second = run_sweep(&sessions, &space, &store, &options).unwrap();
        assert_eq!(second.executed_replicates, 0);
        assert_eq!(second.skipped_replicates, 12);
        assert_eq!(second.outcomes, first.outcomes);
    }

    #[test]
    fn parallel_and_serial_sweeps_agree() {
        let sessions = busy_sessions();
        let space = ConfigSpace {
            developers: vec![10, 20],
            ..Default::default()
        };
        let serial_dir = tempfile::tempdir().unwrap();
        let (serial_store, serial_options) = fast_options(serial_dir.path());
        let serial = run_sweep(&sessions, &space, &serial_store, &serial_options).unwrap();

        let parallel_dir = tempfile::tempdir().unwrap();
        let (parallel_store, mut parallel_options) = fast_options(parallel_dir.path());
        parallel_options.parallel = 4;
        let parallel = run_sweep(&sessions, &space, &parallel_store, &parallel_options).unwrap();

        assert_eq!(serial.outcomes, parallel.outcomes);
        assert!(serial.failures.is_empty() && parallel.failures.is_empty());
    }

    #[test]
    fn failures_are_isolated_per_configuration() {
        let sessions = busy_sessions();
        let dir = tempfile::tempdir().unwrap();
        let (store, options) = fast_options(dir.path());
        let space = ConfigSpace {
            developers: vec![20],
            model_profile: vec!["sc2-7b".into(), "no-such-model".into()],
            ..Default::default()
        };
        let summary = run_sweep(&sessions, &space, &store, &options).unwrap();
        assert_eq!(summary.failures.len(), 1);
        assert_eq!(summary.failures[0].0.model_profile, "no-such-model");
        assert_eq!(summary.outcomes.len(), 1);
        assert_eq!(summary.outcomes[0].config.model_profile, "sc2-7b");
    }

    #[test]
    fn parallel_live_mode_is_rejected() {
        let sessions = busy_sessions();
        let dir = tempfile::tempdir().unwrap();
        let (store, mut options) = fast_options(dir.path());
        options.parallel = 2;
        options.mode = ExecutionMode::Live { base_url: "http://127.0.0.1:9".into() };
        let err = run_sweep(&sessions, &ConfigSpace::default(), &store, &options).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn reused_store_with_different_parameters_is_rejected() {
        let sessions = busy_sessions();
        let dir = tempfile::tempdir().unwrap();
        let (store, options) = fast_options(dir.path());
        let space = ConfigSpace { developers: vec![20], ..Default::default() };
        run_sweep(&sessions, &space, &store, &options).unwrap();

        let other_space = ConfigSpace { developers: vec![30], ..Default::default() };
        let err = run_sweep(&sessions, &other_space, &store, &options).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        let mut reseeded = options.clone();
        reseeded.base_seed = 999;
        let err = run_sweep(&sessions, &space, &store, &reseeded).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }
}
