//! Acceptance suite: one test per release criterion, named `criterion_N_*`
//! so the harness prints one pass/fail line for each. Each test states the
//! property it pins; several also print measured values (visible with
//! `--nocapture`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use tracewatt::config::{SimulationConfig, StreamingMode, TriggerMode};
use tracewatt::engine::virtual_clock::execute_plan;
use tracewatt::engine::{check_single_flight, EngineOptions, RequestStatus};
use tracewatt::metrics::impact::{impact_ratios, ImpactMetric};
use tracewatt::metrics::{
    analyze_rounds, co2_grams, integrate, PowerSample, SampleSource, SaturationThresholds,
    SimulationMetrics, DEFAULT_CARBON_INTENSITY,
};
use tracewatt::plan::build_plan;
use tracewatt::sim::profile::{ProfilesFile, ServerSettings};
use tracewatt::sim::{Admission, BatchSim};
use tracewatt::sweep::store::RunStore;
use tracewatt::sweep::{run_sweep, ConfigSpace, SweepOptions};
use tracewatt::trace::distance::{tokenize, word_edit_distance};
use tracewatt::trace::parse::{parse_dataset, parse_dataset_path, serialize_events, SchemaMap};
use tracewatt::trace::synthetic::{generate, SyntheticConfig};
use tracewatt::trace::{
    lifecycle_stats, payload_keys, DeveloperSession, EventKind, GenerationRequest,
    RequestOutcome, TelemetryEvent,
};

// ---------------------------------------------------------------------------
// Criterion 1: the published optimal-configuration table is arithmetically
// self-consistent under this pipeline's definitions - power over developers
// gives the per-developer energy row, and the CO2 row follows from it at
// 56 g/kWh - except both medium-team columns, whose CO2 entries do not
// follow from their own energy rows (a documented inconsistency in the
// source table). Runs in well under a second.

#[test]
fn criterion_1_scenario_table_arithmetic() {
    // (developers, mean power W, Wh per developer-hour, g CO2 per
    //  developer-hour, is medium-team column)
    const TABLE: [(u32, f64, f64, f64, bool); 6] = [
        (5, 249.3, 49.9, 2.8, false),
        (5, 633.1, 126.6, 7.1, false),
        (20, 363.2, 18.2, 0.9, true),
        (20, 898.8, 44.9, 1.0, true),
        (75, 858.9, 11.4, 0.6, false),
        (50, 1038.2, 20.8, 1.2, false),
    ];

    for (developers, power_w, wh_per_dev, co2_g, medium) in TABLE {
        let share = power_w / developers as f64;
        assert!(
            (share - wh_per_dev).abs() < 0.1,
            "power {power_w} W over {developers} developers gives {share} Wh/h, \
             table says {wh_per_dev}"
        );

        let derived_co2 = co2_grams(wh_per_dev, DEFAULT_CARBON_INTENSITY).unwrap();
        if medium {
            assert!(
                (derived_co2 - co2_g).abs() >= 0.1,
                "medium-team column unexpectedly became consistent: \
                 {wh_per_dev} Wh -> {derived_co2} g vs table {co2_g} g"
            );
            println!(
                "criterion 1: flagged documented inconsistency: {wh_per_dev} Wh/dev/h \
                 gives {derived_co2:.3} g CO2, table prints {co2_g} g"
            );
        } else {
            assert!(
                (derived_co2 - co2_g).abs() < 0.1,
                "{wh_per_dev} Wh at {DEFAULT_CARBON_INTENSITY} g/kWh gives \
                 {derived_co2} g, table says {co2_g}"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 2: lifecycle reconstruction reproduces exact hand counts on a
// 1,000-request trace built with known outcomes, exercising every
// classification path (explicit cancel, superseding issue, dangling issue at
// session end, empty suggestion, rejection, accept without retention by
// explicit verdict and by edit distance, retention by verdict and by
// distance). Optionally checks the published displayed/accepted/kept
// fractions on a real dataset.

const DEVS: usize = 100;
const PER_DEV: usize = 10;

fn hand_built_trace() -> Vec<TelemetryEvent> {
    // 540 canceled + 160 empty + 190 rejected + 25 accepted + 85 kept = 1000.
    let mut outcomes = Vec::with_capacity(DEVS * PER_DEV);
    for (count, outcome) in [
        (540, RequestOutcome::Canceled),
        (160, RequestOutcome::Empty),
        (190, RequestOutcome::DisplayedRejected),
        (25, RequestOutcome::Accepted),
        (85, RequestOutcome::Kept),
    ] {
        outcomes.extend(std::iter::repeat_n(outcome, count));
    }
    // Deal outcomes across developers so every session mixes paths.
    let mut events = Vec::new();
    let mut event_seq = 0usize;
    for dev in 0..DEVS {
        let developer_id = format!("dev{dev:03}");
        let mut push = |kind: EventKind, ts: u64, pairs: &[(&str, serde_json::Value)]| {
            event_seq += 1;
            let mut payload = serde_json::Map::new();
            for (k, v) in pairs {
                payload.insert((*k).to_string(), v.clone());
            }
            events.push(TelemetryEvent {
                event_id: format!("e{event_seq:05}"),
                developer_id: developer_id.clone(),
                timestamp_ms: ts,
                kind,
                payload,
            });
        };

        for r in 0..PER_DEV {
            let global = dev * PER_DEV + r;
            // Interleave so each developer sees a spread of outcomes.
            let outcome = outcomes[(global * 7 + 3) % outcomes.len()];
            let t = 1_000 + r as u64 * 30_000;
            let rid = format!("dev{dev:03}-r{r}");
            let id = |s: &'static str| (s, serde_json::Value::from(rid.clone()));
            push(
                EventKind::RequestIssued,
                t,
                &[id(payload_keys::REQUEST_ID), ("prompt", "fn demo() {".into())],
            );
            let suggestion = "alpha beta gamma delta";
            match outcome {
                RequestOutcome::Canceled => {
                    // Alternate explicit cancel / silent supersede-or-dangle.
                    if global.is_multiple_of(2) {
                        push(EventKind::Canceled, t + 300, &[id(payload_keys::REQUEST_ID)]);
                    }
                }
                RequestOutcome::Empty => {
                    push(
                        EventKind::GenerationShown,
                        t + 400,
                        &[id(payload_keys::REQUEST_ID), (payload_keys::SUGGESTION, "".into())],
                    );
                }
                RequestOutcome::DisplayedRejected => {
                    push(
                        EventKind::GenerationShown,
                        t + 400,
                        &[
                            id(payload_keys::REQUEST_ID),
                            (payload_keys::SUGGESTION, suggestion.into()),
                        ],
                    );
                    push(EventKind::Rejected, t + 900, &[id(payload_keys::REQUEST_ID)]);
                }
                RequestOutcome::Accepted | RequestOutcome::Kept => {
                    let kept = outcome == RequestOutcome::Kept;
                    push(
                        EventKind::GenerationShown,
                        t + 400,
                        &[
                            id(payload_keys::REQUEST_ID),
                            (payload_keys::SUGGESTION, suggestion.into()),
                        ],
                    );
                    push(EventKind::Accepted, t + 900, &[id(payload_keys::REQUEST_ID)]);
                    // Half the probes carry an explicit verdict, half rely on
                    // the edit-distance rule against the probed region.
                    let probe: Vec<(&str, serde_json::Value)> = if global.is_multiple_of(2) {
                        vec![
                            id(payload_keys::REQUEST_ID),
                            (payload_keys::RETAINED, kept.into()),
                        ]
                    } else {
                        let region = if kept {
                            // One word substituted out of four: distance 2,
                            // 2/4 < 0.5 is false... keep it identical instead.
                            suggestion
                        } else {
                            "x y z"
                        };
                        vec![id(payload_keys::REQUEST_ID), (payload_keys::REGION, region.into())]
                    };
                    push(EventKind::StillInCode, t + 5_000, &probe);
                }
            }
        }
    }
    events
}

#[test]
fn criterion_2_lifecycle_reconstruction() {
    let events = hand_built_trace();
    let mut buf = Vec::new();
    serialize_events(&events, &mut buf).unwrap();
    let dataset = parse_dataset(buf.as_slice()).unwrap();

    assert_eq!(dataset.report.malformed.len(), 0);
    assert_eq!(dataset.report.orphan_events, 0);
    let b = lifecycle_stats(&dataset.sessions);
    assert_eq!(
        (b.total, b.canceled, b.empty, b.displayed_rejected, b.accepted, b.kept),
        (1000, 540, 160, 190, 25, 85),
        "hand counts must be reproduced exactly"
    );
    assert_eq!(b.displayed_cumulative(), 300);
    assert_eq!(b.accepted_cumulative(), 110);

    // Real-dataset fractions, when a trace is provided.
    match std::env::var("TRACEWATT_REAL_TRACE") {
        Err(_) => println!(
            "criterion 2: real-dataset fractions skipped (set TRACEWATT_REAL_TRACE, and \
             TRACEWATT_REAL_SCHEMA_MAP for foreign formats, to enable)"
        ),
        Ok(path) => {
            let schema = std::env::var("TRACEWATT_REAL_SCHEMA_MAP").ok().map(|p| {
                SchemaMap::from_toml(&std::fs::read_to_string(p).unwrap()).unwrap()
            });
            let dataset = parse_dataset_path(path.as_ref(), schema.as_ref()).unwrap();
            let b = lifecycle_stats(&dataset.sessions);
            let pct = |n: usize| n as f64 * 100.0 / b.total as f64;
            let displayed = pct(b.displayed_cumulative());
            let accepted = pct(b.accepted_cumulative());
            let kept = pct(b.kept);
            println!(
                "criterion 2: real dataset: displayed {displayed:.2}%, accepted \
                 {accepted:.2}%, kept {kept:.2}%"
            );
            assert!((displayed - 30.0).abs() <= 0.5);
            assert!((accepted - 11.0).abs() <= 0.5);
            assert!((kept - 8.5).abs() <= 0.5);
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 3: scheduling properties over 10,000 randomized plans - the
// documented alignment example, determinism under a fixed seed, full session
// coverage when developers <= sessions, and constant duplicate offsets in
// [0, 30 s] otherwise. Budget: 30 s.

fn session(i: usize, duration_ms: u64, issue_times: &[u64]) -> DeveloperSession {
    let requests = issue_times
        .iter()
        .enumerate()
        .map(|(j, &t)| GenerationRequest {
            request_id: format!("s{i}-r{j}"),
            developer_id: format!("s{i}"),
            issue_time_ms: t,
            prompt: format!("prompt {i}/{j}"),
            max_new_tokens: Some(64),
            outcome: RequestOutcome::DisplayedRejected,
            latency_observed_ms: Some(700),
            suggestion: Some("let x = 1;".to_string()),
            suggestion_tokens: Some(5),
        })
        .collect();
    DeveloperSession {
        developer_id: format!("s{i}"),
        requests,
        session_duration_ms: duration_ms,
    }
}

#[test]
fn criterion_3_scheduling_properties() {
    let started = std::time::Instant::now();

    // Documented example: a 50-minute session replayed in a one-hour window
    // starts at minute 5, putting its midpoint at the window's midpoint.
    let fifty_min = session(0, 3_000_000, &[0, 1_500_000, 2_999_999]);
    let config = SimulationConfig { developers: 1, ..SimulationConfig::default() };
    let plan = build_plan(std::slice::from_ref(&fifty_min), &config, 1, 3_600_000).unwrap();
    let offsets: Vec<u64> = plan.schedule.iter().map(|r| r.fire_offset_ms).collect();
    assert_eq!(offsets, vec![300_000, 1_800_000, 3_299_999]);

    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let window_ms = 3_600_000u64;
    let axis = [1u32, 2, 5, 10];
    for round in 0..10_000 {
        let k = rng.random_range(1..=4usize);
        let sessions: Vec<DeveloperSession> = (0..k)
            .map(|i| {
                // Short enough that a 30 s duplicate shift never leaves the
                // window, so duplicated sessions keep every request.
                let duration = rng.random_range(120_000..=window_ms - 120_000);
                let n_req = rng.random_range(1..=12usize);
                let mut times: Vec<u64> =
                    (0..n_req).map(|_| rng.random_range(0..duration)).collect();
                times.sort_unstable();
                times.dedup();
                session(i, duration, &times)
            })
            .collect();
        let developers = axis[rng.random_range(0..axis.len())];
        let config = SimulationConfig { developers, ..SimulationConfig::default() };
        let seed = rng.random::<u64>();

        let plan = build_plan(&sessions, &config, seed, window_ms).unwrap();
        assert_eq!(
            plan,
            build_plan(&sessions, &config, seed, window_ms).unwrap(),
            "same seed, same plan"
        );

        // Every virtual developer replays one source session shifted by a
        // constant delta: zero for originals, up to 30 s for duplicates.
        // Midpoint alignment fixes each source session's base offset.
        let mut covered = vec![false; k];
        for r in 0..plan.rounds {
            let mut by_dev: std::collections::BTreeMap<u32, Vec<(&str, u64)>> =
                std::collections::BTreeMap::new();
            for req in plan.round_schedule(r) {
                by_dev
                    .entry(req.virtual_developer_id)
                    .or_default()
                    .push((&req.source_request_id, req.fire_offset_ms));
            }
            for replayed in by_dev.values() {
                let src: usize =
                    replayed[0].0.strip_prefix('s').unwrap().split('-').next().unwrap()
                        .parse()
                        .unwrap();
                covered[src] = true;
                let base = (window_ms - sessions[src].session_duration_ms) / 2;
                let deltas: Vec<u64> = replayed
                    .iter()
                    .map(|(rid, offset)| {
                        let j: usize = rid.rsplit('r').next().unwrap().parse().unwrap();
                        offset - (sessions[src].requests[j].issue_time_ms + base)
                    })
                    .collect();
                assert!(
                    deltas.windows(2).all(|w| w[0] == w[1]),
                    "round {round}: non-constant duplicate shift {deltas:?}"
                );
                assert!(deltas[0] <= 30_000, "duplicate shift {} > 30 s", deltas[0]);
            }
        }
        if developers as usize <= k {
            assert!(
                covered.iter().all(|&c| c),
                "round {round}: {developers} developers over {k} sessions must cover all"
            );
        }
    }
    let elapsed = started.elapsed();
    println!("criterion 3: 10,000 randomized plans checked in {elapsed:.2?}");
    assert!(elapsed.as_secs() < 30, "scheduling property budget exceeded: {elapsed:?}");
}

// ---------------------------------------------------------------------------
// Criterion 4: cancellation invariant on randomized workloads - streaming
// with cancellation never has two in-flight requests for one developer, and
// the no-streaming client never cancels anything.

#[test]
fn criterion_4_cancellation_invariant() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let profiles = ProfilesFile::builtin();
    for case in 0..100 {
        let k = rng.random_range(1..=3usize);
        let window_ms = 120_000u64;
        let sessions: Vec<DeveloperSession> = (0..k)
            .map(|i| {
                let duration = rng.random_range(60_000..=110_000u64);
                let n_req = rng.random_range(2..=15usize);
                let mut times: Vec<u64> =
                    (0..n_req).map(|_| rng.random_range(0..duration)).collect();
                times.sort_unstable();
                times.dedup();
                session(i, duration, &times)
            })
            .collect();
        let developers = [1u32, 2, 5][rng.random_range(0..3)];
        let seed = rng.random::<u64>();

        for streaming in [StreamingMode::StreamWithCancel, StreamingMode::NoStream] {
            let config = SimulationConfig { developers, streaming, ..Default::default() };
            let plan = build_plan(&sessions, &config, seed, window_ms).unwrap();
            let settings = ServerSettings::resolve(&profiles, &config, seed).unwrap();
            let rounds = execute_plan(&plan, &settings, &EngineOptions::default()).unwrap();
            for round in &rounds {
                match streaming {
                    StreamingMode::StreamWithCancel => {
                        let overlaps = check_single_flight(&round.log.records);
                        assert!(
                            overlaps.is_empty(),
                            "case {case}: overlapping in-flight requests: {overlaps:?}"
                        );
                    }
                    StreamingMode::NoStream => {
                        let canceled = round
                            .log
                            .records
                            .iter()
                            .filter(|r| r.status == RequestStatus::Canceled)
                            .count();
                        assert_eq!(canceled, 0, "case {case}: cancel without streaming");
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 5: admission control - queued plus running never exceeds the
// configured cap under randomized command sequences, and an overloaded
// server answers with the exact 429 payload over HTTP.

#[test]
fn criterion_5_admission_control() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let profiles = ProfilesFile::builtin();
    for _ in 0..200 {
        let cap = rng.random_range(1..=4u32);
        let config = SimulationConfig {
            max_concurrent_requests: cap,
            ..SimulationConfig::default()
        };
        let mut sim = BatchSim::new(ServerSettings::resolve(&profiles, &config, 1).unwrap());
        let mut t = 0.0f64;
        let mut next_id = 0u64;
        let mut live: Vec<u64> = Vec::new();
        for _ in 0..60 {
            match rng.random_range(0..10) {
                0..=5 => {
                    let before = sim.admitted_count();
                    let admission = sim.submit(t, next_id, "fn x() {", 8);
                    match admission {
                        Admission::Accepted => {
                            assert!(before < cap, "admitted past the cap");
                            live.push(next_id);
                        }
                        Admission::Rejected => {
                            assert_eq!(before, cap, "rejected below the cap")
                        }
                    }
                    next_id += 1;
                }
                6..=7 if !live.is_empty() => {
                    let victim = live.swap_remove(rng.random_range(0..live.len()));
                    sim.cancel(victim);
                }
                _ => {
                    if let Some(boundary) = sim.next_boundary() {
                        t = boundary;
                        if let Some(outcome) = sim.advance() {
                            for done in &outcome.completions {
                                live.retain(|id| id != &done.id);
                            }
                        }
                    } else {
                        t += 50.0;
                    }
                }
            }
            assert!(
                sim.admitted_count() <= cap,
                "admitted {} with cap {cap}",
                sim.admitted_count()
            );
        }
    }

    // Protocol-exact overload answer: fill the single admission slot with a
    // streaming request, then watch the next one bounce.
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    runtime.block_on(async {
        let config = SimulationConfig {
            max_concurrent_requests: 1,
            ..SimulationConfig::default()
        };
        let settings = ServerSettings::resolve(&profiles, &config, 2).unwrap();
        let server =
            tracewatt::net::MockServer::start(settings, "127.0.0.1:0".parse().unwrap())
                .await
                .unwrap();
        let client = reqwest::Client::new();
        let url = format!("{}/v1/generate", server.base_url());
        let holder = client
            .post(&url)
            .json(&serde_json::json!({"prompt": "fn a() {", "max_new_tokens": 50, "stream": true}))
            .send()
            .await
            .unwrap();
        assert_eq!(holder.status(), 200);

        let bounced = client
            .post(&url)
            .json(&serde_json::json!({"prompt": "fn b() {", "max_new_tokens": 50, "stream": false}))
            .send()
            .await
            .unwrap();
        assert_eq!(bounced.status(), reqwest::StatusCode::TOO_MANY_REQUESTS);
        assert_eq!(bounced.text().await.unwrap(), r#"{"error":"overloaded"}"#);
        drop(holder);
        server.shutdown().await.unwrap();
    });
}

// ---------------------------------------------------------------------------
// Criterion 6: efficiency-curve reproduction on the calibrated simulator -
// the per-developer energy share falls strictly as developers are added
// until the server saturates, and saturation first appears through the
// 20-second latency rule rather than through rejections. Budget: 2 min.

#[test]
fn criterion_6_efficiency_curve() {
    let started = std::time::Instant::now();
    let synth = SyntheticConfig {
        developers: 25,
        session_minutes: 110.0,
        requests_per_minute: (8.3, 8.3),
        ..SyntheticConfig::default()
    };
    let events = generate(&synth, 0);
    let mut buf = Vec::new();
    serialize_events(&events, &mut buf).unwrap();
    let sessions = parse_dataset(buf.as_slice()).unwrap().sessions;

    let profiles = ProfilesFile::builtin();
    let window_ms = 600_000u64;
    let mut curve = Vec::new();
    for developers in [1u32, 2, 5, 10, 20, 50, 75, 100] {
        let config = SimulationConfig { developers, ..SimulationConfig::default() };
        let plan = build_plan(&sessions, &config, 42, window_ms).unwrap();
        let settings = ServerSettings::resolve(&profiles, &config, 42).unwrap();
        let rounds = execute_plan(&plan, &settings, &EngineOptions::default()).unwrap();
        let m = analyze_rounds(
            &rounds,
            &plan,
            SaturationThresholds::default(),
            DEFAULT_CARBON_INTENSITY,
        )
        .unwrap();
        println!(
            "criterion 6: {developers:>3} developers: {:>7.2} Wh/dev/h, latency {:>7.2} s, \
             rejected {:>5.1}%, saturated {}",
            m.energy_per_hour_per_developer_wh,
            m.mean_latency_s,
            m.rejected_fraction * 100.0,
            m.saturated
        );
        curve.push(m);
    }

    let flip = curve
        .iter()
        .position(|m| m.saturated)
        .expect("the largest team must saturate the server");
    assert!(flip > 0, "a single developer must not saturate the server");
    assert!(
        curve[flip..].iter().all(|m| m.saturated),
        "saturation must persist as developers increase"
    );
    assert!(
        curve[flip].mean_latency_s > SaturationThresholds::default().mean_latency_s,
        "saturation must first appear through the latency rule"
    );
    assert!(
        curve[flip].rejected_fraction <= SaturationThresholds::default().rejected_fraction,
        "the first saturated point must not be a rejection artifact"
    );
    for pair in curve[..=flip].windows(2) {
        assert!(
            pair[1].energy_per_hour_per_developer_wh
                < pair[0].energy_per_hour_per_developer_wh,
            "energy per developer must fall strictly until saturation: {} -> {}",
            pair[0].energy_per_hour_per_developer_wh,
            pair[1].energy_per_hour_per_developer_wh
        );
    }
    let elapsed = started.elapsed();
    println!("criterion 6: curve over 8 team sizes in {elapsed:.2?}");
    assert!(elapsed.as_secs() < 120, "efficiency-curve budget exceeded: {elapsed:?}");
}

// ---------------------------------------------------------------------------
// Criterion 7: numeric kernels - energy integration is exact on constant
// and piecewise-constant analytic cases, and the word edit distance matches
// a brute-force dynamic program on 10,000 random pairs.

#[test]
fn criterion_7_integration_and_distance() {
    // Constant 250 W for one hour is 250 Wh, to 1e-9 relative.
    let samples: Vec<PowerSample> = (0..36_000)
        .map(|i| PowerSample {
            timestamp_ms: i as f64 * 100.0,
            watts: 250.0,
            source: SampleSource::Simulated,
        })
        .collect();
    let report = integrate(&samples, (0.0, 3_600_000.0), 1).unwrap();
    assert!((report.energy_wh - 250.0).abs() / 250.0 < 1e-9);
    assert!((report.mean_power_watts - 250.0).abs() / 250.0 < 1e-9);

    // Two sources, one stepping mid-window: 100 Wh + (0 + 50)/2 Wh = 125 Wh.
    let mut samples = vec![
        PowerSample { timestamp_ms: 0.0, watts: 100.0, source: SampleSource::CpuEnergyCounter },
        PowerSample {
            timestamp_ms: 1_800_000.0,
            watts: 100.0,
            source: SampleSource::CpuEnergyCounter,
        },
        PowerSample { timestamp_ms: 0.0, watts: 0.0, source: SampleSource::GpuManagementPoll },
        PowerSample {
            timestamp_ms: 1_800_000.0,
            watts: 50.0,
            source: SampleSource::GpuManagementPoll,
        },
    ];
    samples.sort_by(|a, b| a.timestamp_ms.total_cmp(&b.timestamp_ms));
    let report = integrate(&samples, (0.0, 3_600_000.0), 2).unwrap();
    assert!((report.energy_wh - 125.0).abs() < 1e-9, "got {}", report.energy_wh);
    assert!((report.per_developer_energy_wh - 62.5).abs() < 1e-9);

    // Edit distance against an independent dynamic program (insert/delete
    // cost 1, substitution cost 2).
    fn oracle(a: &[&str], b: &[&str]) -> usize {
        let (n, m) = (a.len(), b.len());
        let mut dp = vec![vec![0usize; m + 1]; n + 1];
        for (i, row) in dp.iter_mut().enumerate() {
            row[0] = i;
        }
        for (j, cell) in dp[0].iter_mut().enumerate() {
            *cell = j;
        }
        for i in 1..=n {
            for j in 1..=m {
                let sub = dp[i - 1][j - 1] + if a[i - 1] == b[j - 1] { 0 } else { 2 };
                dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
            }
        }
        dp[n][m]
    }

    let words = ["a", "b", "c", "ab", "ba"];
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    for _ in 0..10_000 {
        let draw = |rng: &mut ChaCha20Rng| -> String {
            let len = rng.random_range(0..=8usize);
            (0..len)
                .map(|_| words[rng.random_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        assert_eq!(
            word_edit_distance(&a, &b),
            oracle(&tokenize(&a), &tokenize(&b)),
            "distance mismatch for {a:?} vs {b:?}"
        );
    }
}

// ---------------------------------------------------------------------------
// Criterion 8: impact-ratio recovery - planted multiplicative factor
// effects come back exactly, and no ratio mixes two factor changes (a
// cross-factor pair would surface as a product of two planted effects).

#[test]
fn criterion_8_impact_ratio_recovery() {
    // Planted effects on energy: developers 5 -> 10 doubles it, streaming
    // halves it, EETQ takes 20% off. Latency gets its own set.
    let mut grid = Vec::new();
    for developers in [5u32, 10] {
        for streaming in [StreamingMode::NoStream, StreamingMode::StreamWithCancel] {
            for quantization in ["none", "eetq"] {
                let config = SimulationConfig {
                    developers,
                    streaming,
                    quantization_tag: quantization.to_string(),
                    ..SimulationConfig::default()
                };
                let mut energy = 100.0;
                let mut latency = 10.0;
                if developers == 10 {
                    energy *= 2.0;
                    latency *= 1.5;
                }
                if streaming == StreamingMode::StreamWithCancel {
                    energy *= 0.5;
                    latency *= 0.25;
                }
                if quantization == "eetq" {
                    energy *= 0.8;
                    latency *= 1.1;
                }
                grid.push(SimulationMetrics {
                    config,
                    mean_latency_s: latency,
                    p95_latency_s: latency * 1.5,
                    rejected_fraction: 0.0,
                    completed: 100,
                    fired: 100,
                    mean_power_watts: energy,
                    energy_wh: energy,
                    energy_per_hour_per_developer_wh: energy / developers as f64,
                    energy_per_1000_requests_wh: energy * 10.0,
                    co2_per_hour_per_developer_g: 0.0,
                    saturated: false,
                    rounds: 1,
                });
            }
        }
    }

    let ratios = impact_ratios(&grid);
    // 3 varied factors x 2 directions x 2 metrics.
    assert_eq!(ratios.len(), 12);
    let expect = |factor: &str, from: &str, to: &str, metric: ImpactMetric, value: f64| {
        let r = ratios
            .iter()
            .find(|r| {
                r.factor == factor
                    && r.from_option == from
                    && r.to_option == to
                    && r.metric == metric
            })
            .unwrap_or_else(|| panic!("missing ratio {factor} {from}->{to} {metric:?}"));
        // Four single-factor pairs per group; a pair differing in two
        // factors would contaminate the list with a product of effects.
        assert_eq!(r.ratios.len(), 4, "{factor} {from}->{to}");
        for ratio in &r.ratios {
            assert!(
                (ratio - value).abs() < 1e-12,
                "{factor} {from}->{to} {metric:?}: planted {value}, found {ratio}"
            );
        }
        assert!((r.geometric_mean - value).abs() < 1e-12);
    };

    expect("developers", "5", "10", ImpactMetric::Energy, 2.0);
    expect("developers", "10", "5", ImpactMetric::Energy, 0.5);
    expect("developers", "5", "10", ImpactMetric::MeanLatency, 1.5);
    expect("streaming", "NoStream", "StreamWithCancel", ImpactMetric::Energy, 0.5);
    expect("streaming", "StreamWithCancel", "NoStream", ImpactMetric::Energy, 2.0);
    expect("streaming", "NoStream", "StreamWithCancel", ImpactMetric::MeanLatency, 0.25);
    expect("quantization", "none", "eetq", ImpactMetric::Energy, 0.8);
    expect("quantization", "eetq", "none", ImpactMetric::Energy, 1.25);
    expect("quantization", "none", "eetq", ImpactMetric::MeanLatency, 1.1);
}

// ---------------------------------------------------------------------------
// Criterion 9: sweep resumability - after losing replicates mid-sweep
// (including a torn save that kept raw logs but no metrics), a resumed
// sweep executes exactly the missing work and converges bit-identically to
// an uninterrupted run; re-running a complete store executes nothing.

#[test]
fn criterion_9_sweep_resumability() {
    let synth = SyntheticConfig {
        developers: 6,
        session_minutes: 12.0,
        ..SyntheticConfig::default()
    };
    let events = generate(&synth, 21);
    let mut buf = Vec::new();
    serialize_events(&events, &mut buf).unwrap();
    let sessions = parse_dataset(buf.as_slice()).unwrap().sessions;

    let space = ConfigSpace {
        developers: vec![5, 10],
        streaming: vec![StreamingMode::NoStream, StreamingMode::StreamWithCancel],
        trigger: vec![TriggerMode::Automatic],
        model_profile: vec!["sc2-7b".to_string()],
        quantization: vec!["none".to_string()],
        max_concurrent_requests: vec![1000],
        gpu_count: vec![1],
    };
    let options = SweepOptions {
        base_seed: 3,
        window_ms: 240_000,
        parallel: 2,
        ..SweepOptions::default()
    };
    let total = 4 + 4 + 2 + 2; // replication over the developer axis

    let pristine = tempfile::tempdir().unwrap();
    let store = RunStore::open(pristine.path()).unwrap();
    let clean = run_sweep(&sessions, &space, &store, &options).unwrap();
    assert!(clean.failures.is_empty(), "sweep failures: {:?}", clean.failures);
    assert_eq!(clean.executed_replicates, total);
    let reference = serde_json::to_vec(&clean.outcomes).unwrap();

    // Second store: complete it, then lose one replicate entirely and tear
    // another (metrics gone, raw logs still present).
    let crashed = tempfile::tempdir().unwrap();
    let store = RunStore::open(crashed.path()).unwrap();
    run_sweep(&sessions, &space, &store, &options).unwrap();
    let victim = &clean.outcomes[0].config;
    std::fs::remove_dir_all(store.replicate_dir(victim, 1)).unwrap();
    std::fs::remove_file(store.replicate_dir(victim, 2).join("metrics.json")).unwrap();
    assert_eq!(store.completed_replicates(victim).len(), 2);

    let resumed = run_sweep(&sessions, &space, &store, &options).unwrap();
    assert!(resumed.failures.is_empty());
    assert_eq!(
        (resumed.executed_replicates, resumed.skipped_replicates),
        (2, total - 2),
        "resume must redo exactly the lost replicates"
    );
    assert_eq!(
        serde_json::to_vec(&resumed.outcomes).unwrap(),
        reference,
        "resumed results must be bit-identical to the uninterrupted sweep"
    );

    // A complete store is pure reuse.
    let rerun = run_sweep(&sessions, &space, &store, &options).unwrap();
    assert_eq!((rerun.executed_replicates, rerun.skipped_replicates), (0, total));
    assert_eq!(serde_json::to_vec(&rerun.outcomes).unwrap(), reference);
}
