use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("dataset contains no valid telemetry events")]
    EmptyDataset,

    #[error("session for developer `{0}` has zero duration")]
    ZeroDurationSession(String),

    #[error("suggestion is empty; retention is undefined")]
    EmptySuggestion,

    #[error("replay plan has an empty schedule; check trigger filtering and the dataset")]
    PlanEmpty,

    #[error("no power samples overlap the window [{start} ms, {end} ms]")]
    EmptyWindow { start: f64, end: f64 },

    #[error("overlap window is empty for round {round}; inspect the schedule: first-request offsets reach {start} ms but the earliest last-request offset is {end} ms")]
    EmptyOverlap { round: u32, start: u64, end: u64 },

    #[error("carbon intensity must be non-negative, got {0}")]
    NegativeIntensity(f64),

    #[error("energy must be non-negative, got {0}")]
    NegativeEnergy(f64),

    #[error("stability requires at least two replicates")]
    SingleReplicate,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("configuration axis `{0}` is empty")]
    EmptyAxis(String),

    #[error("unknown model profile `{0}`")]
    UnknownProfile(String),

    #[error("unknown quantization tag `{tag}` for profile `{profile}`")]
    UnknownQuantization { profile: String, tag: String },

    #[error("server startup failed: {0}")]
    ServerStartup(String),

    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),

    #[error("virtual-time execution requires a mock endpoint")]
    VirtualNeedsMock,

    #[error("store error: {0}")]
    Store(String),

    #[error("malformed file `{path}`: {detail}")]
    Format { path: String, detail: String },

    #[error("no completed runs in store")]
    NoCompletedRuns,
}

pub type Result<T> = std::result::Result<T, Error>;
