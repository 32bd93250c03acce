use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("no votes")]
    NoVotes,
    #[error("vote from {0} maps no relays")]
    EmptyVote(String),
    #[error("degenerate consensus")]
    DegenerateConsensus,
    #[error("unknown relay {0}")]
    UnknownRelay(String),
    #[error("unknown host {0}")]
    UnknownHost(String),
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("nothing to measure")]
    NothingToMeasure,
    #[error("capacity exceeded on host {host}: allocated {allocated} > {capacity}")]
    CapacityExceeded {
        host: String,
        allocated: f64,
        capacity: f64,
    },
    #[error("baseline bandwidth is zero")]
    NoBaseline,
    #[error("insufficient sequential measurements")]
    InsufficientSequential,
    #[error("no measurements in window")]
    EmptyWindow,
    #[error("cluster size {0} outside the fitted domain [1, 120]")]
    ClusterSizeDomain(i64),
    #[error("{name} = {value} outside [{min}, {max}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("underdetermined fit")]
    UnderdeterminedFit,
    #[error("invalid bandwidth '{0}'")]
    Bandwidth(String),
}
