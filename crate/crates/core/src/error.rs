use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unstable system: arrival rate {lambda} is not below service capacity {capacity}")]
    UnstableSystem { lambda: f64, capacity: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("container count would exceed the cap of {cap}")]
    CapExceeded { cap: u32 },

    #[error("deadline {deadline}s does not exceed the p99 service time {service_p99}s")]
    InfeasibleDeadline { deadline: f64, service_p99: f64 },

    #[error("invalid workload schedule: {0}")]
    InvalidSchedule(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("observation at {now}s precedes last observation at {last}s")]
    NonMonotonicTime { last: f64, now: f64 },

    #[error("cpu fraction {0} is outside (0, 1]")]
    InvalidFraction(f64),

    #[error("no node can host {vcpu} vCPU / {memory_mb} MB")]
    NoCapacity { vcpu: f64, memory_mb: u64 },

    #[error("config error in {field}: {message}")]
    Config { field: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
