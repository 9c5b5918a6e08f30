use std::path::PathBuf;

/// Errors raised across the engine.
///
/// Variants are grouped by the subsystem that raises them; each carries
/// the offending name so diagnostics can point at the exact reference.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    // catalog
    #[error("duplicate name: {0}")]
    DuplicateName(String),
    #[error("path missing: {}", .0.display())]
    PathMissing(PathBuf),
    #[error("partition mismatch for table {table}: declared {declared}, found {found}")]
    PartitionMismatch {
        table: String,
        declared: usize,
        found: usize,
    },
    #[error("invalid definition: {0}")]
    InvalidDefinition(String),
    #[error("unknown table: {0}")]
    UnknownTable(String),
    #[error("unknown column: {0}")]
    UnknownColumn(String),
    #[error("ambiguous column: {0}")]
    AmbiguousColumn(String),
    #[error("unknown udf: {0}")]
    UnknownUdf(String),
    #[error("unknown value type: {0}")]
    UnknownValueType(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),

    // storage
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row in {} line {line}: {reason}", file.display())]
    MalformedRow {
        file: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("target directory not empty: {}", .0.display())]
    TargetNotEmpty(PathBuf),
    #[error("invalid blob reference: {0}")]
    InvalidBlobRef(String),

    // planner
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unsupported construct: {0}")]
    Unsupported(String),

    // broker
    #[error("unknown queue: {0}")]
    UnknownQueue(String),

    // cache
    #[error("duplicate cache key: {0}")]
    DuplicateKey(String),
    #[error("missing cache key: {0}")]
    MissingKey(String),
    #[error("cache capacity exceeded: {requested} bytes requested, {used} of {limit} used")]
    CapacityExceeded {
        requested: u64,
        used: u64,
        limit: u64,
    },
    #[error("malformed cache key: {0}")]
    MalformedCacheKey(String),

    // worker
    #[error("udf not registered: {0}")]
    UdfNotRegistered(String),
    #[error("missing key column: {0}")]
    MissingKeyColumn(String),
    #[error("unhashable join key type: {0}")]
    UnhashableKey(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    // coordinator
    #[error("query not finished: {0}")]
    NotFinished(String),
    #[error("query failed: {query_id}: {reason}")]
    QueryFailed { query_id: String, reason: String },
    #[error("unknown query: {0}")]
    UnknownQuery(String),
    #[error("query timed out: {0}")]
    Timeout(String),

    // metrics
    #[error("negative input: {0}")]
    NegativeInput(String),
    #[error("unschedulable: {0}")]
    Unschedulable(String),
    #[error("dependency cycle among tasks")]
    Cycle,

    #[error("config error: {0}")]
    Config(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
