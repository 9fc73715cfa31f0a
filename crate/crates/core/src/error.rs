use thiserror::Error;

/// Errors raised by the engines. Every variant carries the name of the
/// module it originates from so that the runner can report it verbatim.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("[{module}] domain error: {detail}")]
    Domain { module: &'static str, detail: String },

    #[error("[map_core] root finder failed to converge for y = {y}")]
    Convergence { y: f64 },

    #[error("[map_core] empty cylinder: word {word} is incompatible with J_{h}")]
    EmptyCylinder { h: usize, word: String },

    #[error("[map_core] invalid hole: {0}")]
    InvalidHole(String),

    #[error("[survivor_exact] interval budget exceeded at t = {t}: {count} intervals (cap {cap})")]
    Budget { t: usize, count: usize, cap: usize },

    #[error("[density_transport] surviving mass underflow at t = {t} (log mass {log_mass:.3})")]
    Underflow { t: usize, log_mass: f64 },

    #[error("[{module}] extinction: no surviving particle at t = {t}")]
    Extinction { module: &'static str, t: usize },

    #[error("[induced_map] return time exceeded cap {cap} from x = {x}")]
    ReturnCap { x: f64, cap: u64 },

    #[error("[rate_analysis] degenerate fit window: {0}")]
    DegenerateWindow(String),

    #[error("[{module}] precondition violated: {detail}")]
    Precondition { module: &'static str, detail: String },

    #[error("[rate_analysis] no admissible word for t = {t}, n = {n}")]
    NoAdmissibleWord { t: usize, n: usize },

    #[error("[cesaro_general] unsupported system '{0}': escape-set preimages are unavailable")]
    UnsupportedSpec(String),

    #[error("[cli_runner] config error: {0}")]
    Config(String),

    #[error("[cli_runner] I/O error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { module, detail: detail.into() }
    }

    pub(crate) fn precondition(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Precondition { module, detail: detail.into() }
    }

    /// Name of the module the error originates from.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Domain { module, .. }
            | Error::Extinction { module, .. }
            | Error::Precondition { module, .. } => module,
            Error::Convergence { .. } | Error::EmptyCylinder { .. } | Error::InvalidHole(_) => {
                "map_core"
            }
            Error::Budget { .. } => "survivor_exact",
            Error::Underflow { .. } => "density_transport",
            Error::ReturnCap { .. } => "induced_map",
            Error::DegenerateWindow(_) | Error::NoAdmissibleWord { .. } => "rate_analysis",
            Error::UnsupportedSpec(_) => "cesaro_general",
            Error::Config(_) | Error::Io(_) => "cli_runner",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
