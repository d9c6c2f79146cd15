use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid plant: {0}")]
    InvalidPlant(String),

    #[error("pair is not controllable: {found} independent columns, {needed} required")]
    NotControllable { found: usize, needed: usize },

    #[error("pair is not observable: {found} independent rows, {needed} required")]
    NotObservable { found: usize, needed: usize },

    #[error("similarity transform is ill-conditioned: cond(T) = {cond:.3e} exceeds {bound:.3e}")]
    IllConditioned { cond: f64, bound: f64 },

    #[error("derivative of order {requested} requested, signal is only smooth to order {available}")]
    OrderUnavailable { requested: usize, available: usize },

    #[error("bad schedule: {0}")]
    BadSchedule(String),

    #[error("gain is not persistently exciting over the horizon (eps_hat = {eps_hat:e})")]
    NotPe { eps_hat: f64 },

    #[error("block {block}: expression not divisible by g ({detail})")]
    NotDivisible { block: usize, detail: String },

    #[error("block {block}: value of downstream control for block {needed} was not supplied")]
    MissingDownstreamControl { block: usize, needed: usize },

    #[error("block {block}: {detail}")]
    UnsupportedCoupling { block: usize, detail: String },

    #[error("rate estimate is not positive (sigma = {sigma}); lambda inequalities are violated")]
    NonPositiveRate { sigma: f64 },

    #[error("non-finite state at t = {time}, component {component}")]
    NonFiniteState { time: f64, component: usize },

    #[error("decay fit needs at least 10 usable samples, got {usable}")]
    DegenerateFit { usable: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
