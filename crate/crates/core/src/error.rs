use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("R0 infinite: {0}")]
    InfiniteR0(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("contact rate outside [0,1]: {0}")]
    ContactRate(String),
    #[error("no Malthusian parameter in bracket [{lo}, {hi}]")]
    NoMalthusian { lo: f64, hi: f64 },
    #[error("Malthusian residual {residual:e} exceeds tolerance {tol:e}")]
    MalthusianResidual { residual: f64, tol: f64 },
    #[error("marginal unavailable; use empirical")]
    MarginalUnavailable,
    #[error("Palm undefined at a = {0}")]
    PalmUndefined(f64),
    #[error("Palm rejection sampler exhausted {0} proposals")]
    PalmExhausted(usize),
    #[error("compartment graph is not acyclic")]
    CyclicCompartments,
    #[error("unknown compartment `{0}`")]
    UnknownCompartment(String),
    #[error("per-step solve did not converge at step {step}")]
    StepSolve { step: usize },
    #[error("final-size iteration did not converge in {0} steps")]
    FinalSize(usize),
    #[error("time {t} outside solution horizon [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("tree expansion exceeded the cap of {cap} nodes (depth {depth}, {explored} explored)")]
    DepthCap {
        cap: usize,
        depth: usize,
        explored: usize,
    },
    #[error("too few conditioned samples: {got} < {need}; increase the sample count")]
    TooFewConditioned { got: usize, need: usize },
    #[error("chain undefined at t = {0}: incidence below 1e-12")]
    ChainUndefined(f64),
    #[error("h-chain reached state x = {0} where c(x)S(x) = 0")]
    ZeroKillingState(f64),
    #[error("representation requires equilibrium g = Exp(alpha)")]
    NonEquilibriumG,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
