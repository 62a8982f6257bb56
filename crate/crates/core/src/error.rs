use thiserror::Error;

/// Errors surfaced by the symbolic kernel and its front ends.
#[derive(Debug, Error)]
pub enum Error {
    #[error("jet order cap {cap} exceeded while differentiating {jet}")]
    CapExceeded { jet: String, cap: u32 },
    #[error("unbound symbol `{0}` in numeric evaluation")]
    UnboundSymbol(String),
    #[error("eps truncation orders differ: {0} vs {1}")]
    TruncationMismatch(usize, usize),
    #[error("substitution target `{0}` occurs in its own replacement")]
    CycleError(String),
    #[error("derivatives of `{0}` occur; direct substitution would be inconsistent, use substitute_dependent")]
    DependentDerivativesPresent(String),
    #[error("invalid substitution: {0}")]
    InvalidSubstitution(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("on-shell reduction failed: {0}")]
    ReductionFailure(String),
    #[error("on-shell reduction did not reach a fixpoint within {0} passes")]
    ReductionDiverged(usize),
    #[error("grade-0 action does not vanish on shell: the unperturbed part admits no such exact symmetry")]
    NotASymmetryCandidate,
    #[error("substitution is identically zero")]
    TrivialSubstitution,
    #[error("lift rejected: {0}")]
    LiftRejected(String),
    #[error("determining system is nonlinear in the unknown coefficients")]
    NonlinearInUnknowns,
    #[error("coefficient collection incomplete: {0}")]
    CollectionIncomplete(String),
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("internal inconsistency (kernel bug signal): {0}")]
    InternalInconsistency(String),
    #[error("unstable simulation: {0}")]
    Unstable(String),
    #[error("drift measurement inconclusive: {0}")]
    InconclusiveRefine(String),
    #[error("eps parameter not allowed here: {0}")]
    EpsNotAllowed(String),
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("parse error at {line}:{col}: {msg}")]
    Parse { line: u32, col: u32, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
