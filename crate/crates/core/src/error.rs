use thiserror::Error;

use crate::linsolve::SolverReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh configuration: {0}")]
    MeshConfig(String),
    #[error("facet id {0} out of range")]
    InvalidFacet(usize),
    #[error("unsupported polynomial order k = {0} (need k >= 1)")]
    UnsupportedOrder(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("trace kind requested at a point off the element boundary")]
    TraceAtInteriorPoint,
    #[error("singular local block on element {element}: {what}")]
    SingularElementBlock { element: usize, what: String },
    #[error("projection order l = {l} exceeds k = {k}")]
    ProjectionOrder { l: usize, k: usize },
    #[error("adaptive flux mode requires an order field")]
    MissingOrderField,
    #[error("solver did not converge: {report}")]
    NotConverged { report: SolverReport, history: Vec<f64> },
    #[error("operator is not positive definite (p^T A p = {0:e})")]
    Indefinite(f64),
    #[error("right-hand side inconsistent with operator nullspace (|Z^T b| = {0:e})")]
    InconsistentRhs(f64),
    #[error("preconditioner built for (nu = {built_nu}, dt = {built_dt}) used with (nu = {nu}, dt = {dt})")]
    StalePreconditioner { built_nu: f64, built_dt: f64, nu: f64, dt: f64 },
    #[error("profile error: {0}")]
    Profile(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
