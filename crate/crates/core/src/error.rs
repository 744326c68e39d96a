use thiserror::Error;

use crate::wirtinger::CPoint;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone)]
pub enum Error {
    #[error("stencil at node {node} leaves the grid mask")]
    StencilOutOfDomain { node: usize },
    #[error("jet order {order} unsupported for {what}")]
    OrderUnsupported { order: usize, what: &'static str },
    #[error("point {0} outside the field's domain of validity")]
    OutOfDomain(CPoint),

    #[error("unknown family `{0}`")]
    UnknownFamily(String),
    #[error("bad parameter for family `{family}`: {reason}")]
    BadParameter { family: String, reason: String },
    #[error("family invariant `{condition}` violated at {point}")]
    InvariantViolated { condition: &'static str, point: CPoint },
    #[error("point {point} is not on the boundary (|phi| = {phi:e})")]
    NotOnBoundary { point: CPoint, phi: f64 },

    #[error("J(-rho) = {value:e} <= 0 at {point}")]
    NonpositiveJ { point: CPoint, value: f64 },
    #[error("Fefferman level {level} outside 1..={max}")]
    LevelOutOfRange { level: usize, max: usize },
    #[error("ray has {usable} usable samples spanning {decades:.2} decades")]
    DegenerateRay { usable: usize, decades: f64 },
    #[error("background blend not positive at {point} (min eigenvalue {min_eig:e})")]
    BlendFailed { point: CPoint, min_eig: f64 },

    #[error("slice grid has no interior nodes")]
    EmptyInterior,
    #[error("positivity of (w+u) lost after {halvings} step halvings at iteration {iteration}")]
    PositivityLost { iteration: usize, halvings: usize },
    #[error("Newton did not converge: residual trace {trace:?}")]
    NoConvergence { trace: Vec<f64> },
    #[error("metric singular at {} nodes (first {:?})", nodes.len(), nodes.first())]
    SingularMetric { nodes: Vec<usize> },
    #[error("linear solve failed after {iterations} iterations (relative residual {residual:e})")]
    LinearSolveFailed { iterations: usize, residual: f64 },

    #[error("slice block singular at {0}")]
    SingularSliceBlock(CPoint),
    #[error("slice solve failed at s = {s}: {source}")]
    SliceSolveFailed {
        s: num_complex::Complex64,
        source: Box<Error>,
    },
    #[error("slice grids of an s-stencil do not share a footprint")]
    StencilInconsistent,
    #[error("boundary point {point} is not strongly pseudoconvex (margin {margin:e})")]
    NotStronglyPseudoconvexPoint { point: CPoint, margin: f64 },

    #[error("flow left the domain at t = {t}, {point} (phi = {phi:e})")]
    LeftDomain { t: f64, point: CPoint, phi: f64 },
}
