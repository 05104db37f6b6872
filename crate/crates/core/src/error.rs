use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("need at least 2 subdivisions per side, got {0}")]
    TooFewSubdivisions(usize),
    #[error("invalid circle: centre {center:?}, radius {radius}")]
    InvalidCircle { center: (f64, f64), radius: f64 },
    #[error("cylinder {0} is not strictly inside the unit square")]
    CylinderNotInterior(usize),
    #[error("cylinders {0} and {1} overlap")]
    CylindersOverlap(usize, usize),
    #[error("degenerate intersection with cylinder {cylinder}: {detail}")]
    DegenerateIntersection { cylinder: usize, detail: String },
    #[error("grid cell {cell:?} meets more than one cylinder")]
    MultipleCylindersInCell { cell: (usize, usize) },
    #[error("cylinder lies strictly inside grid cell {cell:?}; element would not be simply connected")]
    NotSimplyConnected { cell: (usize, usize) },
    #[error("cut cell {cell:?} has area fraction {fraction:e}, below the admissible minimum")]
    TinyCutCell { cell: (usize, usize), fraction: f64 },
    #[error("boundary loop of element {element} is not closed")]
    OpenLoop { element: usize },
    #[error("face {0} is not owned by a valid set of elements")]
    DanglingFace(usize),
    #[error("face {face} has inconsistent orientation")]
    InconsistentOrientation { face: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("adaptive quadrature did not converge on {what} after {doublings} doublings (last relative change {change:e})")]
    NotConverged { what: String, doublings: usize, change: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("point ({x}, {y}) lies inside the cylinder (r = {r}, R = {radius})")]
    InsideCylinder { x: f64, y: f64, r: f64, radius: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("{what} space on {location} is empty after pruning")]
    Empty { what: String, location: String },
    #[error("non-finite Gram matrix for {what} space on {location}")]
    NonFinite { what: String, location: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("singular local system on element {element}: {detail}")]
    SingularLocal { element: usize, detail: String },
    #[error("global solve failed: {0}")]
    Global(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
