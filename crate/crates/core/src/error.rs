use thiserror::Error;

use crate::analytic::C64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FamilyError {
    #[error("a family needs at least two members, got {0}")]
    TooFewMembers(usize),
    #[error("at most {max} members are supported, got {0}", max = crate::analytic::MAX_MEMBERS)]
    TooManyMembers(usize),
    #[error("members {0} and {1} are the same polynomial")]
    DuplicateMembers(usize, usize),
    #[error("member {0} has a non-finite coefficient")]
    NonFinite(usize),
    #[error("window is empty or not finite")]
    EmptyWindow,
    #[error("base point lies outside the window")]
    BaseOutsideWindow,
    #[error("member index {index} out of range for a family of {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("grid needs at least 8 cells per side, got {nx}x{ny}")]
    GridTooCoarse { nx: usize, ny: usize },
    #[error("grid cells are not square: {dx} vs {dy}")]
    NonSquareCells { dx: f64, dy: f64 },
    #[error("point {0} lies outside the grid")]
    OutsideGrid(C64),
    #[error("cell ({ix}, {iy}) is a tie between several members")]
    AmbiguousCell { ix: usize, iy: usize },
    #[error("negative tie tolerance {0}")]
    NegativeTolerance(f64),
    #[error("grid does not match the labeling grid")]
    GridMismatch,
    #[error(transparent)]
    Family(#[from] FamilyError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PointError {
    #[error("members {0} and {1} take the same value at the point")]
    DuplicateValue(usize, usize),
    #[error("indices of a critical triple must be pairwise distinct")]
    RepeatedIndex,
    #[error("active set must not be empty")]
    EmptyActiveSet,
    #[error(transparent)]
    Family(#[from] FamilyError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurveError {
    #[error("gradient of the level function is {gradient:e} at {at}, below the floor {floor:e}")]
    SingularPoint { at: C64, gradient: f64, floor: f64 },
    #[error("corrector did not converge near {at}; step {step} is too large")]
    StepTooLarge { at: C64, step: f64 },
    #[error("seed {0} lies outside the window")]
    SeedOutsideWindow(C64),
    #[error("trace exceeded {0} vertices")]
    TooManyVertices(usize),
    #[error("path never escapes from member {from} into member {into}")]
    NoEscape { from: usize, into: usize },
    #[error("path must have at least two vertices")]
    DegeneratePath,
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("mollifier radius {radius} is below three cells ({min})")]
    UnderResolved { radius: f64, min: f64 },
    #[error("band {band} is narrower than the mollifier footprint {min}")]
    BandTooNarrow { band: f64, min: f64 },
    #[error("curve vertex {at} is {clearance} from the window edge, closer than {min}")]
    CurveNearEdge { at: C64, clearance: f64, min: f64 },
    #[error("evaluation point {at} is {distance:e} from the support, closer than {min:e}")]
    NearSingularity { at: C64, distance: f64, min: f64 },
    #[error("{points} test points cannot determine {unknowns} coefficients")]
    Underdetermined { points: usize, unknowns: usize },
    #[error("grids of the two samples differ")]
    GridMismatch,
    #[error("least-squares solve failed: {0}")]
    Solve(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReachError {
    #[error("target set is empty")]
    EmptyTarget,
    #[error("target cell {cell} at {at} is not in the open descent region")]
    TargetOutsideDescentRegion { cell: usize, at: C64 },
    #[error("path segment {segment} is not a descent direction for member {member}")]
    NotDescending { segment: usize, member: usize },
    #[error("path vertex {vertex} is closer to the window edge than the mollifier radius")]
    InsufficientClearance { vertex: usize },
    #[error("path must have at least two vertices")]
    DegeneratePath,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}
