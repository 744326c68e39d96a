//! Kähler–Einstein metrics on families of bounded pseudoconvex domains:
//! Wirtinger jets, Fefferman approximate defining functions, a slice
//! Monge–Ampère solver, geodesic curvature of the family metric and
//! lift flows.

pub mod domains;
pub mod error;
pub mod family_geom;
pub mod fefferman;
pub mod ma_solver;
pub mod triviality;
pub mod util;
pub mod wirtinger;

pub use domains::{catalog_instantiate, FamilyDefinition, FamilyKind, FamilyParams, CATALOG};
pub use error::{Error, Result};
pub use family_geom::{FormField, HSource, NumericH};
pub use fefferman::{background_pair, BackgroundPair};
pub use ma_solver::{solve_slice, MASolution, SolverOptions};
pub use triviality::{integrate_flow, FlowOptions, FlowPath, LiftSource, NumericLift, OracleLift};
pub use wirtinger::{CPoint, ScalarField, WirtingerJet};
