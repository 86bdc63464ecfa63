//! Preflight 4D planning for UAV fleets on a voxel grid.
//!
//! The single-agent planner searches (voxel, safe interval) states ordered by
//! soft-conflict count and then arrival time. The fleet solver plans
//! roundtrips in urgency order and repairs remaining conflicts by replanning
//! neighborhoods drawn from the collision graph.

pub mod bench;
pub mod dtapp;
pub mod geometry;
pub mod grid;
pub mod scenario;
pub mod sfi;
pub mod sfippst;
pub mod trajectory;
pub mod validate;

pub use dtapp::{solve, solve_pp_baseline, SolveResult, SolveStatus, SolverParams};
pub use grid::{GridError, GridMap, Voxel};
pub use scenario::{generate_scenario, load_scenario, save_scenario, Scenario, ScenarioError};
pub use sfi::{NfzRegion, NoFlyZone, SafeInterval, SfiError, SfiLayer, SfiTable};
pub use sfippst::{ConflictMode, Pruning, UavProfile};
pub use trajectory::{Trajectory, UavId, Waypoint};
pub use validate::{validate_solution, ValidationReport, Violation};
