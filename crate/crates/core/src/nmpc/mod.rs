//! Receding-horizon control with the recurrent model as prediction model.

mod controller;
mod ocp;
mod solver;

pub use controller::{mpc_step, MpcOutput, MpcState, Telemetry};
pub use ocp::{
    ocp_cost, ocp_gradient, predict, stiffness_residual, Dynamics, FrozenRnn, LinearStub,
    OcpContext, OcpSpec, PhysicalBounds, ReferenceWindow,
};
pub use solver::{ocp_solve, Solution, SolveReport};
