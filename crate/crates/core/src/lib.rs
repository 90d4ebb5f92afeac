//! Certified polynomial bounds on the desirability and value functions of
//! linearly-solvable stochastic optimal control problems.

pub mod poly;
pub mod model;
pub mod pde;
pub mod sdp;
pub mod sos;
pub mod oracle;
pub mod cli;
