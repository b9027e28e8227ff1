//! Sample-efficient design-space exploration for component networks.
//!
//! The engine runs in two steps. Step 1 evolves chromosome-encoded
//! component networks with NSGA-II against a multi-objective recipe and
//! stops early, yielding a coarse design. Step 2 fine-tunes that design
//! in a continuous value space: a ReLU MLP surrogate learns the
//! simulator response, the surrogate is compiled into a mixed-integer
//! feasibility program whose solutions propose the next simulation
//! point, and trials repeat with escalating budgets until the output
//! specification is met.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`netlist`]: genetic encoding of component networks and decoding
//!   into simulatable netlists
//! - [`simulator`]: AC small-signal circuit simulation (modified nodal
//!   analysis), metric extraction, and objective evaluation
//! - [`sampling`]: Sobol low-discrepancy sequences, boxes, and
//!   perturbation boxes
//! - [`moo`]: the NSGA-II evolutionary engine
//! - [`surrogate`]: ReLU MLP training with adaptive-moment descent
//! - [`milp`]: big-M encoding of the MLP and a branch-and-bound
//!   feasibility solver
//! - [`finetune`]: the trial loop orchestrating surrogate, solver, and
//!   simulator

pub mod finetune;
pub mod milp;
pub mod moo;
pub mod netlist;
pub mod sampling;
pub mod simulator;
pub mod surrogate;
