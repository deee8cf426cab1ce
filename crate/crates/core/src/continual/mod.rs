//! Two-task continual learning on the teacher-student model.
//!
//! A student with a shared first layer and one readout per task is trained
//! on task 1, then on task 2 with the task-1 readout frozen. Forgetting is
//! the increase of the task-1 error during task 2. Readouts are initialised
//! in polar form `(r·cos θ, r·sin θ)`, where `θ` sets the asymmetry between
//! the two hidden units and therefore how strongly the network specialises.

pub mod entropy;
pub mod ewc;
pub mod protocol;
pub mod sweep;

pub use entropy::{entropy_measures, EntropyReport};
pub use ewc::{
    ewc_step, fisher_diagonal, run_ewc_sweep, EwcConfig, EwcState, EwcSweep, FisherEstimate,
    FisherKind, FisherScale,
};
pub use protocol::{
    forgetting, node_norms, run_two_task, Backend, ContinualProtocol, PolarReadoutInit,
    ReadoutInit, TwoTaskResult,
};
pub use sweep::{
    sweep, AxisSpec, CellResult, EntropyPoint, ResultGrid, SeedPolicy, SweepOptions, SweepParam,
};
