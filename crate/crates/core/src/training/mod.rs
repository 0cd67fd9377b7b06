//! Training objective, optimiser, checkpoints and gradient checks.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod objective;
pub mod optim;
pub mod trainer;

pub use gradcheck::{grad_check, toy_problem, GradCheckReport, GroupError, FD_STEP};
pub use loss::{loss_cls, loss_cont, loss_cont_graph, loss_text, LossBreakdown};
pub use objective::{objective, view_len, Objective, Sample};
pub use optim::{lr_at, Adam};
pub use trainer::{rank1, samples, split_samples, sweep_lambda_cont, train, write_log, EpochMetrics, SweepRow, TrainOutcome};
