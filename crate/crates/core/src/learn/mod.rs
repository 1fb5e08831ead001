//! A trainable per-pixel classifier around the pooling head: linear scores,
//! softmax cross-entropy, momentum SGD and a finite-difference checker.

mod gradcheck;
mod head;
mod optim;
mod train;

pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use head::{cross_entropy, LinearHead};
pub use optim::{sgd_step, Sgd};
pub use train::{
    forward, loss_and_grad, predict, prepare_example, train, Example, ExampleOptions,
    TrainConfig, ViewMode,
};
