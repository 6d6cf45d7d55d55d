//! Synthetic cluster-regression workloads and the training loop.

mod cluster;
mod train;

use serde::{Deserialize, Serialize};

use crate::linalg::Vector;

pub use cluster::{generate_cluster_task, ClusterTask, ClusterTaskConfig, Dataset, MapKind};
pub use train::{
    evaluate, layer_mean_gates, lr_at, total_steps, train, RoutingSnapshot, TrainConfig, TrainLog,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vector,
    pub target: Vector,
}

impl Sample {
    pub fn new(input: Vector, target: Vector) -> Self {
        Self { input, target }
    }
}
