use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngState, Vector};

use super::Sample;

/// Ground-truth map of each cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// `W_c = I` for every cluster (needs `input_dim == output_dim`).
    #[default]
    Identity,
    /// `W_c` with i.i.d. `N(0, map_scale²/d)` entries, drawn per cluster.
    Random,
}

/// Mixture of `m` Gaussian clusters, each with its own linear target map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterTaskConfig {
    pub clusters: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub samples_per_cluster: usize,
    pub noise_std: f64,
    /// Standard deviation of the cluster-center coordinates.
    pub center_scale: f64,
    pub map: MapKind,
    pub map_scale: f64,
}

impl Default for ClusterTaskConfig {
    fn default() -> Self {
        Self {
            clusters: 1,
            input_dim: 8,
            output_dim: 8,
            samples_per_cluster: 320,
            noise_std: 0.0,
            center_scale: 1.0,
            map: MapKind::Identity,
            map_scale: 1.0,
        }
    }
}

impl ClusterTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::config("task.clusters", "must be positive"));
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::config("task.input_dim", "dimensions must be positive"));
        }
        if self.clusters * self.samples_per_cluster < 10 {
            return Err(Error::config(
                "task.samples_per_cluster",
                "need at least 10 samples in total for the 90/10 split",
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("task.noise_std", "must be finite and >= 0"));
        }
        if !(self.center_scale >= 0.0 && self.center_scale.is_finite()) {
            return Err(Error::config("task.center_scale", "must be finite and >= 0"));
        }
        if !self.map_scale.is_finite() {
            return Err(Error::config("task.map_scale", "must be finite"));
        }
        if self.map == MapKind::Identity && self.input_dim != self.output_dim {
            return Err(Error::config("task.map", "identity map needs input_dim == output_dim"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

/// A generated task: the split dataset plus its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTask {
    pub config: ClusterTaskConfig,
    pub centers: Vec<Vector>,
    pub maps: Vec<Matrix>,
    pub data: Dataset,
    pub train_labels: Vec<usize>,
    pub eval_labels: Vec<usize>,
}

/// Draws centers, then maps, then samples (cluster-major). Sample `i` of the
/// full sequence goes to eval when `i % 10 == 9`.
pub fn generate_cluster_task(cfg: &ClusterTaskConfig, rng: &RngState) -> Result<ClusterTask> {
    cfg.validate()?;
    let mut rng = rng.clone();
    let (d, k) = (cfg.input_dim, cfg.output_dim);
    let centers: Vec<Vector> = (0..cfg.clusters)
        .map(|_| rng.normal_vec(d, cfg.center_scale))
        .collect();
    let maps: Vec<Matrix> = (0..cfg.clusters)
        .map(|_| match cfg.map {
            MapKind::Identity => Matrix::identity(d),
            MapKind::Random => {
                let std = cfg.map_scale / (d as f64).sqrt();
                Matrix::from_fn(k, d, |_, _| std * rng.normal())
            }
        })
        .collect();
    let mut data = Dataset {
        train: Vec::new(),
        eval: Vec::new(),
    };
    let (mut train_labels, mut eval_labels) = (Vec::new(), Vec::new());
    let mut i = 0usize;
    for (c, (center, map)) in centers.iter().zip(&maps).enumerate() {
        for _ in 0..cfg.samples_per_cluster {
            let input: Vector = if cfg.noise_std > 0.0 {
                center
                    .iter()
                    .zip(rng.normal_vec(d, cfg.noise_std))
                    .map(|(a, b)| a + b)
                    .collect()
            } else {
                center.clone()
            };
            let target = map.matvec(&input)?;
            let sample = Sample { input, target };
            if i % 10 == 9 {
                data.eval.push(sample);
                eval_labels.push(c);
            } else {
                data.train.push(sample);
                train_labels.push(c);
            }
            i += 1;
        }
    }
    Ok(ClusterTask {
        config: cfg.clone(),
        centers,
        maps,
        data,
        train_labels,
        eval_labels,
    })
}
