use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;

/// Distribution of the dropped tail length `L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TailDistribution {
    /// Uniform over `0..=M-1`.
    Uniform,
    /// Always drop exactly `length` channels.
    PointMass { length: usize },
    /// Explicit probabilities for `L = 0, 1, ...`.
    Weights { probabilities: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaildropConfig {
    /// Bottleneck channel count `M`.
    pub channels: usize,
    pub distribution: TailDistribution,
}

impl TaildropConfig {
    pub fn uniform(channels: usize) -> Self {
        Self {
            channels,
            distribution: TailDistribution::Uniform,
        }
    }

    /// No taildrop: every evaluation keeps all channels.
    pub fn none(channels: usize) -> Self {
        Self {
            channels,
            distribution: TailDistribution::PointMass { length: 0 },
        }
    }

    /// Probabilities of `L = 0..M`, validated.
    pub fn probabilities(&self) -> Result<Vec<f64>, TrainError> {
        let m = self.channels;
        if m == 0 {
            return Err(TrainError::Config(
                "bottleneck needs at least one channel".into(),
            ));
        }
        let probs = match &self.distribution {
            TailDistribution::Uniform => vec![1.0 / m as f64; m],
            TailDistribution::PointMass { length } => {
                if *length >= m {
                    return Err(TrainError::Config(format!(
                        "tail length {length} leaves no channel of {m}"
                    )));
                }
                let mut p = vec![0.0; m];
                p[*length] = 1.0;
                p
            }
            TailDistribution::Weights { probabilities } => {
                if probabilities.len() > m {
                    return Err(TrainError::Config(format!(
                        "{} tail probabilities for {m} channels",
                        probabilities.len()
                    )));
                }
                if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(TrainError::Config(
                        "tail probabilities must be in [0, 1]".into(),
                    ));
                }
                let mut p = probabilities.clone();
                p.resize(m, 0.0);
                p
            }
        };
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(TrainError::Config(format!(
                "tail probabilities sum to {total}, not 1"
            )));
        }
        Ok(probs)
    }
}

/// Draws a tail length `L` from the configured distribution.
pub fn sample_tail_length(probabilities: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (l, &p) in probabilities.iter().enumerate() {
        if p > 0.0 {
            last = l;
        }
        acc += p;
        if u < acc {
            return l;
        }
    }
    last
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Distill,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Distill => "distill",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Cap on mini-batches per epoch; `None` uses the whole training split.
    #[serde(default)]
    pub batches_per_epoch: Option<usize>,
}

impl StageConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Widths of the desk-scale convolutional autoencoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureConfig {
    pub encoder_width: usize,
    pub decoder_widths: [usize; 4],
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            encoder_width: 8,
            decoder_widths: [8, 8, 8, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub target_accuracy: f64,
    pub widths: [usize; 2],
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.003,
            batch_size: 32,
            max_epochs: 60,
            target_accuracy: 0.99,
            widths: [8, 16],
        }
    }
}

/// Declarative training schedule, loadable from TOML.
///
/// ```toml
/// seed = 7
///
/// [taildrop]
/// channels = 8
/// distribution = { type = "uniform" }
///
/// [pretrain]
/// learning_rate = 0.001
/// batch_size = 16
/// epochs = 10
///
/// [distill]
/// learning_rate = 0.001
/// batch_size = 16
/// epochs = 10
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub taildrop: TaildropConfig,
    pub pretrain: StageConfig,
    pub distill: StageConfig,
    #[serde(default)]
    pub architecture: ArchitectureConfig,
    #[serde(default)]
    pub teacher: TeacherConfig,
}

impl TrainConfig {
    /// Desk-scale defaults tuned for the synthetic shape dataset.
    pub fn desk_scale() -> Self {
        Self {
            seed: 7,
            taildrop: TaildropConfig::uniform(8),
            pretrain: StageConfig {
                learning_rate: 0.003,
                batch_size: 16,
                epochs: 8,
                batches_per_epoch: None,
            },
            distill: StageConfig {
                learning_rate: 0.002,
                batch_size: 16,
                epochs: 8,
                batches_per_epoch: None,
            },
            architecture: ArchitectureConfig::default(),
            teacher: TeacherConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.taildrop.probabilities()?;
        self.pretrain.validate()?;
        self.distill.validate()
    }
}
