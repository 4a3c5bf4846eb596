//! Iterative multi-objective optimisation with stochastic taildrop.
//!
//! Each optimizer step draws `M` tail lengths for one mini-batch, evaluates
//! the objective gradient for every resulting `K = M - L`, averages the `M`
//! gradients and applies a single Adam update.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{sample_tail_length, Stage, StageConfig, TaildropConfig, TrainConfig};
use super::loss::{distill_loss, reconstruction_loss};
use super::teacher::{gather, Teacher};
use super::{ArchitectureConfig, TrainError};
use crate::nn::{
    Activation, AdamState, AeGradients, AutoEncoder, Checkpoint, LayerSpec, NnError, Tensor,
};

const CLIP01: Activation = Activation::Clip { lo: 0.0, hi: 1.0 };

/// Two stride-2 convolutions down to `channels` clipped feature maps, five
/// layers back up to the input resolution.
pub fn desk_scale_autoencoder(
    image_shape: [usize; 3],
    channels: usize,
    arch: &ArchitectureConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AutoEncoder, NnError> {
    let [c, _, _] = image_shape;
    let e = arch.encoder_width;
    let [d0, d1, d2, d3] = arch.decoder_widths;
    AutoEncoder::new(
        &image_shape,
        &[
            LayerSpec::conv(c, e, 3, 2, Activation::Relu),
            LayerSpec::conv(e, channels, 3, 2, CLIP01),
        ],
        &[
            LayerSpec::conv(channels, d0, 3, 1, Activation::Relu),
            LayerSpec::conv(d0, d1, 3, 1, Activation::Relu),
            LayerSpec::upsample_conv(d1, d2, 3, Activation::Relu),
            LayerSpec::upsample_conv(d2, d3, 3, Activation::None),
            LayerSpec::conv(d3, c, 3, 1, CLIP01),
        ],
        rng,
    )
}

/// Bias-free linear autoencoder `R^dim -> R^channels -> R^dim`.
pub fn linear_autoencoder(
    dim: usize,
    channels: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AutoEncoder, NnError> {
    AutoEncoder::new(
        &[dim],
        &[LayerSpec::linear_no_bias(dim, channels)],
        &[LayerSpec::linear_no_bias(channels, dim)],
        rng,
    )
}

/// What a gradient evaluation optimises.
#[derive(Clone, Copy)]
pub enum Objective<'a> {
    Reconstruction,
    /// `soft_targets` holds the teacher's probabilities for every row of the
    /// training tensor, aligned by index.
    Distill {
        teacher: &'a Teacher,
        soft_targets: &'a Tensor,
    },
}

/// Loss statistics for one kept-channel count within an epoch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KBucket {
    pub keep: usize,
    pub evaluations: usize,
    pub mean_loss: f64,
    /// Teacher top-1 agreement on reconstructions (distillation only).
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub stage: Stage,
    pub mean_loss: f64,
    pub buckets: Vec<KBucket>,
}

/// One row of the per-epoch metrics CSV.
#[derive(Clone, Debug, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub stage: String,
    pub k: usize,
    pub evaluations: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

impl EpochStats {
    pub fn rows(&self) -> Vec<EpochRow> {
        self.buckets
            .iter()
            .map(|b| EpochRow {
                epoch: self.epoch,
                stage: self.stage.to_string(),
                k: b.keep,
                evaluations: b.evaluations,
                loss: b.mean_loss,
                accuracy: b.accuracy,
            })
            .collect()
    }
}

/// Writes epoch statistics as `epoch,stage,k,evaluations,loss,accuracy`.
pub fn write_epoch_csv<W: std::io::Write>(out: W, stats: &[EpochStats]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    for s in stats {
        for row in s.rows() {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Default)]
struct Accumulator {
    loss: f64,
    evaluations: usize,
    agreements: usize,
    items: usize,
}

/// Per-step result, mostly for tests and logging.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub tails: Vec<usize>,
    /// `(K, loss, agreements)` for each of the `M` draws, in draw order.
    pub evaluations: Vec<Evaluation>,
}

/// `(K, loss, agreements)` of one gradient evaluation.
pub type Evaluation = (usize, f64, usize);

pub struct TaildropTrainer {
    pub ae: AutoEncoder,
    adam: AdamState,
    probabilities: Vec<f64>,
    rng: ChaCha8Rng,
}

impl TaildropTrainer {
    pub fn new(
        ae: AutoEncoder,
        taildrop: &TaildropConfig,
        learning_rate: f64,
        seed: u64,
    ) -> Result<Self, TrainError> {
        if taildrop.channels != ae.channels() {
            return Err(TrainError::Config(format!(
                "taildrop configured for {} channels, model has {}",
                taildrop.channels,
                ae.channels()
            )));
        }
        let probabilities = taildrop.probabilities()?;
        let adam = AdamState::new(&ae.params(), learning_rate);
        Ok(Self {
            ae,
            adam,
            probabilities,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Starts a fresh optimizer (new moments) at `learning_rate`.
    pub fn reset_optimizer(&mut self, learning_rate: f64) {
        self.adam = AdamState::new(&self.ae.params(), learning_rate);
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.adam.steps()
    }

    pub fn channels(&self) -> usize {
        self.ae.channels()
    }

    /// Draws the `M` tail lengths for the next step.
    pub fn draw_tails(&mut self) -> Vec<usize> {
        (0..self.channels())
            .map(|_| sample_tail_length(&self.probabilities, &mut self.rng))
            .collect()
    }

    /// Gradient of the objective on `batch` with `keep` channels.
    pub fn gradient(
        &self,
        batch: &Tensor,
        rows: &[usize],
        objective: Objective<'_>,
        keep: usize,
    ) -> Result<(f64, usize, AeGradients), TrainError> {
        match objective {
            Objective::Reconstruction => {
                let (loss, grads) = reconstruction_loss(&self.ae, batch, keep)?;
                Ok((loss, 0, grads))
            }
            Objective::Distill {
                teacher,
                soft_targets,
            } => {
                let soft = gather(soft_targets, rows);
                let out = distill_loss(&self.ae, teacher, batch, &soft, keep)?;
                Ok((out.loss, out.agreements, out.grads))
            }
        }
    }

    /// Mean of the per-draw gradients for the given tail lengths, summed in
    /// draw order. Repeated tail lengths reuse the identical gradient.
    pub fn averaged_gradient(
        &self,
        batch: &Tensor,
        rows: &[usize],
        objective: Objective<'_>,
        tails: &[usize],
    ) -> Result<(AeGradients, Vec<Evaluation>), TrainError> {
        let m = self.channels();
        let mut cache: BTreeMap<usize, (f64, usize, AeGradients)> = BTreeMap::new();
        let mut total: Option<AeGradients> = None;
        let mut evaluations = Vec::with_capacity(tails.len());
        for &tail in tails {
            let keep = m - tail;
            if let std::collections::btree_map::Entry::Vacant(slot) = cache.entry(keep) {
                slot.insert(self.gradient(batch, rows, objective, keep)?);
            }
            let (loss, agree, grads) = &cache[&keep];
            evaluations.push((keep, *loss, *agree));
            match &mut total {
                None => total = Some(grads.clone()),
                Some(t) => t.add_assign(grads),
            }
        }
        let mut total = total.ok_or_else(|| TrainError::Config("no tail draws".into()))?;
        total.scale(1.0 / tails.len() as f64);
        Ok((total, evaluations))
    }

    /// One optimizer step on a mini-batch.
    pub fn step(
        &mut self,
        batch: &Tensor,
        rows: &[usize],
        objective: Objective<'_>,
    ) -> Result<StepOutcome, TrainError> {
        let tails = self.draw_tails();
        let (grads, evaluations) = self.averaged_gradient(batch, rows, objective, &tails)?;
        self.apply(&grads)?;
        Ok(StepOutcome { tails, evaluations })
    }

    pub fn apply(&mut self, grads: &AeGradients) -> Result<(), TrainError> {
        let flat = grads.flat();
        self.adam.step(self.ae.params_mut(), &flat)?;
        Ok(())
    }

    /// One pass over `data` (a `[N, ...]` tensor) in shuffled mini-batches.
    pub fn train_epoch(
        &mut self,
        data: &Tensor,
        stage_config: &StageConfig,
        objective: Objective<'_>,
        stage: Stage,
        epoch: usize,
    ) -> Result<EpochStats, TrainError> {
        let n = data.batch();
        if n == 0 {
            return Err(TrainError::Config("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut buckets: BTreeMap<usize, Accumulator> = BTreeMap::new();
        let max_batches = stage_config.batches_per_epoch.unwrap_or(usize::MAX);
        for rows in order.chunks(stage_config.batch_size).take(max_batches) {
            let batch = gather(data, rows);
            let outcome = self.step(&batch, rows, objective)?;
            for (keep, loss, agree) in outcome.evaluations {
                let acc = buckets.entry(keep).or_default();
                acc.loss += loss;
                acc.evaluations += 1;
                acc.agreements += agree;
                acc.items += rows.len();
            }
        }
        let distill = matches!(objective, Objective::Distill { .. });
        let buckets: Vec<KBucket> = buckets
            .into_iter()
            .map(|(keep, a)| KBucket {
                keep,
                evaluations: a.evaluations,
                mean_loss: a.loss / a.evaluations as f64,
                accuracy: distill.then(|| a.agreements as f64 / a.items as f64),
            })
            .collect();
        let evals: usize = buckets.iter().map(|b| b.evaluations).sum();
        let mean_loss = buckets
            .iter()
            .map(|b| b.mean_loss * b.evaluations as f64)
            .sum::<f64>()
            / evals.max(1) as f64;
        Ok(EpochStats {
            epoch,
            stage,
            mean_loss,
            buckets,
        })
    }

    /// Runs a whole stage with a fresh optimizer at the stage learning rate.
    pub fn run_stage(
        &mut self,
        data: &Tensor,
        stage_config: &StageConfig,
        objective: Objective<'_>,
        stage: Stage,
    ) -> Result<Vec<EpochStats>, TrainError> {
        stage_config.validate()?;
        self.reset_optimizer(stage_config.learning_rate);
        let mut stats = Vec::with_capacity(stage_config.epochs);
        for epoch in 1..=stage_config.epochs {
            let s = self.train_epoch(data, stage_config, objective, stage, epoch)?;
            log::info!("{stage} epoch {epoch}: mean loss {:.6}", s.mean_loss);
            stats.push(s);
        }
        Ok(stats)
    }
}

/// Trained autoencoder plus its training curve.
#[derive(Clone, Debug)]
pub struct TrainedAutoEncoder {
    pub ae: AutoEncoder,
    pub stats: Vec<EpochStats>,
}

impl TrainedAutoEncoder {
    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) {
        autoencoder_to_checkpoint(&self.ae, ckpt);
    }
}

pub fn autoencoder_to_checkpoint(ae: &AutoEncoder, ckpt: &mut Checkpoint) {
    ckpt.insert_sequential("encoder", &ae.encoder);
    ckpt.insert_sequential("decoder", &ae.decoder);
    ckpt.metadata.insert(
        "autoencoder.input_shape".into(),
        serde_json::json!(ae.input_shape()),
    );
}

pub fn autoencoder_from_checkpoint(ckpt: &Checkpoint) -> Result<AutoEncoder, NnError> {
    let shape: Vec<usize> = ckpt
        .metadata
        .get("autoencoder.input_shape")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| NnError::Checkpoint(e.to_string()))?
        .ok_or_else(|| NnError::Checkpoint("missing autoencoder.input_shape".into()))?;
    AutoEncoder::from_parts(
        &shape,
        ckpt.sequential("encoder")?,
        ckpt.sequential("decoder")?,
    )
}

/// Two-stage schedule: reconstruction pretraining, then distillation from
/// `teacher` when one is given.
pub fn train_autoencoder(
    images: &Tensor,
    config: &TrainConfig,
    teacher: Option<&Teacher>,
) -> Result<TrainedAutoEncoder, TrainError> {
    config.validate()?;
    train_with_taildrop(images, config, &config.taildrop, teacher)
}

/// Fixed-rate baseline: bottleneck of `fixed_channels`, no taildrop, same
/// two-stage schedule and seeds.
pub fn train_fixed_rate(
    images: &Tensor,
    config: &TrainConfig,
    fixed_channels: usize,
    teacher: Option<&Teacher>,
) -> Result<TrainedAutoEncoder, TrainError> {
    if fixed_channels == 0 || fixed_channels > config.taildrop.channels {
        return Err(TrainError::Config(format!(
            "fixed-rate width {fixed_channels} outside 1..={}",
            config.taildrop.channels
        )));
    }
    config.pretrain.validate()?;
    config.distill.validate()?;
    train_with_taildrop(
        images,
        config,
        &TaildropConfig::none(fixed_channels),
        teacher,
    )
}

fn train_with_taildrop(
    images: &Tensor,
    config: &TrainConfig,
    taildrop: &TaildropConfig,
    teacher: Option<&Teacher>,
) -> Result<TrainedAutoEncoder, TrainError> {
    if images.batch() == 0 {
        return Err(TrainError::Config("training set is empty".into()));
    }
    let shape = images.shape();
    let image_shape = [shape[1], shape[2], shape[3]];
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ae = desk_scale_autoencoder(
        image_shape,
        taildrop.channels,
        &config.architecture,
        &mut init_rng,
    )?;
    let mut trainer = TaildropTrainer::new(
        ae,
        taildrop,
        config.pretrain.learning_rate,
        config.seed.wrapping_add(1),
    )?;
    let mut stats = trainer.run_stage(
        images,
        &config.pretrain,
        Objective::Reconstruction,
        Stage::Pretrain,
    )?;
    if let Some(teacher) = teacher {
        let soft_targets = teacher.predict_proba(images)?;
        stats.extend(trainer.run_stage(
            images,
            &config.distill,
            Objective::Distill {
                teacher,
                soft_targets: &soft_targets,
            },
            Stage::Distill,
        )?);
    }
    Ok(TrainedAutoEncoder {
        ae: trainer.ae,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            seed: 3,
            taildrop: TaildropConfig::uniform(4),
            pretrain: StageConfig {
                learning_rate: 0.01,
                batch_size: 4,
                epochs: 2,
                batches_per_epoch: Some(3),
            },
            distill: StageConfig {
                learning_rate: 0.01,
                batch_size: 4,
                epochs: 1,
                batches_per_epoch: Some(2),
            },
            architecture: ArchitectureConfig {
                encoder_width: 2,
                decoder_widths: [2, 2, 2, 2],
            },
            teacher: Default::default(),
        }
    }

    fn images(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            &[n, 1, 8, 8],
            (0..n * 64).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn averaged_gradient_is_mean_of_recomputed_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = tiny_config();
        let ae = desk_scale_autoencoder([1, 8, 8], 4, &cfg.architecture, &mut rng).unwrap();
        let x = images(4, 2);
        let rows = [0, 1, 2, 3];
        let mut trainer = TaildropTrainer::new(ae, &cfg.taildrop, 0.01, 9).unwrap();
        let mut reference =
            TaildropTrainer::new(trainer.ae.clone(), &cfg.taildrop, 0.01, 9).unwrap();

        let outcome = trainer.step(&x, &rows, Objective::Reconstruction).unwrap();
        assert_eq!(outcome.tails.len(), 4);

        // recompute each draw independently, average in draw order, step
        let tails = reference.draw_tails();
        assert_eq!(tails, outcome.tails);
        let per_draw: Vec<AeGradients> = tails
            .iter()
            .map(|&l| {
                reference
                    .gradient(&x, &rows, Objective::Reconstruction, 4 - l)
                    .unwrap()
                    .2
            })
            .collect();
        let mut mean = per_draw[0].clone();
        for g in &per_draw[1..] {
            mean.add_assign(g);
        }
        mean.scale(1.0 / 4.0);
        let (averaged, _) = reference
            .averaged_gradient(&x, &rows, Objective::Reconstruction, &tails)
            .unwrap();
        for (a, b) in averaged.flat().iter().zip(mean.flat()) {
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
        reference.apply(&mean).unwrap();
        assert_eq!(reference.ae, trainer.ae, "bitwise-identical parameters");
        assert_eq!(trainer.optimizer_steps(), 1);
    }

    #[test]
    fn single_channel_degenerates_to_plain_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let arch = tiny_config().architecture;
        let ae = desk_scale_autoencoder([1, 8, 8], 1, &arch, &mut rng).unwrap();
        let x = images(4, 6);
        let rows = [0, 1, 2, 3];
        let mut trainer =
            TaildropTrainer::new(ae.clone(), &TaildropConfig::uniform(1), 0.01, 0).unwrap();
        let out = trainer.step(&x, &rows, Objective::Reconstruction).unwrap();
        assert_eq!(out.tails, vec![0]);
        // plain Adam on the full-bottleneck loss
        let (_, g) = reconstruction_loss(&ae, &x, 1).unwrap();
        let mut plain = ae.clone();
        let mut adam = AdamState::new(&plain.params(), 0.01);
        adam.step(plain.params_mut(), &g.flat()).unwrap();
        assert_eq!(plain, trainer.ae);
    }

    #[test]
    fn fixed_rate_matches_point_mass_taildrop() {
        let cfg = tiny_config();
        let x = images(12, 4);
        let fixed = train_fixed_rate(&x, &cfg, 4, None).unwrap();
        let mut point = cfg.clone();
        point.taildrop = TaildropConfig::none(4);
        let same = train_autoencoder(&x, &point, None).unwrap();
        assert_eq!(fixed.ae, same.ae);
        assert_eq!(fixed.stats, same.stats);
    }

    #[test]
    fn empty_dataset_is_a_config_error() {
        let cfg = tiny_config();
        let x = Tensor::zeros(&[0, 1, 8, 8]);
        assert!(matches!(
            train_autoencoder(&x, &cfg, None),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn epoch_stats_cover_all_draws_and_write_csv() {
        let cfg = tiny_config();
        let x = images(12, 8);
        let trained = train_autoencoder(&x, &cfg, None).unwrap();
        assert_eq!(trained.stats.len(), 2);
        for s in &trained.stats {
            let evals: usize = s.buckets.iter().map(|b| b.evaluations).sum();
            assert_eq!(evals, 3 * 4, "3 batches x M draws");
            assert!(s.buckets.iter().all(|b| (1..=4).contains(&b.keep)));
        }
        let mut buf = Vec::new();
        write_epoch_csv(&mut buf, &trained.stats).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,stage,k,evaluations,loss,accuracy\n"));
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ae = desk_scale_autoencoder([1, 8, 8], 4, &cfg.architecture, &mut rng).unwrap();
        let mut ckpt = Checkpoint::new();
        autoencoder_to_checkpoint(&ae, &mut ckpt);
        let back =
            autoencoder_from_checkpoint(&Checkpoint::from_json(&ckpt.to_json()).unwrap()).unwrap();
        assert_eq!(back, ae);
    }
}
