//! Sample extraction, batching, and the optimization loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{mirror_subjoint_matrix, MirrorPermutation};
use crate::error::{Error, Result};
use crate::loss::total_loss;
use crate::network::{Mode, Model};
use crate::optim::{adam_step, clip_gradients_l2, AdamState};
use crate::scalar::Scalar;
use crate::skeleton::{bone_lengths, MotionSequence, SkeletonSpec};
use crate::tape::Graph;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub augment_mirror: bool,
    pub use_bone_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr0: 0.001,
            lr_decay: 0.98,
            clip_norm: 1.0,
            lambda: 0.1,
            epochs: 50,
            seed: 0,
            augment_mirror: true,
            use_bone_loss: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr0 >= 0.0) || !(self.lr_decay > 0.0) {
            return bad("lr0 must be non-negative and lr_decay positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        Ok(())
    }
}

/// Learning rate for epoch `e` (0-based): `lr0 · decay^e`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_decay.powi(i32::try_from(epoch).unwrap_or(i32::MAX))
}

/// One observed window with its future and ground-truth bone lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<S> {
    /// `N × T` observed sub-joint trajectories.
    pub input: Tensor<S>,
    /// `N × T_out` future sub-joint trajectories.
    pub target: Tensor<S>,
    /// Mean length of each bone over the observed frames.
    pub bone_lengths: Vec<S>,
    pub action: String,
}

impl<S: Scalar> Sample<S> {
    /// Splits a sequence of exactly `T + T_out` frames into observed and future parts.
    pub fn from_sequence(seq: &MotionSequence<S>, input_frames: usize, spec: &SkeletonSpec) -> Result<Self> {
        if input_frames == 0 || input_frames >= seq.frames() {
            return Err(Error::InvalidArgument(format!(
                "cannot split {} frames after {input_frames} observed",
                seq.frames()
            )));
        }
        let observed = seq.window(0, input_frames)?;
        let future = seq.window(input_frames, seq.frames() - input_frames)?;
        let mut lengths = vec![S::zero(); spec.bones.len()];
        for t in 0..input_frames {
            for (acc, l) in lengths.iter_mut().zip(bone_lengths(&observed.frame(t), spec)) {
                *acc = *acc + l;
            }
        }
        let denom = S::from_usize_lossy(input_frames);
        lengths.iter_mut().for_each(|l| *l = *l / denom);
        Ok(Self {
            input: observed.to_global_subjoint(),
            target: future.to_global_subjoint(),
            bone_lengths: lengths,
            action: seq.action.clone().unwrap_or_else(|| "unlabeled".to_string()),
        })
    }

    /// Mirrored copy; bone lengths follow their mirrored bones.
    pub fn mirrored(&self, spec: &SkeletonSpec) -> Result<Self> {
        let perm = MirrorPermutation::from_spec(spec);
        let lengths = spec
            .bones
            .iter()
            .map(|&bone| {
                let (a, b) = spec.mirrored_bone(bone);
                spec.bones
                    .iter()
                    .position(|&e| e == (a, b) || e == (b, a))
                    .map(|k| self.bone_lengths[k])
                    .ok_or_else(|| Error::Skeleton(format!("bone ({a}, {b}) has no mirror image")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input: mirror_subjoint_matrix(&self.input, &perm)?,
            target: mirror_subjoint_matrix(&self.target, &perm)?,
            bone_lengths: lengths,
            action: self.action.clone(),
        })
    }
}

/// Cuts every `T + T_out` window, starting each `stride` frames, from `seq`.
pub fn extract_windows<S: Scalar>(
    seq: &MotionSequence<S>,
    input_frames: usize,
    output_frames: usize,
    stride: usize,
    spec: &SkeletonSpec,
) -> Result<Vec<Sample<S>>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let len = input_frames + output_frames;
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= seq.frames() {
        out.push(Sample::from_sequence(&seq.window(start, len)?, input_frames, spec)?);
        start += stride;
    }
    Ok(out)
}

/// Originals followed by their mirror images.
pub fn with_mirrored<S: Scalar>(samples: &[Sample<S>], spec: &SkeletonSpec) -> Result<Vec<Sample<S>>> {
    let mut out = samples.to_vec();
    for s in samples {
        out.push(s.mirrored(spec)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S> {
    /// `B × N × T`
    pub inputs: Tensor<S>,
    /// `B × N × T_out`
    pub targets: Tensor<S>,
    /// `B × bones`
    pub bone_lengths: Tensor<S>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_samples(samples: &[&Sample<S>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let stack = |pick: &dyn Fn(&Sample<S>) -> &Tensor<S>| -> Result<Tensor<S>> {
            let shape = pick(first).shape().to_vec();
            let mut data = Vec::with_capacity(samples.len() * pick(first).len());
            for s in samples {
                let t = pick(s);
                if t.shape() != shape.as_slice() {
                    return Err(Error::shape("batch", format!("{:?} vs {shape:?}", t.shape())));
                }
                data.extend_from_slice(t.data());
            }
            Tensor::from_vec(&[samples.len(), shape[0], shape[1]], data)
        };
        let nb = first.bone_lengths.len();
        let lengths: Vec<S> = samples.iter().flat_map(|s| s.bone_lengths.iter().copied()).collect();
        Ok(Self {
            inputs: stack(&|s| &s.input)?,
            targets: stack(&|s| &s.target)?,
            bone_lengths: Tensor::from_vec(&[samples.len(), nb.max(1)], if nb == 0 {
                vec![S::zero(); samples.len()]
            } else {
                lengths
            })?,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Deterministically shuffled batches of an already assembled sample set.
pub fn shuffled_batches<S: Scalar>(samples: &[Sample<S>], batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Batch<S>>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut epoch_rng(seed, epoch));
    order
        .chunks(batch_size)
        .map(|idx| Batch::from_samples(&idx.iter().map(|&i| &samples[i]).collect::<Vec<_>>()))
        .collect()
}

/// Batches for one epoch, mirroring the dataset first when augmentation is on.
pub fn make_batches<S: Scalar>(
    dataset: &[Sample<S>],
    cfg: &TrainConfig,
    spec: &SkeletonSpec,
    epoch: usize,
) -> Result<Vec<Batch<S>>> {
    if cfg.augment_mirror {
        shuffled_batches(&with_mirrored(dataset, spec)?, cfg.batch_size, cfg.seed, epoch)
    } else {
        shuffled_batches(dataset, cfg.batch_size, cfg.seed, epoch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub total_loss: f64,
    pub mpjpe_term: f64,
    pub bone_term: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub samples_per_epoch: usize,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,total_loss,mpjpe_term,bone_term\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                r.epoch, r.lr, r.total_loss, r.mpjpe_term, r.bone_term
            ));
        }
        s
    }
}

/// Loss value and gradients (in [`Model::params`] order) for one batch, train mode.
pub struct StepOutcome<S> {
    pub total: S,
    pub mpjpe: S,
    pub bone: S,
    pub grads: Vec<Tensor<S>>,
    pub bn_stats: Vec<crate::tape::BatchStats<S>>,
}

pub fn loss_and_gradients<S: Scalar>(
    model: &Model<S>,
    batch: &Batch<S>,
    spec: &SkeletonSpec,
    cfg: &TrainConfig,
    graph: Graph<S>,
) -> Result<StepOutcome<S>> {
    let mut g = graph;
    let x = g.constant(batch.inputs.clone());
    let y = g.constant(batch.targets.clone());
    let pass = model.forward(&mut g, x, Mode::Train)?;
    let lengths = (cfg.use_bone_loss && !spec.bones.is_empty()).then_some(&batch.bone_lengths);
    let terms = total_loss(&mut g, pass.output, y, lengths, spec, S::from_f64_lossy(cfg.lambda))?;
    let grads = g.backward(terms.total)?;
    let value = |v| g.value(v).data()[0];
    Ok(StepOutcome {
        total: value(terms.total),
        mpjpe: value(terms.mpjpe),
        bone: terms.bone.map(value).unwrap_or_else(S::zero),
        grads: pass.params.iter().map(|&p| grads.get(&g, p)).collect(),
        bn_stats: pass.bn_stats,
    })
}

/// Trains `model` in place; `on_epoch` sees each finished epoch record.
pub fn train_with<S: Scalar>(
    model: &mut Model<S>,
    dataset: &[Sample<S>],
    spec: &SkeletonSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog> {
    cfg.validate()?;
    let samples = if cfg.augment_mirror {
        with_mirrored(dataset, spec)?
    } else {
        dataset.to_vec()
    };
    if samples.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let mut adam = AdamState::new(&model.params());
    let clip = S::from_f64_lossy(cfg.clip_norm);
    let mut log = TrainLog {
        samples_per_epoch: samples.len(),
        epochs: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(epoch, cfg);
        let batches = shuffled_batches(&samples, cfg.batch_size, cfg.seed, epoch)?;
        let (mut tot, mut mp, mut bo) = (0.0, 0.0, 0.0);
        for (step, batch) in batches.iter().enumerate() {
            let mut out = loss_and_gradients(model, batch, spec, cfg, Graph::new())?;
            if !out.total.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    step,
                    detail: format!("loss = {}", out.total),
                });
            }
            clip_gradients_l2(&mut out.grads, clip)?;
            if lr > 0.0 {
                let mut params = model.params_mut();
                adam_step(&mut params, &out.grads, &mut adam, S::from_f64_lossy(lr))?;
            }
            model.update_running_stats(&out.bn_stats);
            tot += out.total.as_f64();
            mp += out.mpjpe.as_f64();
            bo += out.bone.as_f64();
        }
        let k = batches.len() as f64;
        let rec = EpochRecord {
            epoch,
            lr,
            total_loss: tot / k,
            mpjpe_term: mp / k,
            bone_term: bo / k,
        };
        on_epoch(&rec);
        log.epochs.push(rec);
    }
    Ok(log)
}

pub fn train<S: Scalar>(
    model: &mut Model<S>,
    dataset: &[Sample<S>],
    spec: &SkeletonSpec,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    train_with(model, dataset, spec, cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy_samples(n: usize) -> Vec<Sample<f64>> {
        (0..n)
            .map(|i| Sample {
                input: Tensor::full(&[3, 2], i as f64),
                target: Tensor::full(&[3, 1], i as f64),
                bone_lengths: vec![],
                action: "a".into(),
            })
            .collect()
    }

    #[test]
    fn lr_schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at_epoch(0, &cfg), 0.001);
        assert!((lr_at_epoch(1, &cfg) - 0.00098).abs() < 1e-18);
        assert!((lr_at_epoch(10, &cfg) - 8.170_728_068_875_467e-4).abs() < 1e-15);
    }

    #[test]
    fn partition_keeps_last_partial_batch() {
        let samples = dummy_samples(70);
        let batches = shuffled_batches(&samples, 32, 1, 0).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![32, 32, 6]);
    }

    #[test]
    fn shuffle_is_seeded_per_epoch() {
        let samples = dummy_samples(40);
        let a = shuffled_batches(&samples, 8, 5, 3).unwrap();
        let b = shuffled_batches(&samples, 8, 5, 3).unwrap();
        let c = shuffled_batches(&samples, 8, 5, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(shuffled_batches::<f64>(&[], 4, 0, 0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lambda: -0.1,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let zero_lr = TrainConfig {
            lr0: 0.0,
            ..TrainConfig::default()
        };
        assert!(zero_lr.validate().is_ok());
    }
}
