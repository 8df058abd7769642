//! Minibatch training with Adam and per-epoch metric curves.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sixd_core::{symmetry_aware_error, Pose5D, SymmetrySpec};

use crate::adam::{adam_step, AdamConfig};
use crate::arch::{build_architecture, ArchitectureSpec, Network};
use crate::error::NetError;
use crate::loss::{pose_loss, quaternion_sq_error, LossWeights};
use crate::scalar::NetScalar;

/// One network input with its canonicalized target.
#[derive(Debug, Clone)]
pub struct TrainSample<T: NetScalar> {
    /// `[channels, height, width]` row-major input values.
    pub input: Vec<T>,
    pub target: Pose5D<T>,
    pub class_id: usize,
    pub occlusion_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingData<T: NetScalar> {
    pub train: Vec<TrainSample<T>>,
    pub val: Vec<TrainSample<T>>,
    /// Symmetry of each class, indexed by `class_id`; used for the
    /// orientation error only.
    pub symmetries: Vec<SymmetrySpec<T>>,
    /// Crop side length in pixels, to express translation errors in pixels.
    pub crop_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.batch_size == 0 {
            return Err(NetError::Hyperparameter("batch_size must be >= 1".into()));
        }
        self.adam.validate()?;
        LossWeights::new(self.loss.alpha)?;
        Ok(())
    }
}

/// Aggregate metrics over a set of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub trans_px: f64,
    pub rot_deg: f64,
    /// Mean of `|q_pred - q_target|^2`.
    pub quat_loss: f64,
    pub count: usize,
}

impl Metrics {
    fn empty() -> Self {
        Self {
            loss: f64::NAN,
            trans_px: f64::NAN,
            rot_deg: f64::NAN,
            quat_loss: f64::NAN,
            count: 0,
        }
    }
}

#[derive(Default)]
struct MetricSums {
    loss: f64,
    trans: f64,
    rot: f64,
    quat: f64,
    count: usize,
}

impl MetricSums {
    fn add(&mut self, e: &SampleError) {
        self.loss += e.loss;
        self.trans += e.trans_px;
        self.rot += e.rot_deg;
        self.quat += e.quat_loss;
        self.count += 1;
    }

    fn finish(&self) -> Metrics {
        if self.count == 0 {
            return Metrics::empty();
        }
        let n = self.count as f64;
        Metrics {
            loss: self.loss / n,
            trans_px: self.trans / n,
            rot_deg: self.rot / n,
            quat_loss: self.quat / n,
            count: self.count,
        }
    }
}

/// Errors of one prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleError {
    pub loss: f64,
    pub trans_px: f64,
    pub rot_deg: f64,
    pub quat_loss: f64,
}

pub fn sample_error<T: NetScalar>(
    pred: &Pose5D<T>,
    target: &Pose5D<T>,
    symmetry: &SymmetrySpec<T>,
    crop_size: usize,
    weights: LossWeights,
) -> SampleError {
    let du = (pred.u - target.u).to_f64_lossy();
    let dv = (pred.v - target.v).to_f64_lossy();
    SampleError {
        loss: pose_loss(pred, target, weights).0.to_f64_lossy(),
        trans_px: du.hypot(dv) * crop_size as f64 / 2.0,
        rot_deg: symmetry_aware_error(target.q, pred.q, symmetry).to_f64_lossy(),
        quat_loss: quaternion_sq_error(pred, target).to_f64_lossy(),
    }
}

fn symmetry_of<T: NetScalar>(data: &TrainingData<T>, class_id: usize) -> SymmetrySpec<T> {
    data.symmetries.get(class_id).copied().unwrap_or_else(SymmetrySpec::none)
}

/// Predictions and per-sample errors for `samples`.
pub fn evaluate_samples<T: NetScalar>(
    net: &Network<T>,
    samples: &[TrainSample<T>],
    data: &TrainingData<T>,
    weights: LossWeights,
) -> Result<Vec<(Pose5D<T>, SampleError)>, NetError> {
    samples
        .iter()
        .map(|s| {
            let pred = net.predict_for_class(&s.input, s.class_id)?;
            let e = sample_error(&pred, &s.target, &symmetry_of(data, s.class_id), data.crop_size, weights);
            Ok((pred, e))
        })
        .collect()
}

pub fn evaluate<T: NetScalar>(
    net: &Network<T>,
    samples: &[TrainSample<T>],
    data: &TrainingData<T>,
    weights: LossWeights,
) -> Result<Metrics, NetError> {
    let mut sums = MetricSums::default();
    for (_, e) in evaluate_samples(net, samples, data, weights)? {
        sums.add(&e);
    }
    Ok(sums.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training metrics are running means over the epoch's minibatches,
    /// measured before each update.
    pub train: Metrics,
    /// Validation metrics after the epoch's last update.
    pub val: Metrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurves {
    pub records: Vec<EpochRecord>,
}

impl TrainingCurves {
    pub const CSV_HEADER: &'static str =
        "epoch,train_loss,val_loss,train_trans_px,val_trans_px,train_rot_deg,val_rot_deg";

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn val_quat_loss(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val.quat_loss).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.epoch, r.train.loss, r.val.loss, r.train.trans_px, r.val.trans_px, r.train.rot_deg, r.val.rot_deg
            )?;
        }
        Ok(())
    }
}

/// Trains `net` in place. Deterministic for a given network, data and
/// config: the shuffle is seeded and batch gradients are summed in sample
/// order.
pub fn train<T: NetScalar>(
    net: &mut Network<T>,
    data: &TrainingData<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingCurves, NetError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut curves = TrainingCurves::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = MetricSums::default();
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = net.params.zeros_like();
            let scale = T::one() / T::from_usize_lossy(batch.len());
            for &i in batch {
                let s = &data.train[i];
                let out = net.loss_and_gradients(&s.input, &s.target, s.class_id, cfg.loss)?;
                acc.add_scaled(&out.gradients, scale);
                sums.add(&sample_error(
                    &out.prediction,
                    &s.target,
                    &symmetry_of(data, s.class_id),
                    data.crop_size,
                    cfg.loss,
                ));
            }
            adam_step(&mut net.params, &acc, &cfg.adam)?;
        }
        let record = EpochRecord {
            epoch,
            train: sums.finish(),
            val: evaluate(net, &data.val, data, cfg.loss)?,
        };
        on_epoch(&record);
        curves.records.push(record);
    }
    Ok(curves)
}

/// Builds a network for `spec` (seeded with `cfg.seed`) and trains it.
pub fn fit<T: NetScalar>(
    spec: &ArchitectureSpec,
    input_shape: [usize; 3],
    data: &TrainingData<T>,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Network<T>, TrainingCurves), NetError> {
    let mut net = build_architecture(spec, input_shape, cfg.seed)?;
    let curves = train(&mut net, data, cfg, on_epoch)?;
    Ok((net, curves))
}
