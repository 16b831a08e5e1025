//! Point-supervised training of the full model.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::geometry::{Point3, ProjectionSet, Volume};
use crate::model::Model;
use crate::optim::{cosine_annealing_lr, AdamState};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Query points in world mm with optional ground-truth intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryBatch {
    pub points: Vec<Point3>,
    pub targets: Option<Vec<f64>>,
}

/// Uniform points in the volume's bounding box, targets by trilinear lookup.
pub fn sample_training_points<T: Scalar>(volume: &Volume<T>, n: usize, seed: u64) -> Result<QueryBatch> {
    if n == 0 {
        return Err(Error::invalid("sample_training_points", "need at least one point"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = volume.bounding_box();
    let points: Vec<Point3> = (0..n)
        .map(|_| std::array::from_fn(|a| lo[a] + (hi[a] - lo[a]) * rng.gen::<f64>()))
        .collect();
    let targets = points.iter().map(|&p| volume.trilinear(p)).collect();
    Ok(QueryBatch { points, targets: Some(targets) })
}

/// Projections of one object with its ground truth.
#[derive(Clone, Debug)]
pub struct TrainingCase<T> {
    pub projections: ProjectionSet<T>,
    pub volume: Volume<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Mean point MSE over a batch of cases, all on one tape.
pub fn batch_loss<'t, T: Scalar>(
    model: &Model<T>,
    b: &crate::params::Bound<'t, T>,
    tape: &'t Tape<T>,
    cases: &[(&TrainingCase<T>, QueryBatch)],
) -> Result<Var<'t, T>> {
    let mut total: Option<Var<'t, T>> = None;
    for (case, batch) in cases {
        let feats = model.network.encode_views(b, tape, &case.projections)?;
        let pred = model.network.predict(b, &feats, &case.projections.geometry, &batch.points)?;
        let targets = batch
            .targets
            .as_ref()
            .ok_or_else(|| Error::invalid("batch_loss", "query batch has no targets"))?;
        let target = Tensor::new(vec![targets.len()], targets.iter().map(|&t| T::lit(t)).collect())?;
        let l = pred.mse_loss(&target)?;
        total = Some(match total {
            Some(acc) => acc.add(l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::invalid("batch_loss", "empty batch"))?;
    total.scale(T::lit(1.0 / cases.len() as f64))
}

fn point_seed(seed: u64, epoch: usize, case: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_90_1475);
    rng.set_stream(((epoch as u64) << 32) | case as u64);
    rng.gen()
}

/// Runs `cfg.epochs` epochs of Adam with cosine decay over the total step count.
///
/// `on_step` sees every logged step together with the updated parameters and may stop
/// training by returning an error. A non-finite loss aborts before the update.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    cases: &[TrainingCase<T>],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossRecord, &ParamStore<T>) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(Error::invalid("train", "no training cases"));
    }
    let steps_per_epoch = cases.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * steps_per_epoch;
    let mut adam = AdamState::new(&model.params);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(total);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..cases.len()).collect();
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| Ok((&cases[i], sample_training_points(&cases[i].volume, cfg.points_per_volume, point_seed(cfg.seed, epoch, i))?)))
                .collect::<Result<Vec<_>>>()?;
            let lr = cosine_annealing_lr(step, total, cfg.lr)?;
            let tape = Tape::new();
            let b = model.params.bind(&tape);
            let loss = batch_loss(model, &b, &tape, &batch)?;
            let value = loss.value().data()[0].to_f64_lossy();
            if !value.is_finite() {
                return Err(Error::NonFinite { op: "train" });
            }
            let grads = tape.backward(loss)?;
            model.params.accumulate(&b, &grads);
            drop(grads);
            drop(b);
            adam.step(&mut model.params, lr)?;
            let rec = LossRecord { step, epoch, lr, loss: value };
            log.push(rec);
            on_step(&rec, &model.params)?;
            step += 1;
        }
    }
    Ok(log)
}

/// Loss-log CSV with header `step,epoch,lr,loss`.
pub fn loss_log_csv(log: &[LossRecord]) -> String {
    let mut s = String::from("step,epoch,lr,loss\n");
    for r in log {
        s.push_str(&format!("{},{},{:e},{:e}\n", r.step, r.epoch, r.lr, r.loss));
    }
    s
}
