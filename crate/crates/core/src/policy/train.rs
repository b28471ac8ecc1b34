use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tasks::is_success;
use super::{Demonstration, Policy};
use crate::autodiff::{Adam, ParamStore, Tape};
use crate::error::contract;
use crate::so3::{RigidTransform, Rotation};
use crate::{Error, Result};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "EQUACT_THREADS";

/// Worker threads from [`THREADS_ENV`], else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Order-preserving map over `items` on up to `threads` scoped threads.
pub fn parallel_map<I, O, F>(items: &[I], threads: usize, f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<O>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Random rotation about `center` by extrinsic x/y/z angles within `bounds_deg`.
pub fn augmentation<R: Rng + ?Sized>(bounds_deg: [f64; 3], center: crate::so3::Vec3, rng: &mut R) -> RigidTransform {
    let mut ang = [0.0; 3];
    for (a, b) in ang.iter_mut().zip(bounds_deg) {
        if b > 0.0 {
            *a = rng.gen_range(-b..=b) * PI / 180.0;
        }
    }
    RigidTransform::about_point(Rotation::from_euler_xyz(ang[0], ang[1], ang[2]), center)
}

/// Applies [`augmentation`] about the workspace center to the points, the
/// gripper pose and the expert action. The workspace frame and the
/// instruction stay fixed.
pub fn augment<R: Rng + ?Sized>(demo: &Demonstration, bounds_deg: [f64; 3], rng: &mut R) -> Demonstration {
    let g = augmentation(bounds_deg, demo.observation.workspace.center, rng);
    let mut out = demo.transformed(&g);
    out.observation.workspace = demo.observation.workspace;
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// Initial Adam learning rate.
    pub lr: f64,
    /// Learning rate reached at the last step by cosine decay.
    pub lr_final: f64,
    pub seed: u64,
    pub augment_deg: [f64; 3],
    /// Steps per entry of the reported loss curve.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 20_000, batch: 4, lr: 1e-4, lr_final: 1e-4, seed: 0, augment_deg: [5.0, 5.0, 45.0], log_every: 100 }
    }
}

impl TrainConfig {
    /// Schedule sized for the synthetic suite on a single core.
    pub fn toy() -> Self {
        Self { steps: 3000, lr: 3e-3, lr_final: 3e-5, ..Self::default() }
    }

    fn lr_at(&self, step: usize) -> f64 {
        let t = if self.steps > 1 { step as f64 / (self.steps - 1) as f64 } else { 1.0 };
        self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + (PI * t).cos())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub demos: usize,
    pub parameters: usize,
    /// Mean loss over each window of `log_every` steps.
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    /// Samples skipped because the expert fell outside the candidate lattice.
    pub skipped: usize,
}

/// Mean loss and mean parameter gradients over `demos`.
///
/// Data errors skip the sample; the count of skipped samples is returned.
pub fn batch_gradients(policy: &Policy, params: &ParamStore, demos: &[Demonstration], threads: usize) -> Result<(f64, BTreeMap<String, Vec<f64>>, usize)> {
    let results = parallel_map(demos, threads, |d| -> Result<Option<(f64, BTreeMap<String, Vec<f64>>)>> {
        let mut tape = Tape::<f64>::new();
        let terms = match policy.loss(&mut tape, params, d) {
            Ok(t) => t,
            Err(Error::Data(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let loss = tape.scalar(terms.total);
        if !loss.is_finite() {
            let part = |v| tape.scalar(v);
            return Err(Error::Training(format!(
                "non-finite loss on {:?}: translation {}, rotation {}, open {}",
                d.instruction,
                part(terms.translation),
                part(terms.rotation),
                part(terms.open)
            )));
        }
        let grads = tape.backward(terms.total)?;
        Ok(Some((loss, grads.param_grads(&tape, params))))
    });
    let mut total = 0.0;
    let mut sum: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut used = 0;
    for r in results {
        let Some((loss, grads)) = r? else { continue };
        used += 1;
        total += loss;
        for (name, g) in grads {
            match sum.get_mut(&name) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => {
                    sum.insert(name, g);
                }
            }
        }
    }
    let skipped = demos.len() - used;
    if used == 0 {
        return Ok((0.0, sum, skipped));
    }
    let inv = 1.0 / used as f64;
    sum.values_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= inv));
    Ok((total * inv, sum, skipped))
}

/// Adam training with per-sample augmentation; `progress` sees `(step, window mean loss)`.
pub fn train<F>(policy: &Policy, params: &mut ParamStore, data: &[Demonstration], cfg: &TrainConfig, mut progress: F) -> Result<TrainReport>
where
    F: FnMut(usize, f64),
{
    contract!(!data.is_empty(), "training needs a non-empty dataset");
    contract!(cfg.batch > 0 && cfg.log_every > 0, "batch and log interval must be positive");
    let threads = thread_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::new();
    let mut window = (0.0, 0usize);
    let mut skipped = 0;
    let mut last = f64::NAN;
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        while batch.len() < cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(augment(&data[order[cursor]], cfg.augment_deg, &mut rng));
            cursor += 1;
        }
        let (loss, grads, skip) = batch_gradients(policy, params, &batch, threads)?;
        skipped += skip;
        if skip == batch.len() {
            continue;
        }
        adam.lr = cfg.lr_at(step);
        adam.step(params, &grads)?;
        last = loss;
        window.0 += loss;
        window.1 += 1;
        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            let mean = window.0 / window.1.max(1) as f64;
            curve.push(mean);
            progress(step + 1, mean);
            window = (0.0, 0);
        }
    }
    Ok(TrainReport { config: cfg.clone(), demos: data.len(), parameters: params.num_scalars(), loss_curve: curve, final_loss: last, skipped })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub successes: usize,
    pub total: usize,
    pub rate: f64,
    pub mean_position_error: f64,
    pub mean_rotation_error_deg: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_task: BTreeMap<String, TaskScore>,
    /// Mean of the per-task success rates.
    pub average: f64,
    pub scenes: usize,
}

/// Greedy decoding and success scoring per scene.
pub fn evaluate(policy: &Policy, params: &ParamStore, scenes: &[Demonstration]) -> Result<EvalReport> {
    let outcomes = parallel_map(scenes, thread_count(), |d| -> Result<(bool, f64, f64)> {
        let pred = policy.act(params, &d.observation, &d.instruction)?.action;
        let (dp, dr) = pred.error_to(&d.expert);
        Ok((is_success(&pred, &d.expert), dp, dr))
    });
    let mut per_task: BTreeMap<String, TaskScore> = BTreeMap::new();
    for (d, o) in scenes.iter().zip(outcomes) {
        let (ok, dp, dr) = o?;
        let s = per_task.entry(d.instruction.clone()).or_default();
        s.total += 1;
        s.successes += usize::from(ok);
        s.mean_position_error += dp;
        s.mean_rotation_error_deg += dr.to_degrees();
    }
    for s in per_task.values_mut() {
        let n = s.total as f64;
        s.rate = s.successes as f64 / n;
        s.mean_position_error /= n;
        s.mean_rotation_error_deg /= n;
    }
    let average = if per_task.is_empty() { 0.0 } else { per_task.values().map(|s| s.rate).sum::<f64>() / per_task.len() as f64 };
    Ok(EvalReport { per_task, average, scenes: scenes.len() })
}
