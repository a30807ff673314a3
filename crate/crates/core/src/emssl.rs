//! Dataset generation and embodied self-supervised pretraining.
//!
//! The pretraining loop alternates noisy batch inference of the inverse
//! model with forward-model relabeling, then trains on the relabeled
//! triples. Relabeling is pure, so its result is independent of the number
//! of workers.

use crate::kinematics::{
    displacement_in_tool_frame, quantize, residual_after, ArmGeometry, JointConfig, JointDelta,
    JointResolution, RelativePosition, DOF,
};
use crate::model::{
    train_batch_arrays, InverseModel, ModelError, NoiseSchedule, OptimizerState, INPUT_DIM,
};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One unlabeled sample: state plus desired relative position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataEntry {
    pub s: JointConfig,
    pub dp: RelativePosition,
}

/// Unlabeled dataset with a train/test split. The generating joint
/// variation is discarded; only the forward model can relabel.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    pub train: Vec<DataEntry>,
    pub test: Vec<DataEntry>,
}

/// One ground-truth triple, used only by the direct-regression baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledEntry {
    pub s: JointConfig,
    pub dp: RelativePosition,
    pub dq: JointDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Maximum relabel/train iterations (paper: 200).
    pub max_iterations: usize,
    /// Training epochs per iteration (paper: 10).
    pub epochs: usize,
    /// Inference batch size (paper: 512).
    pub infer_batch: usize,
    /// Training batch size (paper: 128).
    pub train_batch: usize,
    /// Parallel relabel workers (paper: 6).
    pub workers: usize,
    /// Learning rate (paper: 0.0015).
    pub learning_rate: f64,
    pub noise: NoiseSchedule,
    pub seed: u64,
    /// Cap on the per-iteration test evaluation, for speed at paper scale.
    pub eval_subsample: usize,
    /// Stop when the test precision has not improved for this many
    /// iterations. None reproduces the paper's fixed-length run.
    pub early_stop_patience: Option<usize>,
    /// Resolution used for the per-iteration open-loop evaluation.
    pub eval_resolution_deg: f64,
}

impl PretrainConfig {
    pub fn paper_default(seed: u64) -> Self {
        Self {
            max_iterations: 200,
            epochs: 10,
            infer_batch: 512,
            train_batch: 128,
            workers: 6,
            learning_rate: 0.0015,
            noise: NoiseSchedule::paper_default(),
            seed,
            eval_subsample: 2000,
            early_stop_patience: None,
            eval_resolution_deg: 0.01,
        }
    }

    /// Smaller budget for desk-scale runs (20k samples, 30 iterations).
    pub fn desk_default(seed: u64) -> Self {
        Self {
            max_iterations: 30,
            ..Self::paper_default(seed)
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_train_loss: f64,
    pub test_mean_precision_m: f64,
    pub noise_sigma: f64,
}

#[derive(Debug)]
pub struct PretrainResult {
    pub model: InverseModel,
    pub metrics: Vec<IterationMetrics>,
    /// Set when a numeric failure aborted the run; the model holds the last
    /// good parameters.
    pub aborted: Option<String>,
}

fn sample_entry<R: rand::Rng>(geom: &ArmGeometry, rng: &mut R) -> LabeledEntry {
    let (s, dq) = crate::kinematics::sample_config_and_delta(geom, geom.delta_bound, rng);
    let dp = displacement_in_tool_frame(&s, &dq, geom).expect("sampled move in range");
    LabeledEntry { s, dp, dq }
}

/// Ground-truth triples, before the labels are discarded. Deterministic in
/// the seed.
pub fn generate_labeled(geom: &ArmGeometry, n: usize, seed: u64) -> Vec<LabeledEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_entry(geom, &mut rng)).collect()
}

/// Unlabeled (state, relative position) pairs split train/test. The same
/// seed yields the same underlying samples as [`generate_labeled`].
pub fn generate_dataset(geom: &ArmGeometry, n: usize, n_train: usize, seed: u64) -> UnlabeledSet {
    assert!(n_train <= n);
    let entries: Vec<DataEntry> = generate_labeled(geom, n, seed)
        .into_iter()
        .map(|e| DataEntry { s: e.s, dp: e.dp })
        .collect();
    let (train, test) = entries.split_at(n_train);
    UnlabeledSet {
        train: train.to_vec(),
        test: test.to_vec(),
    }
}

/// Relabel (state, delta) pairs through the forward model. Chunked over
/// `workers`; the map is pure so the result does not depend on the chunking.
pub fn relabel(
    states: &[JointConfig],
    deltas: &[JointDelta],
    geom: &ArmGeometry,
    workers: usize,
) -> Vec<RelativePosition> {
    let compute = |(s, dq): (&JointConfig, &JointDelta)| {
        displacement_in_tool_frame(s, dq, geom).expect("relabel pair in range")
    };
    if workers <= 1 {
        states.iter().zip(deltas.iter()).map(compute).collect()
    } else {
        states
            .par_iter()
            .zip(deltas.par_iter())
            .with_min_len(states.len().div_ceil(workers.max(1)))
            .map(compute)
            .collect()
    }
}

fn build_matrices(
    model: &InverseModel,
    triples: &[(JointConfig, RelativePosition, JointDelta)],
    idx: &[usize],
) -> (Array2<f64>, Array2<f64>) {
    let n = idx.len();
    let mut x = Array2::zeros((n, INPUT_DIM));
    let mut y = Array2::zeros((n, DOF));
    for (row, &i) in idx.iter().enumerate() {
        let (s, dp, dq) = &triples[i];
        let f = model.features(s, dp);
        for j in 0..INPUT_DIM {
            x[[row, j]] = f[j];
        }
        for j in 0..DOF {
            y[[row, j]] = dq.deltas[j];
        }
    }
    (x, y)
}

/// Open-loop precision of the model over a test set: quantized single-shot
/// command, residual measured by the forward model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PrecisionStats {
    pub mean_m: f64,
    pub median_m: f64,
    pub p95_m: f64,
    pub n: usize,
}

pub fn evaluate_open_loop(
    model: &InverseModel,
    test: &[DataEntry],
    geom: &ArmGeometry,
    res: &JointResolution,
) -> PrecisionStats {
    let mut errors: Vec<f64> = test
        .iter()
        .map(|e| {
            let dq = quantize(&model.infer(&e.s, &e.dp), res);
            let dq = geom.clamp_delta(&e.s, &dq);
            let (_, residual) = residual_after(&e.s, &dq, &e.dp, geom).expect("clamped in range");
            residual.norm()
        })
        .collect();
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = errors.len();
    let mean = errors.iter().sum::<f64>() / n as f64;
    let median = errors[n / 2];
    let p95 = errors[((n as f64 * 0.95) as usize).min(n - 1)];
    PrecisionStats {
        mean_m: mean,
        median_m: median,
        p95_m: p95,
        n,
    }
}

/// Everything needed to continue a pretraining run: checkpointable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainState {
    pub model: InverseModel,
    pub opt: OptimizerState,
    pub noise: NoiseSchedule,
    pub iteration: usize,
    pub metrics: Vec<IterationMetrics>,
    pub aborted: Option<String>,
}

pub fn pretrain_init(model: InverseModel, cfg: &PretrainConfig) -> PretrainState {
    let opt = OptimizerState::new(&model, cfg.learning_rate);
    PretrainState {
        model,
        opt,
        noise: cfg.noise,
        iteration: 0,
        metrics: Vec::new(),
        aborted: None,
    }
}

/// One pretraining iteration: noisy batch inference over the unlabeled
/// training set, forward-model relabeling, then supervised epochs on the
/// relabeled triples. The working set is rebuilt from scratch every
/// iteration. Randomness is derived from (seed, iteration), so a run
/// resumed from a checkpointed state is identical to an uninterrupted one.
pub fn pretrain_step(
    state: &mut PretrainState,
    u: &UnlabeledSet,
    geom: &ArmGeometry,
    cfg: &PretrainConfig,
) {
    let iteration = state.iteration;
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed ^ (iteration as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15),
    );
    let eval_res = JointResolution::from_degrees(cfg.eval_resolution_deg);
    let model = &mut state.model;
    let noise = &state.noise;

    let n = u.train.len();
    let mut order: Vec<usize> = (0..n).collect();

    {
        // inference phase: Q <- IM(S, P) with exploration noise
        order.shuffle(&mut rng);
        let mut states = Vec::with_capacity(n);
        let mut deltas: Vec<JointDelta> = Vec::with_capacity(n);
        for chunk in order.chunks(cfg.infer_batch) {
            let mut x = Array2::zeros((chunk.len(), INPUT_DIM));
            for (row, &i) in chunk.iter().enumerate() {
                let f = model.features(&u.train[i].s, &u.train[i].dp);
                for j in 0..INPUT_DIM {
                    x[[row, j]] = f[j];
                }
            }
            let y = model.forward(&x);
            for (row, &i) in chunk.iter().enumerate() {
                let s = u.train[i].s;
                let mut dq = [0.0; DOF];
                for j in 0..DOF {
                    dq[j] = y[[row, j]];
                }
                let mut dq = JointDelta::new(dq);
                let std = noise.sigma() * model.delta_bound;
                if std > 0.0 {
                    use rand_distr::Distribution;
                    let dist = rand_distr::Normal::new(0.0, std).unwrap();
                    for d in dq.deltas.iter_mut() {
                        *d = (*d + dist.sample(&mut rng)).clamp(-model.delta_bound, model.delta_bound);
                    }
                }
                // keep the relabel pair executable
                let dq = geom.clamp_delta(&s, &dq);
                states.push(s);
                deltas.push(dq);
            }
        }

        // relabel phase: P <- FM(S, Q)
        let relabels = relabel(&states, &deltas, geom, cfg.workers);
        let triples: Vec<(JointConfig, RelativePosition, JointDelta)> = states
            .iter()
            .zip(relabels.iter())
            .zip(deltas.iter())
            .map(|((s, p), q)| (*s, *p, *q))
            .collect();

        // training phase
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let mut train_order: Vec<usize> = (0..triples.len()).collect();
        for _ in 0..cfg.epochs {
            train_order.shuffle(&mut rng);
            for batch in train_order.chunks(cfg.train_batch) {
                let (x, y) = build_matrices(model, &triples, batch);
                match train_batch_arrays(model, &mut state.opt, &x, &y) {
                    Ok(loss) => {
                        loss_sum += loss;
                        loss_count += 1;
                    }
                    Err(e) => {
                        state.aborted = Some(e.to_string());
                        return;
                    }
                }
            }
        }

        let eval_set: Vec<DataEntry> = u.test.iter().take(cfg.eval_subsample).copied().collect();
        let stats = evaluate_open_loop(model, &eval_set, geom, &eval_res);
        state.metrics.push(IterationMetrics {
            iteration,
            mean_train_loss: loss_sum / loss_count.max(1) as f64,
            test_mean_precision_m: stats.mean_m,
            noise_sigma: state.noise.sigma(),
        });
    }
    state.noise.advance();
    state.iteration += 1;
}

/// The full pretraining loop. See [`pretrain_step`] for the per-iteration
/// structure; early stopping (when configured) watches the test precision.
pub fn pretrain(
    u: &UnlabeledSet,
    geom: &ArmGeometry,
    model: InverseModel,
    cfg: &PretrainConfig,
) -> PretrainResult {
    let mut state = pretrain_init(model, cfg);
    let mut best_precision = f64::INFINITY;
    let mut since_best = 0usize;
    while state.iteration < cfg.max_iterations && state.aborted.is_none() {
        pretrain_step(&mut state, u, geom, cfg);
        if let (Some(patience), Some(m)) = (cfg.early_stop_patience, state.metrics.last()) {
            if m.test_mean_precision_m < best_precision {
                best_precision = m.test_mean_precision_m;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }
    PretrainResult {
        model: state.model,
        metrics: state.metrics,
        aborted: state.aborted,
    }
}

/// Plain supervised baseline on ground-truth labels: the same number of
/// epochs and batch size as the relabeling loop, no relabeling.
pub fn train_direct_regression(
    labeled: &[LabeledEntry],
    mut model: InverseModel,
    cfg: &PretrainConfig,
) -> Result<InverseModel, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(&model, cfg.learning_rate);
    let triples: Vec<(JointConfig, RelativePosition, JointDelta)> =
        labeled.iter().map(|e| (e.s, e.dp, e.dq)).collect();
    let mut order: Vec<usize> = (0..triples.len()).collect();
    for _ in 0..cfg.max_iterations {
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.train_batch) {
                let (x, y) = build_matrices(&model, &triples, batch);
                train_batch_arrays(&mut model, &mut opt, &x, &y)?;
            }
        }
    }
    Ok(model)
}

// ---- dataset files -------------------------------------------------------
//
// Line-delimited numeric records. Column order: 6 state angles in degrees,
// 3 relative-position coordinates in meters, then optionally 6 joint
// variations in degrees for labeled sets.

pub fn write_unlabeled(path: &std::path::Path, entries: &[DataEntry]) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        let mut cols: Vec<String> = Vec::with_capacity(9);
        for v in e.s.to_degrees() {
            cols.push(format!("{v:?}"));
        }
        for v in e.dp.p {
            cols.push(format!("{v:?}"));
        }
        writeln!(f, "{}", cols.join(","))?;
    }
    Ok(())
}

pub fn write_labeled(path: &std::path::Path, entries: &[LabeledEntry]) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        let mut cols: Vec<String> = Vec::with_capacity(15);
        for v in e.s.to_degrees() {
            cols.push(format!("{v:?}"));
        }
        for v in e.dp.p {
            cols.push(format!("{v:?}"));
        }
        for v in e.dq.to_degrees() {
            cols.push(format!("{v:?}"));
        }
        writeln!(f, "{}", cols.join(","))?;
    }
    Ok(())
}

pub fn read_unlabeled(path: &std::path::Path) -> anyhow::Result<Vec<DataEntry>> {
    let content = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), lineno + 1))?;
        if vals.len() != 9 && vals.len() != 15 {
            anyhow::bail!("{}:{}: expected 9 or 15 columns, got {}", path.display(), lineno + 1, vals.len());
        }
        let mut s = [0.0; DOF];
        s.copy_from_slice(&vals[0..DOF]);
        out.push(DataEntry {
            s: JointConfig::from_degrees(s),
            dp: RelativePosition::new([vals[6], vals[7], vals[8]]),
        });
    }
    Ok(out)
}

pub fn read_labeled(path: &std::path::Path) -> anyhow::Result<Vec<LabeledEntry>> {
    let content = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), lineno + 1))?;
        if vals.len() != 15 {
            anyhow::bail!("{}:{}: expected 15 columns, got {}", path.display(), lineno + 1, vals.len());
        }
        let mut s = [0.0; DOF];
        s.copy_from_slice(&vals[0..DOF]);
        let mut dq = [0.0; DOF];
        dq.copy_from_slice(&vals[9..15]);
        out.push(LabeledEntry {
            s: JointConfig::from_degrees(s),
            dp: RelativePosition::new([vals[6], vals[7], vals[8]]),
            dq: JointDelta::from_degrees(dq),
        });
    }
    Ok(out)
}
