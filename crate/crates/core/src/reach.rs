//! Per-target high-precision reaching: online iterative refinement of a
//! replicated inverse model, virtual forward simulation, and a two-strategy
//! race.
//!
//! Nothing here mutates the pretrained model: every reach works on a
//! replica. All executed joint variations are exact multiples of the
//! commanded resolution and stay inside the joint ranges.

use crate::kinematics::{
    forward_kinematics, min_end_displacement, quantize, residual_after, ArmGeometry, JointConfig,
    JointDelta, JointResolution, RelativePosition, DOF,
};
use crate::model::{train_batch, InverseModel, OptimizerState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Basic,
    S1,
    S2,
    Parallel,
    BaselineFixedIm,
}

impl Strategy {
    pub fn parse(s: &str) -> Option<Strategy> {
        match s {
            "basic" => Some(Strategy::Basic),
            "s1" => Some(Strategy::S1),
            "s2" => Some(Strategy::S2),
            "parallel" => Some(Strategy::Parallel),
            "baseline" | "baseline-fixed-im" => Some(Strategy::BaselineFixedIm),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Basic => "basic",
            Strategy::S1 => "s1",
            Strategy::S2 => "s2",
            Strategy::Parallel => "parallel",
            Strategy::BaselineFixedIm => "baseline-fixed-im",
        }
    }
}

/// How the success threshold is derived from the resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Physical minimum displacement at the task resolution.
    MinDisp,
    /// Half of it, for the resolution study.
    HalfMinDisp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachTask {
    pub start: JointConfig,
    /// Target, expressed in the start tool frame.
    pub target_rel: RelativePosition,
    pub resolution: JointResolution,
    /// Success threshold in meters.
    pub threshold: f64,
    /// Max online-learning iterations per refinement call.
    pub t_online: usize,
    /// Training epochs per online iteration.
    pub e_online: usize,
    pub learning_rate: f64,
    /// Cap on virtual forward-simulation steps.
    pub max_fs_steps: usize,
    /// Per-target wall budget, seconds.
    pub wall_budget: f64,
    /// Seed for the online exploration noise; results are a pure function
    /// of the task, so reruns reproduce them exactly.
    pub seed: u64,
}

impl ReachTask {
    pub fn new(
        start: JointConfig,
        target_rel: RelativePosition,
        resolution: JointResolution,
        mode: ThresholdMode,
        geom: &ArmGeometry,
    ) -> Self {
        let md = min_end_displacement(&start, &resolution, geom);
        let threshold = match mode {
            ThresholdMode::MinDisp => md.exact,
            ThresholdMode::HalfMinDisp => md.exact / 2.0,
        };
        Self {
            start,
            target_rel,
            resolution,
            threshold,
            t_online: 200,
            e_online: 10,
            learning_rate: 1e-4,
            max_fs_steps: 20,
            wall_budget: 10.0,
            seed: 0,
        }
    }
}

/// Which branch produced a parallel result and why it was selected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WinnerProvenance {
    /// Single-strategy run, no race.
    Direct,
    /// Branch satisfied the threshold first.
    EarliestSatisfier { branch: Strategy },
    /// Neither branch satisfied; this one had the better precision.
    BestPrecision { branch: Strategy },
    /// Precision tie broken by wall time.
    TieByTime { branch: Strategy },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachReport {
    pub strategy: Strategy,
    /// Ground-truth residual of the executed trajectory, meters.
    pub final_precision_m: f64,
    pub success: bool,
    pub threshold_m: f64,
    /// Executed quantized joint variations, degrees, in order.
    pub trajectory_deg: Vec<[f64; DOF]>,
    pub online_iterations: usize,
    pub fs_steps: usize,
    pub wall_time_s: f64,
    pub winner: WinnerProvenance,
    /// Set when the run hit a numeric failure and reports best-so-far.
    pub error: Option<String>,
}

impl ReachReport {
    /// Replay the recorded trajectory through the kinematics and return the
    /// recomputed residual. Reports are only valid if this matches
    /// `final_precision_m`.
    pub fn audit(&self, task: &ReachTask, geom: &ArmGeometry) -> Result<f64, String> {
        let mut s = task.start;
        let mut dp = task.target_rel;
        for step in &self.trajectory_deg {
            let dq = JointDelta::from_degrees(*step);
            for d in dq.deltas {
                let steps = d / task.resolution.alpha;
                if (steps - steps.round()).abs() > 1e-6 {
                    return Err(format!("unquantized step component {d}"));
                }
            }
            let (s2, dp2) = residual_after(&s, &dq, &dp, geom).map_err(|e| e.to_string())?;
            s = s2;
            dp = dp2;
        }
        Ok(dp.norm())
    }
}

/// Quantize a commanded delta and shrink it (in whole resolution steps)
/// until the resulting configuration is in range. Keeps both execution
/// invariants: multiples of alpha, and never out of range.
pub fn quantize_in_range(
    s: &JointConfig,
    dq: &JointDelta,
    res: &JointResolution,
    geom: &ArmGeometry,
) -> JointDelta {
    let q = quantize(dq, res);
    let mut out = [0.0; DOF];
    for i in 0..DOF {
        let (lo, hi) = geom.joint_ranges[i];
        let (dlo, dhi) = (lo - s.angles[i], hi - s.angles[i]);
        let clamped = q.deltas[i].clamp(dlo, dhi);
        // round toward zero so clamping cannot push back out of range
        out[i] = (clamped / res.alpha).trunc() * res.alpha;
    }
    JointDelta::new(out)
}

#[derive(Debug)]
pub struct OnlineOutcome {
    pub model: InverseModel,
    pub pr_best: f64,
    /// Quantized best command; executing it from `s` yields `pr_best`.
    pub dq_best: JointDelta,
    pub iterations: usize,
    pub error: Option<String>,
}

/// Iterations without improvement before the loop switches from plain
/// inference to exploratory (noisy) inference.
const STALL_PATIENCE: usize = 5;

/// Max exploration noise std as a fraction of the delta bound once stalled.
const EXPLORE_SIGMA: f64 = 0.1;

/// Rough tool motion per unit joint motion, meters per radian; sets the
/// exploration scale that matches a given residual.
const MOTION_SCALE: f64 = 0.3;

/// One round of online iterative learning at a fixed state. Per iteration:
/// infer a command, relabel its quantized execution through the forward
/// model, train on that single sample, re-infer, and score the new command
/// against the target. The best command and the model that produced it are
/// kept; returns early once the best score passes the threshold.
///
/// When several iterations in a row fail to improve — which happens when
/// the bounded output layer is saturated and gradients vanish — inference
/// switches to the same noisy exploration used during pretraining. The
/// executed noisy commands both desaturate the model (their relabels pull
/// the outputs back inside the bound) and act as a direct local search for
/// a better command.
pub fn online_iterate(
    mut model: InverseModel,
    s: &JointConfig,
    dp: &RelativePosition,
    task: &ReachTask,
    geom: &ArmGeometry,
    cancel: Option<&AtomicBool>,
) -> OnlineOutcome {
    let mut opt = OptimizerState::new(&model, task.learning_rate);
    let mut best_model = model.replicate();
    // staying put is always available, so the incumbent starts as the zero
    // command with the current distance as its score
    let mut pr_best = dp.norm();
    let mut dq_best = JointDelta::zero();
    let mut iterations = 0;
    let mut error = None;
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let mut stall = 0usize;

    'outer: for _ in 0..task.t_online {
        if let Some(flag) = cancel {
            if flag.load(Ordering::Relaxed) {
                break;
            }
        }
        iterations += 1;
        let raw = if stall >= STALL_PATIENCE {
            // stochastic local search around the incumbent command, with
            // noise std matched to the remaining residual (never below one
            // resolution step) so it stays coarse while far away and
            // refines as it closes in. Centering on the incumbent rather
            // than on the model keeps the search effective even while the
            // model is still wrong at this state.
            let sigma = (pr_best / MOTION_SCALE).clamp(task.resolution.alpha, EXPLORE_SIGMA * geom.delta_bound);
            let dist = Normal::new(0.0, sigma).expect("finite std");
            let mut d = dq_best;
            for v in d.deltas.iter_mut() {
                *v = (*v + dist.sample(&mut rng)).clamp(-geom.delta_bound, geom.delta_bound);
            }
            d
        } else {
            model.infer(s, dp)
        };
        let dq_exec = quantize_in_range(s, &raw, &task.resolution, geom);
        let pr_before = pr_best;

        // score the executed command itself; under exploration this is a
        // local search that does not depend on usable gradients
        match residual_after(s, &dq_exec, dp, geom) {
            Ok((_, r)) => {
                if r.norm() < pr_best {
                    pr_best = r.norm();
                    dq_best = dq_exec;
                    best_model = model.replicate();
                }
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
        if pr_best < task.threshold {
            break;
        }

        let achieved = match crate::kinematics::displacement_in_tool_frame(s, &dq_exec, geom) {
            Ok(p) => p,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        // label with the command that was actually executed: near a joint
        // limit the clamp can remove several degrees, and pairing the
        // achieved displacement with the unclamped command would teach the
        // model the wrong inverse map exactly where it is already saturated
        let sample = [(*s, achieved, dq_exec)];
        for _ in 0..task.e_online {
            if let Err(e) = train_batch(&mut model, &mut opt, &sample) {
                error = Some(e.to_string());
                break 'outer;
            }
        }
        let dq_new = quantize_in_range(s, &model.infer(s, dp), &task.resolution, geom);
        let pr = match residual_after(s, &dq_new, dp, geom) {
            Ok((_, r)) => r.norm(),
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        if pr < pr_best {
            pr_best = pr;
            dq_best = dq_new;
            best_model = model.replicate();
        }
        stall = if pr_best < pr_before { 0 } else { stall + 1 };
        if pr_best < task.threshold {
            break;
        }
    }

    OnlineOutcome {
        model: best_model,
        pr_best,
        dq_best,
        iterations,
        error,
    }
}

/// One virtual step: quantized greedy command and the state/target pair it
/// would leave behind. Nothing is executed.
pub fn forward_sim_step(
    model: &InverseModel,
    s: &JointConfig,
    dp: &RelativePosition,
    geom: &ArmGeometry,
    res: &JointResolution,
) -> (JointConfig, RelativePosition, JointDelta) {
    let dq = quantize_in_range(s, &model.infer(s, dp), res, geom);
    let (s_new, dp_new) = residual_after(s, &dq, dp, geom).expect("quantize_in_range keeps range");
    (s_new, dp_new, dq)
}

struct StrategyRun {
    report: ReachReport,
}

fn run_strategy_inner(
    task: &ReachTask,
    pretrained: &InverseModel,
    which: Strategy,
    geom: &ArmGeometry,
    cancel: Option<&AtomicBool>,
    iteration_cap: Option<usize>,
) -> StrategyRun {
    let start_time = Instant::now();
    let mut model = pretrained.replicate();
    let mut s = task.start;
    let mut dp = task.target_rel;
    let mut prefix: Vec<JointDelta> = Vec::new();
    let mut online_iterations = 0;
    let mut error = None;

    // best trajectory seen so far: virtual prefix + the round's best command
    let mut best: Option<(Vec<JointDelta>, f64)> = None;

    if which == Strategy::S2 {
        let (s2, dp2, dq) = forward_sim_step(&model, &s, &dp, geom, &task.resolution);
        s = s2;
        dp = dp2;
        prefix.push(dq);
    }

    loop {
        let mut round_task = *task;
        // independent noise stream per strategy branch and per round, so the
        // two race branches explore differently and the deterministic and
        // threaded parallel modes agree
        round_task.seed = task
            .seed
            .wrapping_add(which as u64 + 1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(prefix.len() as u64);
        if let Some(cap) = iteration_cap {
            round_task.t_online = task.t_online.min(cap.saturating_sub(online_iterations));
        }
        let outcome = online_iterate(model, &s, &dp, &round_task, geom, cancel);
        online_iterations += outcome.iterations;
        model = outcome.model;
        if outcome.error.is_some() {
            error = outcome.error;
        }
        let mut traj = prefix.clone();
        traj.push(outcome.dq_best);
        if best.as_ref().map_or(true, |(_, p)| outcome.pr_best < *p) {
            best = Some((traj, outcome.pr_best));
        }

        let satisfied = outcome.pr_best < task.threshold;
        let cancelled = cancel.is_some_and(|f| f.load(Ordering::Relaxed));
        let capped = iteration_cap.is_some_and(|cap| online_iterations >= cap);
        let fs_exhausted = prefix.len() >= task.max_fs_steps;
        let wall_exhausted = start_time.elapsed().as_secs_f64() >= task.wall_budget;
        if which == Strategy::Basic
            || satisfied
            || cancelled
            || capped
            || fs_exhausted
            || wall_exhausted
            || error.is_some()
        {
            break;
        }

        // advance the simulation by the round's best command, not by a fresh
        // inference: when the model is still wrong at this state, a fresh
        // inference would walk the virtual arm further off target
        let dq = outcome.dq_best;
        if dq == JointDelta::zero() {
            // simulation fixed point; another round at the same state is the
            // only remaining option, and that state was just refined
            break;
        }
        let (s2, dp2) = residual_after(&s, &dq, &dp, geom).expect("quantize_in_range keeps range");
        s = s2;
        dp = dp2;
        prefix.push(dq);
    }

    let (trajectory, _) = best.expect("at least one online round ran");
    let fs_steps = trajectory.len().saturating_sub(1);
    let trajectory_deg: Vec<[f64; DOF]> = trajectory.iter().map(|d| d.to_degrees()).collect();

    // the report's precision is the audited replay, not the search estimate
    let mut rs = task.start;
    let mut rdp = task.target_rel;
    for dq in &trajectory {
        let (a, b) = residual_after(&rs, dq, &rdp, geom).expect("trajectory in range");
        rs = a;
        rdp = b;
    }
    let final_precision = rdp.norm();

    StrategyRun {
        report: ReachReport {
            strategy: which,
            final_precision_m: final_precision,
            success: final_precision < task.threshold,
            threshold_m: task.threshold,
            trajectory_deg,
            online_iterations,
            fs_steps,
            wall_time_s: start_time.elapsed().as_secs_f64(),
            winner: WinnerProvenance::Direct,
            error,
        },
    }
}

/// Run one reaching strategy on a fresh replica of the pretrained model.
pub fn run_strategy(
    task: &ReachTask,
    pretrained: &InverseModel,
    which: Strategy,
    geom: &ArmGeometry,
) -> ReachReport {
    match which {
        Strategy::Basic | Strategy::S1 | Strategy::S2 => {
            run_strategy_inner(task, pretrained, which, geom, None, None).report
        }
        Strategy::Parallel => run_parallel(task, pretrained, geom, ParallelMode::Deterministic),
        Strategy::BaselineFixedIm => run_baseline_fixed_im(task, pretrained, geom),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParallelMode {
    /// Run both branches to completion, then select. Reproducible.
    Deterministic,
    /// Two threads; the first satisfier cancels the other at its next
    /// iteration boundary.
    Threaded,
}

/// Branch cost used to decide "earliest" in deterministic mode: measured
/// wall times vary between reruns, total online iterations do not, and on
/// equal hardware they are proportional.
fn branch_cost(r: &ReachReport) -> (usize, usize) {
    (r.online_iterations, r.fs_steps)
}

fn select_winner(
    task: &ReachTask,
    r1: ReachReport,
    r2: ReachReport,
    deterministic: bool,
) -> ReachReport {
    let s1_ok = r1.final_precision_m < task.threshold;
    let s2_ok = r2.final_precision_m < task.threshold;
    // race wall time: a satisfier ends the race at its own finish; with no
    // satisfier both branches run out their budgets
    let race_wall = match (s1_ok, s2_ok) {
        (true, true) => r1.wall_time_s.min(r2.wall_time_s),
        (true, false) => r1.wall_time_s,
        (false, true) => r2.wall_time_s,
        (false, false) => r1.wall_time_s.max(r2.wall_time_s),
    };
    let (mut winner, provenance) = match (s1_ok, s2_ok) {
        (true, true) => {
            let pick_s1 = if deterministic {
                branch_cost(&r1) <= branch_cost(&r2)
            } else {
                r1.wall_time_s <= r2.wall_time_s
            };
            if pick_s1 {
                (r1, WinnerProvenance::EarliestSatisfier { branch: Strategy::S1 })
            } else {
                (r2, WinnerProvenance::EarliestSatisfier { branch: Strategy::S2 })
            }
        }
        (true, false) => (r1, WinnerProvenance::EarliestSatisfier { branch: Strategy::S1 }),
        (false, true) => (r2, WinnerProvenance::EarliestSatisfier { branch: Strategy::S2 }),
        (false, false) => {
            if r1.final_precision_m == r2.final_precision_m {
                // precision tie: break by cost (deterministic) or time
                let pick_s1 = if deterministic {
                    branch_cost(&r1) <= branch_cost(&r2)
                } else {
                    r1.wall_time_s <= r2.wall_time_s
                };
                if pick_s1 {
                    (r1, WinnerProvenance::TieByTime { branch: Strategy::S1 })
                } else {
                    (r2, WinnerProvenance::TieByTime { branch: Strategy::S2 })
                }
            } else if r1.final_precision_m < r2.final_precision_m {
                (r1, WinnerProvenance::BestPrecision { branch: Strategy::S1 })
            } else {
                (r2, WinnerProvenance::BestPrecision { branch: Strategy::S2 })
            }
        }
    };
    winner.wall_time_s = race_wall;
    winner.strategy = Strategy::Parallel;
    winner.winner = provenance;
    winner
}

/// Race strategies 1 and 2 on independent replicas.
pub fn run_parallel(
    task: &ReachTask,
    pretrained: &InverseModel,
    geom: &ArmGeometry,
    mode: ParallelMode,
) -> ReachReport {
    match mode {
        ParallelMode::Deterministic => {
            let r1 = run_strategy_inner(task, pretrained, Strategy::S1, geom, None, None).report;
            // once branch 1 satisfies, branch 2 is only relevant if it
            // would have finished first; cap its budget accordingly
            let cap = (r1.final_precision_m < task.threshold).then_some(r1.online_iterations);
            let r2 = run_strategy_inner(task, pretrained, Strategy::S2, geom, None, cap).report;
            select_winner(task, r1, r2, true)
        }
        ParallelMode::Threaded => {
            let cancel = AtomicBool::new(false);
            let (r1, r2) = std::thread::scope(|scope| {
                let h1 = scope.spawn(|| {
                    let r =
                        run_strategy_inner(task, pretrained, Strategy::S1, geom, Some(&cancel), None);
                    if r.report.final_precision_m < task.threshold {
                        cancel.store(true, Ordering::Relaxed);
                    }
                    r.report
                });
                let h2 = scope.spawn(|| {
                    let r =
                        run_strategy_inner(task, pretrained, Strategy::S2, geom, Some(&cancel), None);
                    if r.report.final_precision_m < task.threshold {
                        cancel.store(true, Ordering::Relaxed);
                    }
                    r.report
                });
                (h1.join().expect("branch panicked"), h2.join().expect("branch panicked"))
            });
            select_winner(task, r1, r2, false)
        }
    }
}

/// Visual-servoing style baseline: iterate quantized commands from the
/// unmodified pretrained model, re-observing the target after each executed
/// step. No training happens; the model is read-only.
pub fn run_baseline_fixed_im(
    task: &ReachTask,
    pretrained: &InverseModel,
    geom: &ArmGeometry,
) -> ReachReport {
    let start_time = Instant::now();
    let pose = forward_kinematics(&task.start, geom).expect("start in range");
    let target_base = pose.point_in_base(&task.target_rel);

    let mut s = task.start;
    let mut dp = task.target_rel;
    let mut trajectory: Vec<JointDelta> = Vec::new();
    for _ in 0..task.t_online {
        let dq = quantize_in_range(&s, &pretrained.infer(&s, &dp), &task.resolution, geom);
        if dq == JointDelta::zero() {
            break;
        }
        let prev_norm = dp.norm();
        s = s.apply(&dq);
        trajectory.push(dq);
        // exact re-observation of the fixed base-frame target
        dp = crate::perception::true_relative(&target_base, &s, geom).expect("executed state in range");
        if dp.norm() < task.threshold {
            break;
        }
        if dp.norm() >= prev_norm {
            // diverging with a fixed model; undo the step and stop
            let back = JointDelta::new(dq.deltas.map(|d| -d));
            s = s.apply(&back);
            trajectory.push(back);
            dp = crate::perception::true_relative(&target_base, &s, geom)
                .expect("executed state in range");
            break;
        }
    }

    ReachReport {
        strategy: Strategy::BaselineFixedIm,
        final_precision_m: dp.norm(),
        success: dp.norm() < task.threshold,
        threshold_m: task.threshold,
        trajectory_deg: trajectory.iter().map(|d| d.to_degrees()).collect(),
        online_iterations: 0,
        fs_steps: trajectory.len(),
        wall_time_s: start_time.elapsed().as_secs_f64(),
        winner: WinnerProvenance::Direct,
        error: None,
    }
}
