//! Evaluation metrics, accuracy/token frontiers, and the
//! advantage-normalization ablation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::baselines::{
    build_preference_pairs, cutoff_eval, dpo_train, rejection_sft, CutoffOptions, DpoReport,
    SftReport,
};
use crate::config_err;
use crate::error::Result;
use crate::math::{least_squares_slope, sqrt};
use crate::policy::TabularPolicy;
use crate::rl::{normalized_advantages, sample_group, train, AdvantageMode, IterLog, RolloutGroup, TrainConfig};
use crate::rng::{derive_rng, fnv1a, Stream};
use crate::tasks::{Task, TaskId};

/// Evaluation settings: number of samples per prompt and the sampling
/// temperature (training stays at temperature 1; evaluation defaults to a
/// sharper 0.6).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalSpec {
    pub k: usize,
    pub temperature: f64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec { k: 3, temperature: 0.6 }
    }
}

/// Per-task evaluation breakdown.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TaskEval {
    pub id: TaskId,
    /// Mean correctness of this task's k samples.
    pub pass_rate: f64,
    /// Mean token count of this task's k samples.
    pub mean_len: f64,
}

/// Result of a pass-rate@k evaluation.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalResult {
    /// Weighted mean of per-task pass rates.
    pub accuracy: f64,
    /// Mean token count over all k * |tasks| samples.
    pub mean_tokens: f64,
    pub per_task: Vec<TaskEval>,
}

/// Average pass rate@k: per task, the mean correctness of `k` samples at the
/// given temperature; the suite value is the weight-averaged per-task rate.
///
/// Sampling streams derive from (task id, sample index) and per-task results
/// accumulate in id order, so the outcome is exactly invariant to task
/// ordering and to any parallel execution schedule.
pub fn pass_rate_at_k<P: TabularPolicy>(
    policy: &P,
    tasks: &[Task],
    k: usize,
    temperature: f64,
    seed: u64,
) -> Result<EvalResult> {
    if k == 0 {
        return Err(config_err!("pass rate needs k >= 1"));
    }
    crate::tasks::validate_suite(tasks)?;
    let total_weight: f64 = tasks.iter().map(Task::weight).sum();

    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.sort_by(|&a, &b| tasks[a].id().cmp(tasks[b].id()));

    let mut accuracy = 0.0;
    let mut token_sum = 0.0;
    let mut per_task = Vec::with_capacity(tasks.len());
    for &ti in &order {
        let task = &tasks[ti];
        let mut correct = 0usize;
        let mut len_sum = 0.0;
        for sample in 0..k {
            let mut rng = derive_rng(seed, Stream::Eval, fnv1a(task.id().as_str()), sample as u64);
            let traj = policy.sample(task, temperature, &mut rng)?;
            correct += usize::from(traj.is_correct);
            len_sum += f64::from(traj.length);
        }
        let pass_rate = correct as f64 / k as f64;
        accuracy += task.weight() / total_weight * pass_rate;
        token_sum += len_sum;
        per_task.push(TaskEval {
            id: task.id().clone(),
            pass_rate,
            mean_len: len_sum / k as f64,
        });
    }
    Ok(EvalResult {
        accuracy,
        mean_tokens: token_sum / (k * tasks.len()) as f64,
        per_task,
    })
}

/// Method label of a frontier point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rl,
    Cutoff,
    Sft,
    Dpo,
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Method::Rl => f.write_str("rl"),
            Method::Cutoff => f.write_str("cutoff"),
            Method::Sft => f.write_str("sft"),
            Method::Dpo => f.write_str("dpo"),
        }
    }
}

/// One point of the accuracy/token frontier, normalized against the
/// alpha = 0 RL reference run on the same suite and seed.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FrontierPoint {
    pub method: Method,
    pub alpha: Option<f64>,
    pub budget: Option<u32>,
    pub accuracy: f64,
    pub mean_tokens: f64,
    pub normalized_accuracy: f64,
    pub normalized_tokens: f64,
}

/// A trained-and-evaluated RL arm.
#[derive(Debug, Clone)]
pub struct RlArm<P> {
    pub alpha: f64,
    pub advantage_mode: AdvantageMode,
    pub seed: u64,
    pub log: Vec<IterLog>,
    pub eval: EvalResult,
    pub policy: P,
}

/// Train one RL arm from a shared initial policy and evaluate it.
pub fn rl_arm<P: TabularPolicy>(
    tasks: &[Task],
    cfg_base: &TrainConfig,
    alpha: f64,
    advantage_mode: AdvantageMode,
    seed: u64,
    init: &P,
    eval: &EvalSpec,
) -> Result<RlArm<P>> {
    let cfg = TrainConfig { alpha, advantage_mode, seed, ..cfg_base.clone() };
    let mut policy = init.clone();
    let log = train(tasks, &mut policy, &cfg)?;
    let eval_seed = derive_eval_seed(seed);
    let eval = pass_rate_at_k(&policy, tasks, eval.k, eval.temperature, eval_seed)?;
    Ok(RlArm { alpha, advantage_mode, seed, log, eval, policy })
}

/// Evaluation randomness is decoupled from training randomness by a fixed
/// label on the seed.
pub fn derive_eval_seed(seed: u64) -> u64 {
    seed ^ 0x5EED_E0A1_0000_0001u64
}

/// Outcome of a frontier sweep over penalty strengths.
#[derive(Debug, Clone)]
pub struct FrontierOutcome<P> {
    pub points: Vec<FrontierPoint>,
    pub arms: Vec<RlArm<P>>,
}

/// Train one policy per alpha from the same initialization and seed, and
/// assemble frontier points normalized to the alpha = 0 arm.
pub fn frontier<P: TabularPolicy>(
    tasks: &[Task],
    alphas: &[f64],
    cfg_base: &TrainConfig,
    init: &P,
    eval: &EvalSpec,
) -> Result<FrontierOutcome<P>> {
    if !alphas.iter().any(|&a| a == 0.0) {
        return Err(config_err!("frontier alphas must include 0, the normalization reference"));
    }
    let mut arms = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        arms.push(rl_arm(tasks, cfg_base, alpha, cfg_base.advantage_mode, cfg_base.seed, init, eval)?);
    }
    let reference = arms
        .iter()
        .find(|a| a.alpha == 0.0)
        .expect("alpha 0 present by the check above");
    let (ref_acc, ref_tokens) = (reference.eval.accuracy, reference.eval.mean_tokens);
    let points = arms
        .iter()
        .map(|arm| {
            normalized_point(
                Method::Rl,
                Some(arm.alpha),
                None,
                arm.eval.accuracy,
                arm.eval.mean_tokens,
                ref_acc,
                ref_tokens,
            )
        })
        .collect();
    Ok(FrontierOutcome { points, arms })
}

/// Build a frontier point normalized against the reference run's values.
pub fn normalized_point(
    method: Method,
    alpha: Option<f64>,
    budget: Option<u32>,
    accuracy: f64,
    mean_tokens: f64,
    ref_accuracy: f64,
    ref_tokens: f64,
) -> FrontierPoint {
    let norm = |v: f64, r: f64| if r > 0.0 { v / r } else { f64::NAN };
    FrontierPoint {
        method,
        alpha,
        budget,
        accuracy,
        mean_tokens,
        normalized_accuracy: norm(accuracy, ref_accuracy),
        normalized_tokens: norm(mean_tokens, ref_tokens),
    }
}

/// Hyperparameters of the baseline arms of a frontier experiment.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BaselineSpec {
    pub budgets: Vec<u32>,
    pub sample_n: usize,
    pub sft_epochs: usize,
    pub sft_lr: f64,
    pub dpo_beta: f64,
    pub dpo_epochs: usize,
    pub dpo_lr: f64,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        BaselineSpec {
            budgets: alloc::vec![8, 16, 24, 32],
            sample_n: 8,
            sft_epochs: 200,
            sft_lr: crate::baselines::DEFAULT_BASELINE_LR,
            dpo_beta: crate::baselines::DEFAULT_DPO_BETA,
            dpo_epochs: 200,
            dpo_lr: crate::baselines::DEFAULT_BASELINE_LR,
        }
    }
}

/// A full frontier: RL arms across alphas plus the three baselines, all
/// normalized against the alpha = 0 RL arm.
#[derive(Debug, Clone)]
pub struct FullFrontier<P> {
    pub points: Vec<FrontierPoint>,
    pub rl_arms: Vec<RlArm<P>>,
    pub sft_report: SftReport,
    pub dpo_report: DpoReport,
}

/// Run RL arms for every alpha plus cutoff/SFT/DPO baselines from the same
/// initial policy, evaluating everything identically.
pub fn frontier_with_baselines<P: TabularPolicy>(
    tasks: &[Task],
    alphas: &[f64],
    cfg_base: &TrainConfig,
    init: &P,
    eval: &EvalSpec,
    baselines: &BaselineSpec,
) -> Result<FullFrontier<P>> {
    let rl = frontier(tasks, alphas, cfg_base, init, eval)?;
    let reference = rl
        .arms
        .iter()
        .find(|a| a.alpha == 0.0)
        .expect("frontier guarantees an alpha = 0 arm");
    let (ref_acc, ref_tokens) = (reference.eval.accuracy, reference.eval.mean_tokens);
    let mut points = rl.points.clone();
    let eval_seed = derive_eval_seed(cfg_base.seed);

    for &budget in &baselines.budgets {
        let res = cutoff_eval(
            init,
            tasks,
            budget,
            eval.k,
            eval.temperature,
            eval_seed,
            &CutoffOptions::default(),
        )?;
        points.push(normalized_point(
            Method::Cutoff,
            None,
            Some(budget),
            res.accuracy,
            res.mean_len,
            ref_acc,
            ref_tokens,
        ));
    }

    let mut sft_policy = init.clone();
    let sft_report = rejection_sft(
        &mut sft_policy,
        tasks,
        baselines.sample_n,
        baselines.sft_epochs,
        baselines.sft_lr,
        cfg_base.seed,
    )?;
    let sft_eval = pass_rate_at_k(&sft_policy, tasks, eval.k, eval.temperature, eval_seed)?;
    points.push(normalized_point(
        Method::Sft,
        None,
        None,
        sft_eval.accuracy,
        sft_eval.mean_tokens,
        ref_acc,
        ref_tokens,
    ));

    let mut dpo_policy = init.clone();
    let shaping = cfg_base.shaping()?;
    let mut groups: Vec<RolloutGroup> = Vec::new();
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.sort_by(|&a, &b| tasks[a].id().cmp(tasks[b].id()));
    for &ti in &order {
        let task = &tasks[ti];
        let mut rng = derive_rng(cfg_base.seed, Stream::Baseline, fnv1a(task.id().as_str()), 1);
        let trajs = sample_group(&dpo_policy, task, baselines.sample_n, 1.0, &mut rng)?;
        groups.push(RolloutGroup::build(trajs, &shaping)?);
    }
    let pairs = build_preference_pairs(&groups);
    let dpo_report = dpo_train(
        &mut dpo_policy,
        tasks,
        &pairs,
        baselines.dpo_beta,
        baselines.dpo_epochs,
        baselines.dpo_lr,
    )?;
    let dpo_eval = pass_rate_at_k(&dpo_policy, tasks, eval.k, eval.temperature, eval_seed)?;
    points.push(normalized_point(
        Method::Dpo,
        None,
        None,
        dpo_eval.accuracy,
        dpo_eval.mean_tokens,
        ref_acc,
        ref_tokens,
    ));

    Ok(FullFrontier { points, rl_arms: rl.arms, sft_report, dpo_report })
}

/// One (alpha, advantage mode, seed) arm of the normalization ablation.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AblationArm {
    pub alpha: f64,
    pub mode: AdvantageMode,
    pub seed: u64,
    /// Least-squares slope of mean length over the first quarter of training
    /// (tokens per iteration; negative means shrinking).
    pub decay_slope: f64,
    /// Mean accuracy over the last tenth of training.
    pub final_accuracy: f64,
    /// Mean response length over the last tenth of training.
    pub final_mean_len: f64,
}

/// The closed-form part of the ablation: on all-correct groups with rewards
/// uniformly spaced across [1 - alpha, 1], the shortest response's
/// normalized advantage is the same for every alpha and tends to sqrt(3).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AnalyticNormalizationCheck {
    pub alphas: Vec<f64>,
    pub points: usize,
    /// Maximum normalized advantage per alpha.
    pub max_advantages: Vec<f64>,
    /// Largest pairwise difference across alphas.
    pub max_spread: f64,
    /// |max advantage - sqrt(3)| at the requested grid size.
    pub sqrt3_abs_error: f64,
}

/// Evaluate the analytic advantage-normalization check on a reward grid of
/// `points` values per alpha.
pub fn analytic_normalization_check(alphas: &[f64], points: usize) -> AnalyticNormalizationCheck {
    let max_advantages: Vec<f64> = alphas
        .iter()
        .map(|&alpha| {
            let rewards: Vec<f64> = (0..points)
                .map(|i| 1.0 - alpha + alpha * i as f64 / (points - 1) as f64)
                .collect();
            normalized_advantages(&rewards)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let mut max_spread = 0.0f64;
    for a in &max_advantages {
        for b in &max_advantages {
            max_spread = max_spread.max((a - b).abs());
        }
    }
    let sqrt3_abs_error = max_advantages
        .iter()
        .map(|a| (a - sqrt(3.0)).abs())
        .fold(0.0f64, f64::max);
    AnalyticNormalizationCheck {
        alphas: alphas.to_vec(),
        points,
        max_advantages,
        max_spread,
        sqrt3_abs_error,
    }
}

/// Full ablation report.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AblationReport {
    pub arms: Vec<AblationArm>,
    pub analytic: AnalyticNormalizationCheck,
}

/// Slope of mean length over the first quarter of a training log.
pub fn early_length_slope(log: &[IterLog]) -> f64 {
    let window = (log.len() / 4).max(2).min(log.len());
    let pts: Vec<(f64, f64)> = log[..window]
        .iter()
        .map(|row| (f64::from(row.iteration), row.mean_len))
        .collect();
    least_squares_slope(&pts).unwrap_or(0.0)
}

fn tail_mean<F: Fn(&IterLog) -> f64>(log: &[IterLog], f: F) -> f64 {
    if log.is_empty() {
        return 0.0;
    }
    let window = (log.len() / 10).max(1);
    let tail = &log[log.len() - window..];
    tail.iter().map(&f).sum::<f64>() / tail.len() as f64
}

/// Run paired trainings (RLOO vs normalized advantages) for every alpha and
/// seed, reporting early length-decay slopes and final accuracies, plus the
/// analytic alpha-independence check.
pub fn ablate_normalization<P: TabularPolicy>(
    tasks: &[Task],
    alphas: &[f64],
    cfg_base: &TrainConfig,
    init: &P,
    seeds: &[u64],
) -> Result<AblationReport> {
    if alphas.is_empty() || seeds.is_empty() {
        return Err(config_err!("ablation needs at least one alpha and one seed"));
    }
    if cfg_base.iterations < 8 {
        return Err(config_err!("ablation needs at least 8 iterations for a slope window"));
    }
    let mut arms = Vec::with_capacity(alphas.len() * seeds.len() * 2);
    for &alpha in alphas {
        for &seed in seeds {
            for mode in [AdvantageMode::Rloo, AdvantageMode::Normalized] {
                let cfg = TrainConfig { alpha, advantage_mode: mode, seed, ..cfg_base.clone() };
                let mut policy = init.clone();
                let log = train(tasks, &mut policy, &cfg)?;
                arms.push(AblationArm {
                    alpha,
                    mode,
                    seed,
                    decay_slope: early_length_slope(&log),
                    final_accuracy: tail_mean(&log, |r| r.accuracy),
                    final_mean_len: tail_mean(&log, |r| r.mean_len),
                });
            }
        }
    }
    let analytic = analytic_normalization_check(alphas, 10_001);
    Ok(AblationReport { arms, analytic })
}

/// Mean of a field across an ablation's arms matching (alpha, mode).
pub fn arm_mean<F: Fn(&AblationArm) -> f64>(
    arms: &[AblationArm],
    alpha: f64,
    mode: AdvantageMode,
    f: F,
) -> f64 {
    let selected: Vec<f64> = arms
        .iter()
        .filter(|a| a.alpha == alpha && a.mode == mode)
        .map(f)
        .collect();
    if selected.is_empty() {
        return f64::NAN;
    }
    selected.iter().sum::<f64>() / selected.len() as f64
}

/// Render a method label with its setting for plot annotations.
pub fn point_label(p: &FrontierPoint) -> String {
    use alloc::format;
    match (p.method, p.alpha, p.budget) {
        (Method::Rl, Some(a), _) => format!("rl a={a}"),
        (Method::Cutoff, _, Some(b)) => format!("cutoff {b}"),
        (m, _, _) => format!("{m}"),
    }
}
