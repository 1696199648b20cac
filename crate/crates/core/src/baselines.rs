//! Comparison methods run on the same policies and tasks as RL training:
//! generation cutoff, rejection-sampling SFT toward the shortest correct
//! response, and DPO on (shortest, longest)-correct preference pairs.
//!
//! SFT and DPO update logits by plain full-batch gradient steps; their
//! datasets are sampled once and stay fixed across epochs.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::config_err;
use crate::contract_err;
use crate::error::Result;
use crate::math::{exp, ln, sigmoid};
use crate::policy::{grad_log_prob, log_prob, BudgetedSample, TabularPolicy};
use crate::rl::RolloutGroup;
use crate::rng::{derive_rng, fnv1a, Stream};
use crate::tasks::{Task, TaskId, Trajectory};

/// Default DPO temperature.
pub const DEFAULT_DPO_BETA: f64 = 0.1;

/// Default SFT/DPO learning rate: the reference runs' middle value scaled
/// for unit-scale tabular logits.
pub const DEFAULT_BASELINE_LR: f64 = 5e-3;

/// A (shortest correct, longest correct) pair from one rollout group.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub prompt_id: TaskId,
    /// Shortest correct trajectory of the group.
    pub chosen: Trajectory,
    /// Longest correct trajectory of the group.
    pub rejected: Trajectory,
}

/// Build preference pairs from rollout groups. A group contributes a pair
/// only if it holds at least two correct trajectories at distinct indices;
/// ties resolve to the first minimum and the last maximum, so chosen and
/// rejected never alias.
pub fn build_preference_pairs(groups: &[RolloutGroup]) -> Vec<PreferencePair> {
    let mut pairs = Vec::new();
    for group in groups {
        let mut shortest: Option<usize> = None;
        let mut longest: Option<usize> = None;
        for (i, traj) in group.trajectories.iter().enumerate() {
            if !traj.is_correct {
                continue;
            }
            match shortest {
                Some(s) if group.trajectories[s].length <= traj.length => {}
                _ => shortest = Some(i),
            }
            match longest {
                Some(l) if group.trajectories[l].length > traj.length => {}
                _ => longest = Some(i),
            }
        }
        if let (Some(s), Some(l)) = (shortest, longest) {
            if s != l {
                pairs.push(PreferencePair {
                    prompt_id: group.prompt_id.clone(),
                    chosen: group.trajectories[s].clone(),
                    rejected: group.trajectories[l].clone(),
                });
            }
        }
    }
    pairs
}

/// Options for cutoff evaluation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CutoffOptions {
    /// Count truncated generations (at the budget they consumed) in the mean
    /// length; switching this off averages completed generations only.
    pub count_truncated: bool,
}

impl Default for CutoffOptions {
    fn default() -> Self {
        CutoffOptions { count_truncated: true }
    }
}

/// Result of a cutoff evaluation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CutoffResult {
    /// Weighted pass rate; truncated generations score 0.
    pub accuracy: f64,
    /// Mean emitted tokens per sample (see [`CutoffOptions`]).
    pub mean_len: f64,
}

/// Evaluate a policy with generation truncated at `budget` tokens: `k`
/// samples per task, incomplete generations scored 0.
///
/// Sampling streams are derived per (task id, sample index) with the same
/// labels as plain evaluation, so an unbinding budget reproduces
/// [`crate::eval::pass_rate_at_k`] exactly and raising the budget can only
/// complete more of the same underlying generations.
pub fn cutoff_eval<P: TabularPolicy>(
    policy: &P,
    tasks: &[Task],
    budget: u32,
    k: usize,
    temperature: f64,
    seed: u64,
    opts: &CutoffOptions,
) -> Result<CutoffResult> {
    if budget < 2 {
        return Err(config_err!("cutoff budget must be at least 2 tokens"));
    }
    if k == 0 {
        return Err(config_err!("cutoff evaluation needs k >= 1"));
    }
    crate::tasks::validate_suite(tasks)?;
    let total_weight: f64 = tasks.iter().map(Task::weight).sum();

    // Canonical accumulation order (sorted by id) keeps the result exactly
    // invariant under task permutations.
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.sort_by(|&a, &b| tasks[a].id().cmp(tasks[b].id()));

    let mut accuracy = 0.0;
    let mut len_sum = 0.0;
    let mut len_count = 0usize;
    for &ti in &order {
        let task = &tasks[ti];
        let mut correct = 0usize;
        for sample in 0..k {
            let mut rng = derive_rng(seed, Stream::Eval, fnv1a(task.id().as_str()), sample as u64);
            match policy.sample_budgeted(task, temperature, budget, &mut rng)? {
                BudgetedSample::Complete(traj) => {
                    correct += usize::from(traj.is_correct);
                    len_sum += f64::from(traj.length);
                    len_count += 1;
                }
                BudgetedSample::Truncated { emitted } => {
                    if opts.count_truncated {
                        len_sum += f64::from(emitted);
                        len_count += 1;
                    }
                }
            }
        }
        accuracy += task.weight() / total_weight * correct as f64 / k as f64;
    }
    let mean_len = if len_count == 0 { 0.0 } else { len_sum / len_count as f64 };
    Ok(CutoffResult { accuracy, mean_len })
}

/// One kept SFT target and the policy's log-probability of it before and
/// after training.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SftTarget {
    pub id: TaskId,
    pub target_length: u32,
    pub logprob_before: f64,
    pub logprob_after: f64,
}

/// Outcome of rejection-sampling SFT.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SftReport {
    pub targets: Vec<SftTarget>,
    /// Tasks whose sample groups held no correct trajectory.
    pub skipped: Vec<TaskId>,
    pub epochs: usize,
    pub lr: f64,
}

/// Rejection-sampling SFT: sample `n` trajectories per task at temperature 1,
/// keep the shortest correct one (first minimum on ties), then run `epochs`
/// full-batch gradient-ascent steps on the mean kept log-likelihood. Tasks
/// without a correct sample contribute nothing and are reported as skipped.
pub fn rejection_sft<P: TabularPolicy>(
    policy: &mut P,
    tasks: &[Task],
    n: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<SftReport> {
    if n < 2 {
        return Err(config_err!("rejection sampling needs n >= 2"));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(config_err!("lr must be positive"));
    }
    crate::tasks::validate_suite(tasks)?;

    let mut kept: Vec<(usize, Trajectory)> = Vec::new();
    let mut skipped = Vec::new();
    for (ti, task) in tasks.iter().enumerate() {
        let mut rng = derive_rng(seed, Stream::Baseline, fnv1a(task.id().as_str()), 0);
        let mut best: Option<Trajectory> = None;
        for _ in 0..n {
            let traj = policy.sample(task, 1.0, &mut rng)?;
            if !traj.is_correct {
                continue;
            }
            match &best {
                Some(b) if b.length <= traj.length => {}
                _ => best = Some(traj),
            }
        }
        match best {
            Some(traj) => kept.push((ti, traj)),
            None => skipped.push(task.id().clone()),
        }
    }

    let before: Vec<f64> = kept
        .iter()
        .map(|(ti, traj)| log_prob(policy, &tasks[*ti], traj))
        .collect::<Result<_>>()?;

    if !kept.is_empty() {
        let scale = lr / kept.len() as f64;
        for _ in 0..epochs {
            let mut step = vec![0.0; policy.params().len()];
            for (ti, traj) in &kept {
                let grad = grad_log_prob(policy, &tasks[*ti], traj)?;
                for (s, g) in step.iter_mut().zip(&grad) {
                    *s += scale * g;
                }
            }
            for (p, s) in policy.params_mut().iter_mut().zip(&step) {
                *p += s;
            }
        }
    }

    let mut targets = Vec::with_capacity(kept.len());
    for ((ti, traj), lp_before) in kept.iter().zip(before) {
        targets.push(SftTarget {
            id: traj.prompt_id.clone(),
            target_length: traj.length,
            logprob_before: lp_before,
            logprob_after: log_prob(policy, &tasks[*ti], traj)?,
        });
    }
    Ok(SftReport { targets, skipped, epochs, lr })
}

/// Outcome of DPO training.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DpoReport {
    pub pairs: usize,
    /// True when the pair set was empty and training was a no-op.
    pub empty: bool,
    /// Mean loss per pair at the start (ln 2 when the policy equals the
    /// reference).
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Implicit margins (chosen vs rejected log-ratio difference) per pair.
    pub margins_before: Vec<f64>,
    pub margins_after: Vec<f64>,
    pub beta: f64,
    pub epochs: usize,
    pub lr: f64,
}

fn dpo_margins<P: TabularPolicy>(
    policy: &P,
    reference: &P,
    tasks_by_id: &BTreeMap<&TaskId, &Task>,
    pairs: &[PreferencePair],
) -> Result<Vec<f64>> {
    let mut margins = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let task = tasks_by_id
            .get(&pair.prompt_id)
            .ok_or_else(|| contract_err!("pair references unknown task {}", pair.prompt_id))?;
        let chosen = log_prob(policy, task, &pair.chosen)? - log_prob(reference, task, &pair.chosen)?;
        let rejected =
            log_prob(policy, task, &pair.rejected)? - log_prob(reference, task, &pair.rejected)?;
        margins.push(chosen - rejected);
    }
    Ok(margins)
}

fn dpo_loss(margins: &[f64], beta: f64) -> f64 {
    if margins.is_empty() {
        return 0.0;
    }
    margins.iter().map(|&m| -ln(sigmoid(beta * m))).sum::<f64>() / margins.len() as f64
}

/// DPO on preference pairs against a frozen copy of the incoming policy.
/// Minimizes `-log sigmoid(beta * margin)` by full-batch gradient descent.
/// An empty pair set is a no-op flagged in the report.
pub fn dpo_train<P: TabularPolicy>(
    policy: &mut P,
    tasks: &[Task],
    pairs: &[PreferencePair],
    beta: f64,
    epochs: usize,
    lr: f64,
) -> Result<DpoReport> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(config_err!("beta must be positive"));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(config_err!("lr must be positive"));
    }
    crate::tasks::validate_suite(tasks)?;
    let tasks_by_id: BTreeMap<&TaskId, &Task> = tasks.iter().map(|t| (t.id(), t)).collect();

    if pairs.is_empty() {
        return Ok(DpoReport {
            pairs: 0,
            empty: true,
            initial_loss: 0.0,
            final_loss: 0.0,
            margins_before: Vec::new(),
            margins_after: Vec::new(),
            beta,
            epochs,
            lr,
        });
    }

    let reference = policy.clone();
    let margins_before = dpo_margins(policy, &reference, &tasks_by_id, pairs)?;
    let initial_loss = dpo_loss(&margins_before, beta);

    let scale = lr / pairs.len() as f64;
    for _ in 0..epochs {
        let mut step = vec![0.0; policy.params().len()];
        for pair in pairs {
            let task = tasks_by_id[&pair.prompt_id];
            let margin = (log_prob(policy, task, &pair.chosen)?
                - log_prob(&reference, task, &pair.chosen)?)
                - (log_prob(policy, task, &pair.rejected)?
                    - log_prob(&reference, task, &pair.rejected)?);
            // d(-ln sigmoid(beta m))/dm = -beta * sigmoid(-beta m); descend.
            let coeff = beta * sigmoid(-beta * margin);
            let g_chosen = grad_log_prob(policy, task, &pair.chosen)?;
            let g_rejected = grad_log_prob(policy, task, &pair.rejected)?;
            for ((s, gc), gr) in step.iter_mut().zip(&g_chosen).zip(&g_rejected) {
                *s += scale * coeff * (gc - gr);
            }
        }
        for (p, s) in policy.params_mut().iter_mut().zip(&step) {
            *p += s;
        }
    }

    let margins_after = dpo_margins(policy, &reference, &tasks_by_id, pairs)?;
    let final_loss = dpo_loss(&margins_after, beta);
    Ok(DpoReport {
        pairs: pairs.len(),
        empty: false,
        initial_loss,
        final_loss,
        margins_before,
        margins_after,
        beta,
        epochs,
        lr,
    })
}

/// Probability of the exact trajectory under the policy (used by SFT tests).
pub fn trajectory_probability<P: TabularPolicy>(
    policy: &P,
    task: &Task,
    traj: &Trajectory,
) -> Result<f64> {
    Ok(exp(log_prob(policy, task, traj)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ChainPolicy, MenuPolicy};
    use crate::rl::sample_group;
    use crate::shaping::ShapingConfig;
    use crate::tasks::{ChainSuiteSpec, ChainTask, LevelSpec, MenuResponse, MenuTask, Weighting};

    fn chain_suite() -> Vec<Task> {
        crate::tasks::generate_task_suite(&ChainSuiteSpec {
            seed: 11,
            num_answers: 2,
            max_think: 8,
            levels: vec![
                LevelSpec { min_think: 1, count: 2 },
                LevelSpec { min_think: 3, count: 2 },
            ],
            weighting: Weighting::Uniform,
        })
        .unwrap()
    }

    #[test]
    fn unbinding_budget_equals_plain_evaluation() {
        let tasks = chain_suite();
        let policy = ChainPolicy::with_think_bias(&tasks, 1.0).unwrap();
        let capped = cutoff_eval(&policy, &tasks, 8 + 2, 64, 0.6, 9, &CutoffOptions::default())
            .unwrap();
        let huge = cutoff_eval(&policy, &tasks, u32::MAX, 64, 0.6, 9, &CutoffOptions::default())
            .unwrap();
        assert_eq!(capped, huge, "budget >= max_think + 2 never binds");
        let plain = crate::eval::pass_rate_at_k(&policy, &tasks, 64, 0.6, 9).unwrap();
        assert_eq!(huge.accuracy, plain.accuracy);
        assert_eq!(huge.mean_len, plain.mean_tokens);
    }

    #[test]
    fn budget_two_fails_every_thinking_task() {
        let tasks = chain_suite(); // all tasks have min_think >= 1
        let policy = ChainPolicy::uniform(&tasks).unwrap();
        let res = cutoff_eval(&policy, &tasks, 2, 32, 1.0, 0, &CutoffOptions::default()).unwrap();
        assert_eq!(res.accuracy, 0.0, "no room to think");
    }

    #[test]
    fn cutoff_accuracy_is_nondecreasing_in_budget() {
        let tasks = chain_suite();
        let policy = ChainPolicy::with_think_bias(&tasks, 2.0).unwrap();
        let mut last = -1.0;
        for budget in [3, 4, 6, 8, 12, 32] {
            let res =
                cutoff_eval(&policy, &tasks, budget, 48, 1.0, 5, &CutoffOptions::default())
                    .unwrap();
            assert!(
                res.accuracy >= last,
                "accuracy dropped from {last} to {} at budget {budget}",
                res.accuracy
            );
            last = res.accuracy;
        }
    }

    #[test]
    fn sft_improves_shortest_correct_probability() {
        let tasks = vec![Task::Menu(MenuTask {
            id: "m0".into(),
            responses: vec![
                MenuResponse { token_length: 4, is_correct: true },
                MenuResponse { token_length: 7, is_correct: true },
                MenuResponse { token_length: 2, is_correct: false },
            ],
            weight: 1.0,
        })];
        let mut policy = MenuPolicy::uniform(&tasks).unwrap();
        let report = rejection_sft(&mut policy, &tasks, 8, 50, 0.05, 3).unwrap();
        assert_eq!(report.targets.len(), 1);
        assert!(report.skipped.is_empty());
        let t = &report.targets[0];
        assert!(t.logprob_after > t.logprob_before);
        // The kept target is never an incorrect response: length 2 is the
        // shortest overall but incorrect, so the target must be length 4.
        assert_eq!(t.target_length, 4);
    }

    #[test]
    fn sft_step_vanishes_once_targets_saturate() {
        // A policy already deterministic on its shortest-correct targets has
        // near-zero cross-entropy gradients, so one more step barely moves it.
        let tasks = vec![Task::Menu(MenuTask {
            id: "m0".into(),
            responses: vec![
                MenuResponse { token_length: 4, is_correct: true },
                MenuResponse { token_length: 7, is_correct: true },
            ],
            weight: 1.0,
        })];
        let mut policy = MenuPolicy::uniform(&tasks).unwrap();
        policy.params_mut()[0] = 40.0; // saturated on the shortest correct
        let before = policy.params().to_vec();
        rejection_sft(&mut policy, &tasks, 8, 1, 0.05, 3).unwrap();
        let max_move = policy
            .params()
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_move < 1e-6, "saturated target moved parameters by {max_move}");
    }

    #[test]
    fn sft_skips_tasks_without_correct_samples() {
        // min_think = 8 with a uniform policy: a correct sample in 8 draws is
        // essentially impossible, so the task lands in `skipped`.
        let tasks = vec![Task::Chain(ChainTask {
            id: "hard".into(),
            num_answers: 4,
            gold_answer: 0,
            min_think: 8,
            max_think: 8,
            weight: 1.0,
        })];
        let mut policy = ChainPolicy::uniform(&tasks).unwrap();
        let before = policy.params().to_vec();
        let report = rejection_sft(&mut policy, &tasks, 8, 10, 0.05, 0).unwrap();
        assert!(report.targets.is_empty());
        assert_eq!(report.skipped, vec![TaskId::from("hard")]);
        assert_eq!(policy.params(), &before[..], "nothing to train on");
    }

    fn paired_groups(tasks: &[Task], policy: &ChainPolicy) -> Vec<RolloutGroup> {
        let shaping = ShapingConfig::new(0.2).unwrap();
        let mut groups = Vec::new();
        for (i, task) in tasks.iter().enumerate() {
            let mut rng = derive_rng(31, Stream::Baseline, i as u64, 1);
            let trajs = sample_group(policy, task, 8, 1.0, &mut rng).unwrap();
            groups.push(RolloutGroup::build(trajs, &shaping).unwrap());
        }
        groups
    }

    #[test]
    fn preference_pairs_are_correct_and_ordered() {
        let tasks = chain_suite();
        let policy = ChainPolicy::with_think_bias(&tasks, 1.5).unwrap();
        let groups = paired_groups(&tasks, &policy);
        let pairs = build_preference_pairs(&groups);
        assert!(!pairs.is_empty());
        for pair in &pairs {
            assert!(pair.chosen.is_correct && pair.rejected.is_correct);
            assert!(pair.chosen.length <= pair.rejected.length);
        }
    }

    #[test]
    fn dpo_starts_at_ln2_and_improves_margins() {
        let tasks = chain_suite();
        let mut policy = ChainPolicy::with_think_bias(&tasks, 1.5).unwrap();
        let groups = paired_groups(&tasks, &policy);
        let pairs = build_preference_pairs(&groups);
        assert!(pairs.len() >= 2);
        let report = dpo_train(&mut policy, &tasks, &pairs, 0.1, 80, 0.05).unwrap();
        assert!((report.initial_loss - crate::math::ln(2.0)).abs() < 1e-9);
        assert!(report.final_loss < report.initial_loss);
        for (b, a) in report.margins_before.iter().zip(&report.margins_after) {
            assert!(a > b, "implicit margin must increase on training pairs");
        }
    }

    #[test]
    fn dpo_gradient_vanishes_as_beta_shrinks() {
        let tasks = chain_suite();
        let base = ChainPolicy::with_think_bias(&tasks, 1.5).unwrap();
        let groups = paired_groups(&tasks, &base);
        let pairs = build_preference_pairs(&groups);
        let move_for = |beta: f64| {
            let mut policy = base.clone();
            dpo_train(&mut policy, &tasks, &pairs, beta, 1, 0.05).unwrap();
            policy
                .params()
                .iter()
                .zip(base.params())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        let big = move_for(0.5);
        let small = move_for(1e-4);
        assert!(small < big * 1e-2, "beta -> 0 flattens the loss ({small} vs {big})");
    }

    #[test]
    fn dpo_empty_pairs_is_a_flagged_no_op() {
        let tasks = chain_suite();
        let mut policy = ChainPolicy::uniform(&tasks).unwrap();
        let before = policy.params().to_vec();
        let report = dpo_train(&mut policy, &tasks, &[], 0.1, 10, 0.05).unwrap();
        assert!(report.empty);
        assert_eq!(policy.params(), &before[..]);
    }
}
