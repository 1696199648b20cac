//! The optimization engine: RLOO and group-normalized advantages, the PPO
//! clipped surrogate with sequence-level advantages broadcast to tokens, a
//! KL penalty against the frozen pre-iteration policy, Adam, and the
//! training loop.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::math::{exp, mean, population_std, sqrt};
use crate::policy::{
    add_scaled_logprob_grad, collect_visits, kl_over_visits, state_log_probs, StateVisits,
    TabularPolicy,
};
use crate::rng::{derive_rng, uniform, Rng, Stream};
use crate::shaping::{group_stats, shaped_reward, GroupStats, ShapingConfig, DEFAULT_STD_FLOOR};
use crate::tasks::{Task, TaskId, Trajectory};
use crate::{config_err, contract_err, Error};

/// How per-group advantages are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// Leave-one-out baseline subtraction.
    Rloo,
    /// Mean/std standardization of the group rewards.
    Normalized,
}

impl core::fmt::Display for AdvantageMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            AdvantageMode::Rloo => f.write_str("rloo"),
            AdvantageMode::Normalized => f.write_str("normalized"),
        }
    }
}

/// All RL hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Length-penalty strength in `[0, 1)`.
    pub alpha: f64,
    /// Rollouts sampled per prompt.
    pub n_rollouts: usize,
    /// Prompts drawn (with replacement, weight-proportional) per iteration.
    pub prompts_per_iter: usize,
    /// Gradient steps per iteration; the iteration's trajectories are split
    /// evenly into this many microbatches in sampling order.
    pub grad_steps_per_iter: usize,
    /// PPO clip width.
    pub clip_eps: f64,
    /// Coefficient of the KL penalty against the pre-iteration policy.
    pub kl_coef: f64,
    /// Adam learning rate.
    pub lr: f64,
    pub iterations: u32,
    pub seed: u64,
    pub advantage_mode: AdvantageMode,
    /// Spread floor of the length feature.
    pub std_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.0,
            n_rollouts: 8,
            prompts_per_iter: 32,
            grad_steps_per_iter: 2,
            clip_eps: 0.2,
            kl_coef: 1e-3,
            lr: 0.05,
            iterations: 200,
            seed: 0,
            advantage_mode: AdvantageMode::Rloo,
            std_floor: DEFAULT_STD_FLOOR,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.shaping()?;
        if self.n_rollouts < 2 {
            return Err(config_err!("n_rollouts must be >= 2 (leave-one-out needs a peer)"));
        }
        if self.prompts_per_iter == 0 {
            return Err(config_err!("prompts_per_iter must be positive"));
        }
        if self.grad_steps_per_iter == 0 {
            return Err(config_err!("grad_steps_per_iter must be positive"));
        }
        if self.grad_steps_per_iter > self.prompts_per_iter * self.n_rollouts {
            return Err(config_err!("more gradient steps than trajectories per iteration"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(config_err!("clip_eps must lie in (0, 1), got {}", self.clip_eps));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(config_err!("kl_coef must be finite and >= 0"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err!("lr must be positive"));
        }
        Ok(())
    }

    pub fn shaping(&self) -> Result<ShapingConfig> {
        let cfg = ShapingConfig { alpha: self.alpha, std_floor: self.std_floor };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The `n` trajectories sampled for one prompt, with shaped rewards and the
/// group's length statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub prompt_id: TaskId,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub stats: GroupStats,
}

impl RolloutGroup {
    /// Compute stats and shaped rewards for a sampled group.
    pub fn build(trajectories: Vec<Trajectory>, shaping: &ShapingConfig) -> Result<RolloutGroup> {
        let stats = group_stats(&trajectories)?;
        let mut rewards = Vec::with_capacity(trajectories.len());
        for traj in &trajectories {
            rewards.push(shaped_reward(traj, &stats, shaping)?);
        }
        Ok(RolloutGroup {
            prompt_id: trajectories[0].prompt_id.clone(),
            trajectories,
            rewards,
            stats,
        })
    }

    pub fn advantages(&self, mode: AdvantageMode) -> Result<Vec<f64>> {
        match mode {
            AdvantageMode::Rloo => rloo_advantages(&self.rewards),
            AdvantageMode::Normalized => Ok(normalized_advantages(&self.rewards)),
        }
    }
}

/// REINFORCE leave-one-out advantages: each reward minus the mean of its
/// peers. The output sums to zero and ignores constant shifts.
pub fn rloo_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let n = rewards.len();
    if n < 2 {
        return Err(contract_err!("RLOO needs at least 2 rollouts, got {n}"));
    }
    let total: f64 = rewards.iter().sum();
    let scale = 1.0 / (n as f64 - 1.0);
    Ok(rewards.iter().map(|&r| r - (total - r) * scale).collect())
}

/// Group-standardized advantages `(r - mean) / std` with population std.
/// A spread below 1e-12 yields all zeros.
pub fn normalized_advantages(rewards: &[f64]) -> Vec<f64> {
    let Some(m) = mean(rewards) else {
        return Vec::new();
    };
    let std = population_std(rewards, m).unwrap_or(0.0);
    if std < 1e-12 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|&r| (r - m) / std).collect()
}

/// Ratio exponents are clamped here; exp(60) is far outside any clip window,
/// so the surrogate's value and subgradient are unaffected.
const MAX_RATIO_EXPONENT: f64 = 60.0;

/// Accumulate one trajectory's clipped-surrogate terms.
///
/// Per decision `t`: ratio `f_t = exp(new_t - old_t)`, term
/// `min(f_t * A, clip(f_t, 1 - eps, 1 + eps) * A)`. Every token contributes
/// `-token_weight * term` to the loss; the caller picks the weight (1/T for
/// the per-trajectory surrogate, 1/total-batch-tokens inside the trainer).
/// The gradient follows the standard subgradient convention: zero through an
/// active clip.
fn ppo_accumulate<P: TabularPolicy>(
    policy: &P,
    task: &Task,
    traj: &Trajectory,
    advantage: f64,
    old_logprobs: &[f64],
    clip_eps: f64,
    token_weight: f64,
    scratch: &mut Vec<f64>,
    grad: &mut [f64],
) -> Result<f64> {
    let decisions = policy.decisions(task, traj)?;
    if decisions.len() != old_logprobs.len() {
        return Err(contract_err!(
            "trajectory has {} decisions but {} old log-probabilities",
            decisions.len(),
            old_logprobs.len()
        ));
    }
    let mut loss = 0.0;
    for (d, &old_lp) in decisions.iter().zip(old_logprobs) {
        state_log_probs(policy.params(), d.state, scratch);
        let new_lp = scratch[d.action];
        let ratio = exp((new_lp - old_lp).clamp(-MAX_RATIO_EXPONENT, MAX_RATIO_EXPONENT));
        let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
        let unclipped_term = ratio * advantage;
        let clipped_term = clipped * advantage;
        let term = unclipped_term.min(clipped_term);
        loss -= token_weight * term;
        if unclipped_term <= clipped_term {
            // d(ratio * A)/d(new_lp) = ratio * A; the loss negates it.
            add_scaled_logprob_grad(
                policy.params(),
                d,
                -token_weight * unclipped_term,
                scratch,
                grad,
            );
        }
    }
    Ok(loss)
}

/// PPO clipped-surrogate loss and gradient for one trajectory, with the
/// sequence-level advantage broadcast to every token.
///
/// `old_logprobs` are the per-decision log-probabilities recorded at sampling
/// time under the temperature-1 density.
pub fn ppo_surrogate<P: TabularPolicy>(
    policy: &P,
    task: &Task,
    traj: &Trajectory,
    advantage: f64,
    old_logprobs: &[f64],
    clip_eps: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(clip_eps > 0.0 && clip_eps < 1.0) {
        return Err(config_err!("clip_eps must lie in (0, 1), got {clip_eps}"));
    }
    let mut grad = vec![0.0; policy.params().len()];
    let mut scratch = Vec::new();
    let token_weight = 1.0 / traj.decision_count().max(1) as f64;
    let loss = ppo_accumulate(
        policy,
        task,
        traj,
        advantage,
        old_logprobs,
        clip_eps,
        token_weight,
        &mut scratch,
        &mut grad,
    )?;
    Ok((loss, grad))
}

/// Adam optimizer state (beta1 = 0.9, beta2 = 0.999, eps = 1e-8, bias
/// correction on).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n_params: usize) -> Adam {
        Adam {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One descent step. Non-finite gradient entries abort with a diagnostic.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != grad.len() || params.len() != self.m.len() {
            return Err(contract_err!(
                "adam shapes differ: {} params, {} gradient entries, {} moments",
                params.len(),
                grad.len(),
                self.m.len()
            ));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(alloc::format!(
                "non-finite gradient entry {} at coordinate {i} (step {})",
                grad[i],
                self.t + 1
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (sqrt(v_hat) + self.eps);
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct IterLog {
    pub iteration: u32,
    /// Fraction of this iteration's rollouts that were correct.
    pub accuracy: f64,
    /// Mean response length over this iteration's rollouts.
    pub mean_len: f64,
    /// Mean shaped reward over this iteration's rollouts.
    pub mean_reward: f64,
    /// Exact KL(post-iteration || pre-iteration) over the iteration's
    /// visited states.
    pub kl: f64,
}

/// Sample `n` trajectories for one task at the given temperature.
pub fn sample_group<P: TabularPolicy>(
    policy: &P,
    task: &Task,
    n: usize,
    temperature: f64,
    rng: &mut Rng,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(policy.sample(task, temperature, rng)?);
    }
    Ok(out)
}

/// Pick an index proportional to the cumulative weights given a uniform draw.
fn weighted_pick(cumulative: &[f64], total: f64, u: f64) -> usize {
    let x = u * total;
    cumulative.partition_point(|&c| c <= x).min(cumulative.len() - 1)
}

/// Split `0..n` into `k` contiguous chunks whose sizes differ by at most one.
fn balanced_chunks(n: usize, k: usize) -> Vec<core::ops::Range<usize>> {
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Train a policy in place; returns the per-iteration log.
///
/// Each iteration samples `prompts_per_iter` prompts from the suite's weight
/// distribution, rolls out `n_rollouts` trajectories per prompt at
/// temperature 1, shapes rewards per group, computes advantages per
/// `advantage_mode`, and takes `grad_steps_per_iter` PPO steps over
/// contiguous microbatches with the penalty `kl_coef * KL(new || old)`
/// added to each microbatch loss, where `old` is the frozen pre-iteration
/// policy. Fully deterministic given `cfg.seed`; rollout streams are derived
/// per (iteration, prompt slot), so a parallel rollout driver would produce
/// the identical log.
pub fn train<P: TabularPolicy>(
    tasks: &[Task],
    policy: &mut P,
    cfg: &TrainConfig,
) -> Result<Vec<IterLog>> {
    cfg.validate()?;
    crate::tasks::validate_suite(tasks)?;
    let shaping = cfg.shaping()?;

    let mut cumulative = Vec::with_capacity(tasks.len());
    let mut total = 0.0;
    for task in tasks {
        total += task.weight();
        cumulative.push(total);
    }

    let mut adam = Adam::new(policy.params().len());
    let mut grad = vec![0.0; policy.params().len()];
    let mut scratch = Vec::new();
    let mut log = Vec::with_capacity(cfg.iterations as usize);

    for iteration in 0..cfg.iterations {
        let mut prompt_rng = derive_rng(cfg.seed, Stream::Prompts, u64::from(iteration), 0);
        let picks: Vec<usize> = (0..cfg.prompts_per_iter)
            .map(|_| weighted_pick(&cumulative, total, uniform(&mut prompt_rng)))
            .collect();

        // Rollout phase: one derived stream per prompt slot.
        let mut groups: Vec<(usize, RolloutGroup)> = Vec::with_capacity(picks.len());
        for (slot, &task_idx) in picks.iter().enumerate() {
            let mut rng = derive_rng(cfg.seed, Stream::Rollout, u64::from(iteration), slot as u64);
            let trajs = sample_group(policy, &tasks[task_idx], cfg.n_rollouts, 1.0, &mut rng)?;
            groups.push((task_idx, RolloutGroup::build(trajs, &shaping)?));
        }

        // Flatten to (task, group, trajectory, advantage) in sampling order.
        let mut items: Vec<(usize, usize, usize, f64)> = Vec::new();
        for (g_idx, (task_idx, group)) in groups.iter().enumerate() {
            let advs = group.advantages(cfg.advantage_mode)?;
            for (t_idx, adv) in advs.into_iter().enumerate() {
                items.push((*task_idx, g_idx, t_idx, adv));
            }
        }

        let old_policy = policy.clone();

        for chunk in balanced_chunks(items.len(), cfg.grad_steps_per_iter) {
            if chunk.is_empty() {
                continue;
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            // Token-level pooling: every token of the microbatch weighs the
            // same, so equal advantages leave the policy drift-free instead
            // of concentrating credit on short trajectories.
            let batch_tokens: usize = chunk
                .clone()
                .map(|flat| {
                    let (_, g_idx, t_idx, _) = items[flat];
                    groups[g_idx].1.trajectories[t_idx].decision_count()
                })
                .sum();
            let token_weight = 1.0 / batch_tokens.max(1) as f64;
            let mut visit_items: Vec<(&Task, &Trajectory)> = Vec::with_capacity(chunk.len());
            for flat in chunk {
                let (task_idx, g_idx, t_idx, advantage) = items[flat];
                let traj = &groups[g_idx].1.trajectories[t_idx];
                let task = &tasks[task_idx];
                ppo_accumulate(
                    policy,
                    task,
                    traj,
                    advantage,
                    &traj.logprobs,
                    cfg.clip_eps,
                    token_weight,
                    &mut scratch,
                    &mut grad,
                )?;
                visit_items.push((task, traj));
            }
            if cfg.kl_coef > 0.0 {
                let visits: StateVisits = collect_visits(policy, &visit_items)?;
                kl_over_visits(
                    policy.params(),
                    old_policy.params(),
                    &visits,
                    cfg.kl_coef,
                    Some(&mut grad),
                );
            }
            adam.step(policy.params_mut(), &grad, cfg.lr)?;
        }

        // Iteration metrics over every rollout of this iteration.
        let mut n_total = 0usize;
        let mut n_correct = 0usize;
        let mut len_sum = 0.0;
        let mut reward_sum = 0.0;
        let mut visit_items: Vec<(&Task, &Trajectory)> = Vec::new();
        for (task_idx, group) in &groups {
            for (traj, reward) in group.trajectories.iter().zip(&group.rewards) {
                n_total += 1;
                n_correct += usize::from(traj.is_correct);
                len_sum += f64::from(traj.length);
                reward_sum += reward;
                visit_items.push((&tasks[*task_idx], traj));
            }
        }
        let visits = collect_visits(policy, &visit_items)?;
        let kl = kl_over_visits(policy.params(), old_policy.params(), &visits, 0.0, None);
        log.push(IterLog {
            iteration,
            accuracy: n_correct as f64 / n_total as f64,
            mean_len: len_sum / n_total as f64,
            mean_reward: reward_sum / n_total as f64,
            kl,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ChainPolicy, MenuPolicy};
    use crate::tasks::{ChainTask, MenuResponse, MenuTask, Outcome};

    #[test]
    fn rloo_hand_values() {
        assert_eq!(rloo_advantages(&[1.0, 0.0]).unwrap(), vec![1.0, -1.0]);
        for a in rloo_advantages(&[0.7, 0.7, 0.7]).unwrap() {
            assert!(a.abs() < 1e-12, "constant rewards must yield zero advantages");
        }
        let adv = rloo_advantages(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        let expected = [2.0 / 3.0, 2.0 / 3.0, -2.0 / 3.0, -2.0 / 3.0];
        for (a, e) in adv.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
        assert!(rloo_advantages(&[1.0]).is_err());
    }

    #[test]
    fn normalized_degenerate_guard() {
        assert_eq!(normalized_advantages(&[0.3, 0.3, 0.3]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalized_max_is_alpha_independent_on_uniform_grids() {
        // Rewards uniformly spaced across [1 - alpha, 1].
        let max_at = |alpha: f64, n: usize| {
            let rewards: Vec<f64> = (0..n)
                .map(|i| 1.0 - alpha + alpha * i as f64 / (n - 1) as f64)
                .collect();
            let adv = normalized_advantages(&rewards);
            adv.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        };
        let reference = max_at(0.1, 101);
        assert!((max_at(0.4, 101) - reference).abs() < 1e-9);
        // Continuous-uniform limit: sqrt(3).
        let fine = max_at(0.2, 10_001);
        assert!((fine - sqrt(3.0)).abs() < 1e-3);
    }

    fn two_response_menu() -> Vec<Task> {
        vec![Task::Menu(MenuTask {
            id: "m0".into(),
            responses: vec![
                MenuResponse { token_length: 3, is_correct: true },
                MenuResponse { token_length: 9, is_correct: false },
            ],
            weight: 1.0,
        })]
    }

    fn menu_traj(response: usize, len: u32, lp: f64, correct: bool) -> Trajectory {
        Trajectory {
            prompt_id: "m0".into(),
            outcome: Outcome::Menu { response },
            length: len,
            logprobs: vec![lp],
            is_correct: correct,
        }
    }

    #[test]
    fn ppo_identity_ratio_reduces_to_advantage() {
        let tasks = two_response_menu();
        let policy = MenuPolicy::uniform(&tasks).unwrap();
        let traj = menu_traj(0, 3, crate::math::ln(0.5), true);
        let advantage = 0.8;
        let (loss, _) =
            ppo_surrogate(&policy, &tasks[0], &traj, advantage, &traj.logprobs, 0.2).unwrap();
        assert!((loss + advantage).abs() < 1e-12, "ratio 1 everywhere: loss = -A");
    }

    #[test]
    fn ppo_clip_formula_and_zero_advantage() {
        let tasks = two_response_menu();
        let mut policy = MenuPolicy::uniform(&tasks).unwrap();
        // New policy puts more mass on response 0 so the ratio exceeds 1.2.
        policy.params_mut()[0] = 1.0;
        let old_lp = crate::math::ln(0.5);
        let dist = policy.distribution(&"m0".into()).unwrap();
        let ratio = dist[0] / 0.5;
        assert!(ratio > 1.2);
        let traj = menu_traj(0, 3, old_lp, true);
        let advantage = 2.0;
        let (loss, grad) =
            ppo_surrogate(&policy, &tasks[0], &traj, advantage, &[old_lp], 0.2).unwrap();
        // Clip active: term = 1.2 * A and the gradient vanishes.
        assert!((loss + 1.2 * advantage).abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-15));

        let (loss0, grad0) = ppo_surrogate(&policy, &tasks[0], &traj, 0.0, &[old_lp], 0.2).unwrap();
        assert_eq!(loss0, 0.0);
        assert!(grad0.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ppo_rejects_length_mismatch() {
        let tasks = two_response_menu();
        let policy = MenuPolicy::uniform(&tasks).unwrap();
        let traj = menu_traj(0, 3, -0.7, true);
        let err = ppo_surrogate(&policy, &tasks[0], &traj, 1.0, &[-0.7, -0.7], 0.2).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn ppo_gradient_matches_finite_differences_when_unclipped() {
        let tasks = vec![Task::Chain(ChainTask {
            id: "c0".into(),
            num_answers: 2,
            gold_answer: 0,
            min_think: 1,
            max_think: 5,
            weight: 1.0,
        })];
        let mut policy = ChainPolicy::uniform(&tasks).unwrap();
        let mut rng = derive_rng(5, Stream::Eval, 0, 0);
        for trial in 0..10 {
            for p in policy.params_mut() {
                *p = (uniform(&mut rng) - 0.5) * 2.0;
            }
            let traj = policy.sample(&tasks[0], 1.0, &mut rng).unwrap();
            // Small perturbation keeps every ratio inside the clip window.
            let mut new_policy = policy.clone();
            for p in new_policy.params_mut() {
                *p += (uniform(&mut rng) - 0.5) * 0.02;
            }
            let advantage = uniform(&mut rng) * 2.0 - 1.0;
            let (_, grad) =
                ppo_surrogate(&new_policy, &tasks[0], &traj, advantage, &traj.logprobs, 0.2)
                    .unwrap();
            let h = 1e-5;
            for i in 0..new_policy.params().len() {
                let mut plus = new_policy.clone();
                plus.params_mut()[i] += h;
                let mut minus = new_policy.clone();
                minus.params_mut()[i] -= h;
                let (lp, _) =
                    ppo_surrogate(&plus, &tasks[0], &traj, advantage, &traj.logprobs, 0.2)
                        .unwrap();
                let (lm, _) =
                    ppo_surrogate(&minus, &tasks[0], &traj, advantage, &traj.logprobs, 0.2)
                        .unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let denom = grad[i].abs().max(fd.abs()).max(1e-6);
                assert!(
                    (grad[i] - fd).abs() / denom < 1e-4,
                    "trial {trial} coord {i}: analytic {} vs fd {}",
                    grad[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut adam = Adam::new(3);
        let mut params = [1.0, -2.0, 0.5];
        adam.step(&mut params, &[0.0, 0.0, 0.0], 0.1).unwrap();
        assert_eq!(params, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut adam = Adam::new(2);
        let mut params = [0.0, 0.0];
        adam.step(&mut params, &[0.3, -2.0], 0.01).unwrap();
        assert!((params[0] + 0.01).abs() < 1e-6);
        assert!((params[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn adam_is_deterministic() {
        let grad = [0.5, -0.25, 0.125];
        let run = || {
            let mut adam = Adam::new(3);
            let mut params = [0.0; 3];
            for _ in 0..10 {
                adam.step(&mut params, &grad, 0.05).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_aborts_on_non_finite_gradient() {
        let mut adam = Adam::new(1);
        let mut params = [0.0];
        let err = adam.step(&mut params, &[f64::NAN], 0.1).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn train_zero_iterations_is_a_no_op() {
        let tasks = two_response_menu();
        let mut policy = MenuPolicy::uniform(&tasks).unwrap();
        let before = policy.params().to_vec();
        let cfg = TrainConfig { iterations: 0, ..TrainConfig::default() };
        let log = train(&tasks, &mut policy, &cfg).unwrap();
        assert!(log.is_empty());
        assert_eq!(policy.params(), &before[..]);
    }

    #[test]
    fn train_is_bit_reproducible() {
        let tasks = two_response_menu();
        let cfg = TrainConfig {
            iterations: 5,
            prompts_per_iter: 4,
            n_rollouts: 4,
            seed: 42,
            alpha: 0.2,
            ..TrainConfig::default()
        };
        let mut a = MenuPolicy::uniform(&tasks).unwrap();
        let mut b = MenuPolicy::uniform(&tasks).unwrap();
        let log_a = train(&tasks, &mut a, &cfg).unwrap();
        let log_b = train(&tasks, &mut b, &cfg).unwrap();
        assert_eq!(log_a, log_b);
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn train_learns_a_one_correct_menu() {
        let tasks = vec![Task::Menu(MenuTask {
            id: "m0".into(),
            responses: vec![
                MenuResponse { token_length: 4, is_correct: false },
                MenuResponse { token_length: 5, is_correct: true },
                MenuResponse { token_length: 6, is_correct: false },
                MenuResponse { token_length: 7, is_correct: false },
            ],
            weight: 1.0,
        })];
        let mut policy = MenuPolicy::uniform(&tasks).unwrap();
        let cfg = TrainConfig {
            iterations: 60,
            prompts_per_iter: 8,
            seed: 1,
            lr: 0.1,
            ..TrainConfig::default()
        };
        let log = train(&tasks, &mut policy, &cfg).unwrap();
        assert_eq!(log.len(), 60);
        let dist = policy.distribution(&"m0".into()).unwrap();
        assert!(dist[1] > 0.9, "plain RL should lock onto the correct response, got {dist:?}");
        for row in &log {
            assert!((0.0..=1.0).contains(&row.accuracy));
            assert!(row.mean_len >= 2.0);
        }
    }

    proptest::proptest! {
        /// RLOO advantages sum to zero and are shift-invariant.
        #[test]
        fn rloo_zero_sum_and_shift_invariance(
            rewards in proptest::collection::vec(0.0f64..1.0, 2..16),
            shift in -5.0f64..5.0,
        ) {
            let adv = rloo_advantages(&rewards).unwrap();
            let sum: f64 = adv.iter().sum();
            proptest::prop_assert!(sum.abs() < 1e-9);
            let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
            let adv2 = rloo_advantages(&shifted).unwrap();
            for (a, b) in adv.iter().zip(&adv2) {
                proptest::prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
