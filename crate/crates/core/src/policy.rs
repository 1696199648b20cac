//! Tabular softmax policies with exact log-probabilities, sampling, analytic
//! gradients and exact KL divergence.
//!
//! Both families keep their logits in one flat parameter vector, so gradient
//! tables, Adam moments and finite-difference checks all share the same
//! coordinate space. A [`StateRef`] identifies one softmax inside that vector.
//!
//! Temperature applies to sampling only. Log-probabilities, gradients and KL
//! terms always use the temperature-1 density: that is the density training
//! ratios are defined against, while evaluation may sample sharper.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::math::{exp, ln};
use crate::rng::{uniform, Rng};
use crate::tasks::{verify, Outcome, Task, TaskId, Trajectory};
use crate::{config_err, contract_err};

/// One softmax inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateRef {
    /// Offset of the state's first logit.
    pub offset: usize,
    /// Number of actions (logits) at this state.
    pub n_actions: usize,
    /// Action masked to probability zero, if any (THINK at the think cap).
    pub masked: Option<usize>,
}

/// One decision a trajectory took: which action at which state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub state: StateRef,
    pub action: usize,
}

/// Outcome of budget-limited sampling.
#[derive(Debug, Clone, PartialEq)]
pub enum BudgetedSample {
    Complete(Trajectory),
    /// Generation hit the token budget before EOS; scored 0 downstream.
    Truncated { emitted: u32 },
}

/// Exact population statistics of a policy on one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactStats {
    pub accuracy: f64,
    pub mean_length: f64,
}

/// A tabular softmax policy over a fixed task suite.
pub trait TabularPolicy: Clone {
    /// Flat logit vector.
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Decision sequence `(state, action)` the trajectory induces, or a
    /// contract error if the trajectory cannot be expressed under this
    /// policy's tables (unknown task, out-of-range indices).
    fn decisions(&self, task: &Task, traj: &Trajectory) -> Result<Vec<Decision>>;

    /// Sample one trajectory at the given temperature. Recorded logprobs use
    /// the sampling temperature.
    fn sample(&self, task: &Task, temperature: f64, rng: &mut Rng) -> Result<Trajectory>;

    /// Sample with generation truncated at `budget` tokens. The random draws
    /// are a prefix of what [`TabularPolicy::sample`] would consume, so
    /// raising the budget never changes tokens already emitted.
    fn sample_budgeted(
        &self,
        task: &Task,
        temperature: f64,
        budget: u32,
        rng: &mut Rng,
    ) -> Result<BudgetedSample>;

    /// Exact accuracy and expected response length at a temperature,
    /// computed by enumeration rather than sampling.
    fn exact_stats(&self, task: &Task, temperature: f64) -> Result<ExactStats>;
}

// ---------------------------------------------------------------------------
// State-level softmax helpers.
// ---------------------------------------------------------------------------

/// Write log-softmax(logits / temperature) into `out`; the masked action gets
/// `-inf`. `out` is cleared first.
fn log_softmax_into(logits: &[f64], temperature: f64, masked: Option<usize>, out: &mut Vec<f64>) {
    out.clear();
    let mut max = f64::NEG_INFINITY;
    for (i, &l) in logits.iter().enumerate() {
        if Some(i) == masked {
            continue;
        }
        let v = l / temperature;
        if v > max {
            max = v;
        }
    }
    let mut denom = 0.0;
    for (i, &l) in logits.iter().enumerate() {
        if Some(i) == masked {
            out.push(f64::NEG_INFINITY);
        } else {
            let v = l / temperature - max;
            denom += exp(v);
            out.push(v);
        }
    }
    let log_denom = ln(denom);
    for (i, v) in out.iter_mut().enumerate() {
        if Some(i) != masked {
            *v -= log_denom;
        }
    }
}

/// Log-softmax of a state at temperature 1 (the training density).
pub(crate) fn state_log_probs(params: &[f64], state: StateRef, out: &mut Vec<f64>) {
    log_softmax_into(
        &params[state.offset..state.offset + state.n_actions],
        1.0,
        state.masked,
        out,
    );
}

/// Draw an action index from log-probabilities with a single uniform draw.
fn draw_action(log_probs: &[f64], rng: &mut Rng) -> usize {
    let u = uniform(rng);
    let mut acc = 0.0;
    let mut last_valid = 0;
    for (i, &lp) in log_probs.iter().enumerate() {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        last_valid = i;
        acc += exp(lp);
        if u < acc {
            return i;
        }
    }
    // Rounding can leave acc marginally below 1; fall back to the last
    // unmasked action.
    last_valid
}

/// Accumulate `coeff * d(log pi(action | state))/d(logits)` into `grad`.
/// The softmax is evaluated at temperature 1.
pub(crate) fn add_scaled_logprob_grad(
    params: &[f64],
    decision: &Decision,
    coeff: f64,
    scratch: &mut Vec<f64>,
    grad: &mut [f64],
) {
    let state = decision.state;
    if Some(decision.action) == state.masked {
        // Probability-zero decision; the log-density is -inf there and no
        // finite gradient exists. Contribute nothing.
        return;
    }
    state_log_probs(params, state, scratch);
    for a in 0..state.n_actions {
        if Some(a) == state.masked {
            continue;
        }
        let p = exp(scratch[a]);
        let indicator = if a == decision.action { 1.0 } else { 0.0 };
        grad[state.offset + a] += coeff * (indicator - p);
    }
}

// ---------------------------------------------------------------------------
// Free operations generic over the policy family.
// ---------------------------------------------------------------------------

/// Exact log-probability of a trajectory at temperature 1.
///
/// A decision that is impossible under the mask yields `-inf` rather than an
/// error, flagging the trajectory as unrepresentable.
pub fn log_prob<P: TabularPolicy>(policy: &P, task: &Task, traj: &Trajectory) -> Result<f64> {
    let decisions = policy.decisions(task, traj)?;
    let mut scratch = Vec::new();
    let mut total = 0.0;
    for d in &decisions {
        if Some(d.action) == d.state.masked {
            return Ok(f64::NEG_INFINITY);
        }
        state_log_probs(policy.params(), d.state, &mut scratch);
        total += scratch[d.action];
    }
    Ok(total)
}

/// Analytic gradient of [`log_prob`] as a full-size table aligned with
/// `policy.params()`: at each visited state, `1{action taken} - p(action)`.
pub fn grad_log_prob<P: TabularPolicy>(
    policy: &P,
    task: &Task,
    traj: &Trajectory,
) -> Result<Vec<f64>> {
    let decisions = policy.decisions(task, traj)?;
    let mut grad = vec![0.0; policy.params().len()];
    let mut scratch = Vec::new();
    for d in &decisions {
        add_scaled_logprob_grad(policy.params(), d, 1.0, &mut scratch, &mut grad);
    }
    Ok(grad)
}

/// Per-decision log-probabilities at temperature 1.
pub fn decision_log_probs<P: TabularPolicy>(
    policy: &P,
    task: &Task,
    traj: &Trajectory,
) -> Result<Vec<f64>> {
    let decisions = policy.decisions(task, traj)?;
    let mut scratch = Vec::new();
    let mut out = Vec::with_capacity(decisions.len());
    for d in &decisions {
        if Some(d.action) == d.state.masked {
            out.push(f64::NEG_INFINITY);
            continue;
        }
        state_log_probs(policy.params(), d.state, &mut scratch);
        out.push(scratch[d.action]);
    }
    Ok(out)
}

/// Visitation counts of the states a batch of trajectories touches, keyed by
/// parameter offset.
pub(crate) type StateVisits = BTreeMap<usize, (StateRef, u64)>;

pub(crate) fn collect_visits<P: TabularPolicy>(
    policy: &P,
    items: &[(&Task, &Trajectory)],
) -> Result<StateVisits> {
    let mut visits = StateVisits::new();
    for (task, traj) in items {
        for d in policy.decisions(task, traj)? {
            visits
                .entry(d.state.offset)
                .and_modify(|e| e.1 += 1)
                .or_insert((d.state, 1));
        }
    }
    Ok(visits)
}

/// Exact categorical KL(new || old) per state, aggregated with the given
/// visitation weights. Optionally accumulates `coeff * dKL/d(new logits)`
/// into `grad`.
pub(crate) fn kl_over_visits(
    params_new: &[f64],
    params_old: &[f64],
    visits: &StateVisits,
    coeff: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let total: u64 = visits.values().map(|(_, c)| c).sum();
    if total == 0 {
        return 0.0;
    }
    let mut lp_new = Vec::new();
    let mut lp_old = Vec::new();
    let mut kl_sum = 0.0;
    for (state, count) in visits.values() {
        let weight = *count as f64 / total as f64;
        state_log_probs(params_new, *state, &mut lp_new);
        state_log_probs(params_old, *state, &mut lp_old);
        let mut kl_state = 0.0;
        for a in 0..state.n_actions {
            if Some(a) == state.masked {
                continue;
            }
            let p = exp(lp_new[a]);
            kl_state += p * (lp_new[a] - lp_old[a]);
        }
        kl_sum += weight * kl_state;
        if let Some(g) = grad.as_deref_mut() {
            for a in 0..state.n_actions {
                if Some(a) == state.masked {
                    continue;
                }
                let p = exp(lp_new[a]);
                g[state.offset + a] += coeff * weight * p * ((lp_new[a] - lp_old[a]) - kl_state);
            }
        }
    }
    kl_sum
}

/// KL(policy_p || policy_q) on one task, with per-state terms computed
/// exactly and visitation estimated from the given rollout batch.
pub fn kl_divergence<P: TabularPolicy>(
    policy_p: &P,
    policy_q: &P,
    task: &Task,
    batch: &[Trajectory],
) -> Result<f64> {
    if policy_p.params().len() != policy_q.params().len() {
        return Err(contract_err!("KL requires policies with identical tables"));
    }
    let items: Vec<(&Task, &Trajectory)> = batch.iter().map(|t| (task, t)).collect();
    let visits = collect_visits(policy_p, &items)?;
    Ok(kl_over_visits(policy_p.params(), policy_q.params(), &visits, 0.0, None))
}

// ---------------------------------------------------------------------------
// Menu policy.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
struct MenuEntry {
    id: TaskId,
    offset: usize,
    n_responses: usize,
}

/// Tabular multinomial policy over menu tasks: one logit per response.
#[derive(Debug, Clone, PartialEq)]
pub struct MenuPolicy {
    entries: Vec<MenuEntry>,
    index: BTreeMap<TaskId, usize>,
    params: Vec<f64>,
}

impl MenuPolicy {
    /// Uniform policy (all logits zero) over a menu suite.
    pub fn uniform(tasks: &[Task]) -> Result<Self> {
        let mut entries = Vec::with_capacity(tasks.len());
        let mut index = BTreeMap::new();
        let mut offset = 0;
        for task in tasks {
            let Task::Menu(menu) = task else {
                return Err(config_err!(
                    "menu policy requires menu tasks, got chain task {}",
                    task.id()
                ));
            };
            menu.validate()?;
            if index.insert(menu.id.clone(), entries.len()).is_some() {
                return Err(config_err!("duplicate task id {}", menu.id));
            }
            entries.push(MenuEntry {
                id: menu.id.clone(),
                offset,
                n_responses: menu.responses.len(),
            });
            offset += menu.responses.len();
        }
        if entries.is_empty() {
            return Err(config_err!("menu policy needs at least one task"));
        }
        Ok(MenuPolicy { entries, index, params: vec![0.0; offset] })
    }

    /// Rebuild a policy from per-task logit rows (checkpoint loading).
    pub fn from_parts(parts: Vec<(TaskId, Vec<f64>)>) -> Result<Self> {
        let mut entries = Vec::with_capacity(parts.len());
        let mut index = BTreeMap::new();
        let mut params = Vec::new();
        for (id, logits) in parts {
            if logits.is_empty() {
                return Err(config_err!("task {} has an empty logit row", id));
            }
            if logits.iter().any(|l| !l.is_finite()) {
                return Err(config_err!("task {} has non-finite logits", id));
            }
            if index.insert(id.clone(), entries.len()).is_some() {
                return Err(config_err!("duplicate task id {}", id));
            }
            entries.push(MenuEntry { id, offset: params.len(), n_responses: logits.len() });
            params.extend_from_slice(&logits);
        }
        if entries.is_empty() {
            return Err(config_err!("menu policy needs at least one task"));
        }
        Ok(MenuPolicy { entries, index, params })
    }

    fn entry(&self, id: &TaskId) -> Result<&MenuEntry> {
        self.index
            .get(id)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| contract_err!("task {} unknown to policy", id))
    }

    fn state(&self, entry: &MenuEntry) -> StateRef {
        StateRef { offset: entry.offset, n_actions: entry.n_responses, masked: None }
    }

    /// Per-response probabilities at the given temperature.
    pub fn distribution_at(&self, id: &TaskId, temperature: f64) -> Result<Vec<f64>> {
        let entry = self.entry(id)?;
        let mut lp = Vec::new();
        log_softmax_into(
            &self.params[entry.offset..entry.offset + entry.n_responses],
            temperature,
            None,
            &mut lp,
        );
        Ok(lp.iter().map(|&l| exp(l)).collect())
    }

    /// Per-response probabilities at temperature 1.
    pub fn distribution(&self, id: &TaskId) -> Result<Vec<f64>> {
        self.distribution_at(id, 1.0)
    }

    /// Set the task's logits to `ln(target)`, realizing the target
    /// multinomial exactly (up to rounding). Zero-probability entries get a
    /// logit low enough to underflow to zero mass.
    pub fn set_distribution(&mut self, id: &TaskId, target: &[f64]) -> Result<()> {
        let entry = self.entry(id)?.clone();
        if target.len() != entry.n_responses {
            return Err(contract_err!(
                "target distribution has {} entries, task {} has {}",
                target.len(),
                id,
                entry.n_responses
            ));
        }
        if target.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(config_err!("target distribution entries must lie in [0, 1]"));
        }
        let sum: f64 = target.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(config_err!("target distribution sums to {sum}, expected 1"));
        }
        for (a, &p) in target.iter().enumerate() {
            self.params[entry.offset + a] = ln(p.max(1e-300));
        }
        Ok(())
    }

    /// Iterate `(task id, logit row)` pairs (checkpoint saving).
    pub fn rows(&self) -> impl Iterator<Item = (&TaskId, &[f64])> {
        self.entries
            .iter()
            .map(|e| (&e.id, &self.params[e.offset..e.offset + e.n_responses]))
    }
}

impl TabularPolicy for MenuPolicy {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn decisions(&self, task: &Task, traj: &Trajectory) -> Result<Vec<Decision>> {
        let entry = self.entry(task.id())?;
        if task.id() != &traj.prompt_id {
            return Err(contract_err!(
                "trajectory for prompt {} used with task {}",
                traj.prompt_id,
                task.id()
            ));
        }
        let Outcome::Menu { response } = traj.outcome else {
            return Err(contract_err!("chain trajectory on menu task {}", task.id()));
        };
        if response >= entry.n_responses {
            return Err(contract_err!(
                "response index {} out of range for task {}",
                response,
                task.id()
            ));
        }
        Ok(vec![Decision { state: self.state(entry), action: response }])
    }

    fn sample(&self, task: &Task, temperature: f64, rng: &mut Rng) -> Result<Trajectory> {
        let Task::Menu(menu) = task else {
            return Err(contract_err!("menu policy cannot sample chain task {}", task.id()));
        };
        let entry = self.entry(&menu.id)?;
        let mut lp = Vec::new();
        log_softmax_into(
            &self.params[entry.offset..entry.offset + entry.n_responses],
            temperature,
            None,
            &mut lp,
        );
        let response = draw_action(&lp, rng);
        let mut traj = Trajectory {
            prompt_id: menu.id.clone(),
            outcome: Outcome::Menu { response },
            length: menu.responses[response].token_length,
            logprobs: vec![lp[response]],
            is_correct: false,
        };
        traj.is_correct = verify(task, &traj)?;
        Ok(traj)
    }

    fn sample_budgeted(
        &self,
        task: &Task,
        temperature: f64,
        budget: u32,
        rng: &mut Rng,
    ) -> Result<BudgetedSample> {
        let traj = self.sample(task, temperature, rng)?;
        if traj.length > budget {
            Ok(BudgetedSample::Truncated { emitted: budget })
        } else {
            Ok(BudgetedSample::Complete(traj))
        }
    }

    fn exact_stats(&self, task: &Task, temperature: f64) -> Result<ExactStats> {
        let Task::Menu(menu) = task else {
            return Err(contract_err!("menu policy cannot score chain task {}", task.id()));
        };
        let dist = self.distribution_at(&menu.id, temperature)?;
        let mut accuracy = 0.0;
        let mut mean_length = 0.0;
        for (p, r) in dist.iter().zip(&menu.responses) {
            if r.is_correct {
                accuracy += p;
            }
            mean_length += p * f64::from(r.token_length);
        }
        Ok(ExactStats { accuracy, mean_length })
    }
}

// ---------------------------------------------------------------------------
// Chain policy.
// ---------------------------------------------------------------------------

/// Action index of THINK within a chain state; answers follow at `1..=m`.
pub const THINK_ACTION: usize = 0;

#[derive(Debug, Clone, PartialEq)]
struct ChainEntry {
    id: TaskId,
    offset: usize,
    num_answers: usize,
    max_think: u32,
}

impl ChainEntry {
    fn actions(&self) -> usize {
        self.num_answers + 1
    }

    fn state(&self, thinks: u32) -> StateRef {
        StateRef {
            offset: self.offset + thinks as usize * self.actions(),
            n_actions: self.actions(),
            masked: (thinks == self.max_think).then_some(THINK_ACTION),
        }
    }
}

/// Tabular auto-regressive policy over chain tasks.
///
/// The state is the pair (task, think count): the minimal sufficient
/// statistic of the prefix for this family, which keeps the policy tabular
/// while remaining genuinely auto-regressive. At `thinks == max_think` the
/// THINK action is masked, forcing termination.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPolicy {
    entries: Vec<ChainEntry>,
    index: BTreeMap<TaskId, usize>,
    params: Vec<f64>,
    /// Sampling temperature used when callers do not override it.
    pub temperature: f64,
}

impl ChainPolicy {
    /// Uniform policy (all logits zero) over a chain suite.
    pub fn uniform(tasks: &[Task]) -> Result<Self> {
        Self::with_think_bias(tasks, 0.0)
    }

    /// Policy whose THINK logit starts at `bias` in every state. Positive
    /// bias yields a verbose starting policy, the tabular stand-in for a
    /// pretrained long-chain reasoning model.
    pub fn with_think_bias(tasks: &[Task], bias: f64) -> Result<Self> {
        Self::from_biases(tasks, bias, 0.0)
    }

    /// Verbose-and-accurate starting policy, parametrized by probabilities:
    /// at every state the policy thinks with probability `think_prob` and,
    /// conditioned on answering, picks the gold answer with probability
    /// `gold_prob`. This is the tabular stand-in for a pretrained reasoning
    /// model that already answers well but thinks at length regardless of
    /// difficulty.
    pub fn expert(tasks: &[Task], think_prob: f64, gold_prob: f64) -> Result<Self> {
        if !(think_prob > 0.0 && think_prob < 1.0) {
            return Err(config_err!("think_prob must lie in (0, 1)"));
        }
        if !(gold_prob > 0.0 && gold_prob < 1.0) {
            return Err(config_err!("gold_prob must lie in (0, 1)"));
        }
        let mut policy = Self::with_think_bias(tasks, 0.0)?;
        for task in tasks {
            let Task::Chain(chain) = task else { unreachable!("validated by with_think_bias") };
            let wrong = (chain.num_answers - 1) as f64;
            // Wrong-answer logits stay 0; solve for the gold and THINK
            // logits that realize the requested probabilities.
            let gold_logit = ln(gold_prob / (1.0 - gold_prob) * wrong);
            let answer_mass = exp(gold_logit) + wrong;
            let think_logit = ln(think_prob / (1.0 - think_prob) * answer_mass);
            let entry = policy.entry(&chain.id)?.clone();
            for thinks in 0..=entry.max_think {
                let state = entry.state(thinks);
                policy.params[state.offset + THINK_ACTION] = think_logit;
                policy.params[state.offset + 1 + chain.gold_answer] = gold_logit;
            }
        }
        Ok(policy)
    }

    fn from_biases(tasks: &[Task], think_bias: f64, answer_bias: f64) -> Result<Self> {
        let mut entries = Vec::with_capacity(tasks.len());
        let mut index = BTreeMap::new();
        let mut params = Vec::new();
        for task in tasks {
            let Task::Chain(chain) = task else {
                return Err(config_err!(
                    "chain policy requires chain tasks, got menu task {}",
                    task.id()
                ));
            };
            chain.validate()?;
            if index.insert(chain.id.clone(), entries.len()).is_some() {
                return Err(config_err!("duplicate task id {}", chain.id));
            }
            let entry = ChainEntry {
                id: chain.id.clone(),
                offset: params.len(),
                num_answers: chain.num_answers,
                max_think: chain.max_think,
            };
            let states = chain.max_think as usize + 1;
            for _ in 0..states {
                params.push(think_bias);
                for answer in 0..chain.num_answers {
                    params.push(if answer == chain.gold_answer { answer_bias } else { 0.0 });
                }
            }
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(config_err!("chain policy needs at least one task"));
        }
        Ok(ChainPolicy { entries, index, params, temperature: 1.0 })
    }

    /// Rebuild a policy from per-task state-major logit rows.
    pub fn from_parts(
        parts: Vec<(TaskId, usize, u32, Vec<f64>)>,
        temperature: f64,
    ) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(config_err!("temperature must be positive"));
        }
        let mut entries = Vec::with_capacity(parts.len());
        let mut index = BTreeMap::new();
        let mut params = Vec::new();
        for (id, num_answers, max_think, logits) in parts {
            let expected = (max_think as usize + 1) * (num_answers + 1);
            if num_answers < 2 {
                return Err(config_err!("task {}: num_answers must be >= 2", id));
            }
            if logits.len() != expected {
                return Err(config_err!(
                    "task {}: expected {} logits, got {}",
                    id,
                    expected,
                    logits.len()
                ));
            }
            if logits.iter().any(|l| !l.is_finite()) {
                return Err(config_err!("task {} has non-finite logits", id));
            }
            if index.insert(id.clone(), entries.len()).is_some() {
                return Err(config_err!("duplicate task id {}", id));
            }
            entries.push(ChainEntry { id, offset: params.len(), num_answers, max_think });
            params.extend_from_slice(&logits);
        }
        if entries.is_empty() {
            return Err(config_err!("chain policy needs at least one task"));
        }
        Ok(ChainPolicy { entries, index, params, temperature })
    }

    fn entry(&self, id: &TaskId) -> Result<&ChainEntry> {
        self.index
            .get(id)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| contract_err!("task {} unknown to policy", id))
    }

    fn check_task<'t>(&self, task: &'t Task) -> Result<(&ChainEntry, &'t crate::tasks::ChainTask)> {
        let Task::Chain(chain) = task else {
            return Err(contract_err!("chain policy cannot handle menu task {}", task.id()));
        };
        let entry = self.entry(&chain.id)?;
        if entry.num_answers != chain.num_answers || entry.max_think != chain.max_think {
            return Err(contract_err!(
                "task {} shape differs from the policy's table",
                chain.id
            ));
        }
        Ok((entry, chain))
    }

    /// Iterate `(id, num_answers, max_think, state-major logits)` rows.
    pub fn rows(&self) -> impl Iterator<Item = (&TaskId, usize, u32, &[f64])> {
        self.entries.iter().map(|e| {
            let len = (e.max_think as usize + 1) * e.actions();
            (&e.id, e.num_answers, e.max_think, &self.params[e.offset..e.offset + len])
        })
    }

    /// Probability of each action at `(task, thinks)` at the given
    /// temperature (THINK masked to zero at the cap).
    pub fn action_distribution(
        &self,
        id: &TaskId,
        thinks: u32,
        temperature: f64,
    ) -> Result<Vec<f64>> {
        let entry = self.entry(id)?;
        if thinks > entry.max_think {
            return Err(contract_err!("state {} beyond think cap of task {}", thinks, id));
        }
        let state = entry.state(thinks);
        let mut lp = Vec::new();
        log_softmax_into(
            &self.params[state.offset..state.offset + state.n_actions],
            temperature,
            state.masked,
            &mut lp,
        );
        Ok(lp.iter().map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { exp(l) }).collect())
    }

    /// Enumerate every trajectory of a task with its probability at the
    /// given temperature. There are `(max_think + 1) * num_answers` of them.
    pub fn enumerate(&self, task: &Task, temperature: f64) -> Result<Vec<(Trajectory, f64)>> {
        let (entry, chain) = self.check_task(task)?;
        let mut out = Vec::with_capacity((entry.max_think as usize + 1) * entry.num_answers);
        let mut lp = Vec::new();
        let mut think_prefix = 0.0; // log prob of having thought `k` times
        for k in 0..=entry.max_think {
            let state = entry.state(k);
            log_softmax_into(
                &self.params[state.offset..state.offset + state.n_actions],
                temperature,
                state.masked,
                &mut lp,
            );
            for answer in 0..entry.num_answers {
                let logp = think_prefix + lp[1 + answer];
                let mut traj = Trajectory {
                    prompt_id: chain.id.clone(),
                    outcome: Outcome::Chain { thinks: k, answer },
                    length: k + 2,
                    logprobs: Vec::new(),
                    is_correct: false,
                };
                traj.is_correct = verify(task, &traj)?;
                out.push((traj, exp(logp)));
            }
            think_prefix += lp[THINK_ACTION];
        }
        Ok(out)
    }
}

impl TabularPolicy for ChainPolicy {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn decisions(&self, task: &Task, traj: &Trajectory) -> Result<Vec<Decision>> {
        let (entry, chain) = self.check_task(task)?;
        if chain.id != traj.prompt_id {
            return Err(contract_err!(
                "trajectory for prompt {} used with task {}",
                traj.prompt_id,
                chain.id
            ));
        }
        let Outcome::Chain { thinks, answer } = traj.outcome else {
            return Err(contract_err!("menu trajectory on chain task {}", chain.id));
        };
        if thinks > entry.max_think {
            return Err(contract_err!(
                "trajectory thinks {} exceed the cap {} of task {}",
                thinks,
                entry.max_think,
                chain.id
            ));
        }
        if answer >= entry.num_answers {
            return Err(contract_err!(
                "answer index {} out of range for task {}",
                answer,
                chain.id
            ));
        }
        let mut out = Vec::with_capacity(thinks as usize + 1);
        for k in 0..thinks {
            out.push(Decision { state: entry.state(k), action: THINK_ACTION });
        }
        out.push(Decision { state: entry.state(thinks), action: 1 + answer });
        Ok(out)
    }

    fn sample(&self, task: &Task, temperature: f64, rng: &mut Rng) -> Result<Trajectory> {
        match self.sample_budgeted(task, temperature, u32::MAX, rng)? {
            BudgetedSample::Complete(traj) => Ok(traj),
            BudgetedSample::Truncated { .. } => {
                unreachable!("unbudgeted sampling cannot truncate")
            }
        }
    }

    fn sample_budgeted(
        &self,
        task: &Task,
        temperature: f64,
        budget: u32,
        rng: &mut Rng,
    ) -> Result<BudgetedSample> {
        let (entry, chain) = self.check_task(task)?;
        let mut lp = Vec::new();
        let mut logprobs = Vec::new();
        let mut thinks = 0u32;
        let mut emitted = 0u32;
        loop {
            if emitted >= budget {
                return Ok(BudgetedSample::Truncated { emitted });
            }
            let state = entry.state(thinks);
            log_softmax_into(
                &self.params[state.offset..state.offset + state.n_actions],
                temperature,
                state.masked,
                &mut lp,
            );
            let action = draw_action(&lp, rng);
            logprobs.push(lp[action]);
            if action == THINK_ACTION {
                thinks += 1;
                emitted += 1;
                continue;
            }
            // Answer token, then the deterministic EOS.
            emitted += 1;
            if emitted >= budget {
                return Ok(BudgetedSample::Truncated { emitted });
            }
            let answer = action - 1;
            let mut traj = Trajectory {
                prompt_id: chain.id.clone(),
                outcome: Outcome::Chain { thinks, answer },
                length: thinks + 2,
                logprobs,
                is_correct: false,
            };
            traj.is_correct = verify(task, &traj)?;
            return Ok(BudgetedSample::Complete(traj));
        }
    }

    fn exact_stats(&self, task: &Task, temperature: f64) -> Result<ExactStats> {
        let trajs = self.enumerate(task, temperature)?;
        let mut accuracy = 0.0;
        let mut mean_length = 0.0;
        for (traj, p) in &trajs {
            if traj.is_correct {
                accuracy += p;
            }
            mean_length += p * f64::from(traj.length);
        }
        Ok(ExactStats { accuracy, mean_length })
    }
}
