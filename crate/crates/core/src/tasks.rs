//! Synthetic task families and trajectories.
//!
//! Two families cover every claim the laboratory tests:
//!
//! - [`MenuTask`]: a prompt with a fixed menu of responses, each carrying a
//!   token length and a correctness flag. The policy picks one response in a
//!   single step, which makes the population-level theory exactly computable.
//! - [`ChainTask`]: an auto-regressive family where the policy emits THINK
//!   tokens before committing to one of `m` answers. A trajectory is correct
//!   only if the answer matches the gold index *and* enough thinking happened,
//!   so harder tasks (larger `min_think`) genuinely require longer chains.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::rng::{derive_rng, Stream};
use crate::{config_err, contract_err};
use rand_core::RngCore;

/// Prompt identifier, unique within a suite.
#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(transparent)]
pub struct TaskId(pub String);

impl TaskId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl core::fmt::Display for TaskId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        TaskId(String::from(s))
    }
}

/// One candidate response of a [`MenuTask`].
#[derive(Debug, Clone, PartialEq)]
pub struct MenuResponse {
    /// Token count of this response, at least 1.
    pub token_length: u32,
    pub is_correct: bool,
}

/// A prompt with a fixed menu of candidate responses.
#[derive(Debug, Clone, PartialEq)]
pub struct MenuTask {
    pub id: TaskId,
    pub responses: Vec<MenuResponse>,
    /// Nonnegative sampling weight under the prompt distribution.
    pub weight: f64,
}

impl MenuTask {
    /// Whether at least one response is correct (the coverage flag). Tasks
    /// without a correct response stay representable but are flagged.
    pub fn has_correct(&self) -> bool {
        self.responses.iter().any(|r| r.is_correct)
    }

    /// Indices of the correct responses.
    pub fn correct_indices(&self) -> Vec<usize> {
        self.responses
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_correct)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.responses.is_empty() {
            return Err(config_err!("menu task {}: responses must be non-empty", self.id));
        }
        if self.responses.iter().any(|r| r.token_length < 1) {
            return Err(config_err!("menu task {}: token lengths must be >= 1", self.id));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(config_err!("menu task {}: weight must be finite and >= 0", self.id));
        }
        Ok(())
    }
}

/// An auto-regressive task: think, then answer.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTask {
    pub id: TaskId,
    /// Number of candidate answers `m >= 2`.
    pub num_answers: usize,
    /// Gold answer index in `[0, num_answers)`.
    pub gold_answer: usize,
    /// Minimum think-token count for a correct trajectory (difficulty).
    pub min_think: u32,
    /// Hard cap on think tokens; the policy is forced to answer here.
    pub max_think: u32,
    /// Nonnegative sampling weight under the prompt distribution.
    pub weight: f64,
}

impl ChainTask {
    pub fn validate(&self) -> Result<()> {
        if self.num_answers < 2 {
            return Err(config_err!("chain task {}: num_answers must be >= 2", self.id));
        }
        if self.gold_answer >= self.num_answers {
            return Err(config_err!("chain task {}: gold_answer out of range", self.id));
        }
        if self.min_think > self.max_think {
            return Err(config_err!(
                "chain task {}: min_think {} exceeds max_think {}",
                self.id,
                self.min_think,
                self.max_think
            ));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(config_err!("chain task {}: weight must be finite and >= 0", self.id));
        }
        Ok(())
    }
}

/// A task from either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Menu(MenuTask),
    Chain(ChainTask),
}

impl Task {
    pub fn id(&self) -> &TaskId {
        match self {
            Task::Menu(t) => &t.id,
            Task::Chain(t) => &t.id,
        }
    }

    pub fn weight(&self) -> f64 {
        match self {
            Task::Menu(t) => t.weight,
            Task::Chain(t) => t.weight,
        }
    }

    /// Coverage flag: chain tasks always admit a correct trajectory once
    /// validated (`min_think <= max_think`); menu tasks may not.
    pub fn has_correct(&self) -> bool {
        match self {
            Task::Menu(t) => t.has_correct(),
            Task::Chain(_) => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Task::Menu(t) => t.validate(),
            Task::Chain(t) => t.validate(),
        }
    }
}

/// Validate a whole suite: per-task invariants, unique ids, positive total weight.
pub fn validate_suite(tasks: &[Task]) -> Result<()> {
    if tasks.is_empty() {
        return Err(config_err!("task suite is empty"));
    }
    let mut ids: Vec<&TaskId> = tasks.iter().map(Task::id).collect();
    ids.sort();
    for pair in ids.windows(2) {
        if pair[0] == pair[1] {
            return Err(config_err!("duplicate task id {}", pair[0]));
        }
    }
    let mut total = 0.0;
    for task in tasks {
        task.validate()?;
        total += task.weight();
    }
    if total <= 0.0 {
        return Err(config_err!("task suite has zero total weight"));
    }
    Ok(())
}

/// Token alphabet of the chain family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Think,
    Answer(usize),
    Eos,
}

/// What a trajectory did, per family.
///
/// For a chain task the token sequence is `THINK^thinks, ANSWER(answer), EOS`;
/// the EOS is emitted deterministically after the answer, so it carries no
/// decision. For a menu task the whole trajectory is one response choice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Menu { response: usize },
    Chain { thinks: u32, answer: usize },
}

/// A sampled response with its per-decision log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub prompt_id: TaskId,
    pub outcome: Outcome,
    /// Token count of the response: for chain tasks `thinks + 2` (answer and
    /// EOS included), for menu tasks the chosen response's `token_length`.
    pub length: u32,
    /// Log-probability of each decision at the sampling temperature. The
    /// deterministic EOS has probability 1 and is omitted.
    pub logprobs: Vec<f64>,
    pub is_correct: bool,
}

impl Trajectory {
    /// Number of policy decisions (menu: 1; chain: thinks + 1).
    pub fn decision_count(&self) -> usize {
        match self.outcome {
            Outcome::Menu { .. } => 1,
            Outcome::Chain { thinks, .. } => thinks as usize + 1,
        }
    }

    /// Sum of the recorded per-decision log-probabilities.
    pub fn recorded_log_prob(&self) -> f64 {
        self.logprobs.iter().sum()
    }

    /// Full token sequence for chain trajectories; `None` for menu ones.
    pub fn chain_tokens(&self) -> Option<Vec<Token>> {
        match self.outcome {
            Outcome::Menu { .. } => None,
            Outcome::Chain { thinks, answer } => {
                let mut toks = Vec::with_capacity(thinks as usize + 2);
                for _ in 0..thinks {
                    toks.push(Token::Think);
                }
                toks.push(Token::Answer(answer));
                toks.push(Token::Eos);
                Some(toks)
            }
        }
    }
}

/// Binary verifier: 1 iff the trajectory satisfies the task's correctness
/// rule. Pure and deterministic.
pub fn verify(task: &Task, traj: &Trajectory) -> Result<bool> {
    if task.id() != &traj.prompt_id {
        return Err(contract_err!(
            "trajectory for prompt {} verified against task {}",
            traj.prompt_id,
            task.id()
        ));
    }
    match (task, &traj.outcome) {
        (Task::Menu(t), Outcome::Menu { response }) => match t.responses.get(*response) {
            Some(r) => Ok(r.is_correct),
            None => Err(contract_err!(
                "menu task {} has no response index {}",
                t.id,
                response
            )),
        },
        (Task::Chain(t), Outcome::Chain { thinks, answer }) => {
            Ok(*answer == t.gold_answer && *thinks >= t.min_think && *thinks <= t.max_think)
        }
        _ => Err(contract_err!(
            "trajectory family does not match task {}",
            task.id()
        )),
    }
}

/// How `generate_task_suite` assigns prompt weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// All tasks weigh 1.
    Uniform,
    /// Weight grows with difficulty as `sqrt(m * (m+1)^min_think)`, the
    /// square root of the expected number of uniform-policy samples needed to
    /// hit a correct trajectory. Harder prompts are visited more often, which
    /// balances the exploration budget across difficulty levels.
    Exploration,
}

/// One difficulty level of a generated chain suite.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LevelSpec {
    pub min_think: u32,
    pub count: u32,
}

/// Specification for a generated chain-task suite.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChainSuiteSpec {
    pub seed: u64,
    pub num_answers: usize,
    pub max_think: u32,
    pub levels: Vec<LevelSpec>,
    pub weighting: Weighting,
}

/// Generate a chain-task suite mixing the requested difficulty levels.
/// Deterministic given the spec (gold answers come from the `Generator`
/// stream of the spec's seed).
pub fn generate_task_suite(spec: &ChainSuiteSpec) -> Result<Vec<Task>> {
    if spec.levels.is_empty() || spec.levels.iter().all(|l| l.count == 0) {
        return Err(config_err!("suite spec requests no tasks"));
    }
    if spec.num_answers < 2 {
        return Err(config_err!("suite spec: num_answers must be >= 2"));
    }
    for level in &spec.levels {
        if level.min_think > spec.max_think {
            return Err(config_err!(
                "suite spec: min_think {} exceeds max_think {}",
                level.min_think,
                spec.max_think
            ));
        }
    }
    let mut rng = derive_rng(spec.seed, Stream::Generator, 0, 0);
    let mut tasks = Vec::new();
    let mut idx = 0u32;
    for level in &spec.levels {
        for _ in 0..level.count {
            let gold = (rng.next_u64() % spec.num_answers as u64) as usize;
            let weight = match spec.weighting {
                Weighting::Uniform => 1.0,
                Weighting::Exploration => {
                    let m = spec.num_answers as f64;
                    crate::math::sqrt(m) * crate::math::exp(0.5 * f64::from(level.min_think) * crate::math::ln(m + 1.0))
                }
            };
            let task = ChainTask {
                id: TaskId(format!("chain{idx:03}-min{}", level.min_think)),
                num_answers: spec.num_answers,
                gold_answer: gold,
                min_think: level.min_think,
                max_think: spec.max_think,
                weight,
            };
            task.validate()?;
            tasks.push(Task::Chain(task));
            idx += 1;
        }
    }
    validate_suite(&tasks)?;
    Ok(tasks)
}

/// Specification for a generated menu-task suite.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MenuSuiteSpec {
    pub seed: u64,
    pub tasks: u32,
    pub min_responses: u32,
    pub max_responses: u32,
    /// Response token lengths are drawn uniformly from `[1, max_length]`.
    pub max_length: u32,
    /// Probability that a response is marked correct.
    pub correct_prob: f64,
    /// Force at least one correct response per task (coverage).
    pub ensure_coverage: bool,
}

/// Generate a random menu suite. Deterministic given the spec.
pub fn generate_menu_suite(spec: &MenuSuiteSpec) -> Result<Vec<Task>> {
    if spec.tasks == 0 {
        return Err(config_err!("suite spec requests no tasks"));
    }
    if spec.min_responses < 1 || spec.min_responses > spec.max_responses {
        return Err(config_err!("suite spec: invalid response count range"));
    }
    if spec.max_length < 1 {
        return Err(config_err!("suite spec: max_length must be >= 1"));
    }
    if !(0.0..=1.0).contains(&spec.correct_prob) {
        return Err(config_err!("suite spec: correct_prob must be in [0, 1]"));
    }
    let mut rng = derive_rng(spec.seed, Stream::Generator, 1, 0);
    let mut tasks = Vec::with_capacity(spec.tasks as usize);
    for idx in 0..spec.tasks {
        let span = u64::from(spec.max_responses - spec.min_responses + 1);
        let n = spec.min_responses + (rng.next_u64() % span) as u32;
        let mut responses = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let token_length = 1 + (rng.next_u64() % u64::from(spec.max_length)) as u32;
            let is_correct = crate::rng::uniform(&mut rng) < spec.correct_prob;
            responses.push(MenuResponse { token_length, is_correct });
        }
        if spec.ensure_coverage && !responses.iter().any(|r| r.is_correct) {
            let fix = (rng.next_u64() % u64::from(n)) as usize;
            responses[fix].is_correct = true;
        }
        let task = MenuTask {
            id: TaskId(format!("menu{idx:03}")),
            responses,
            weight: 1.0,
        };
        task.validate()?;
        tasks.push(Task::Menu(task));
    }
    validate_suite(&tasks)?;
    Ok(tasks)
}
