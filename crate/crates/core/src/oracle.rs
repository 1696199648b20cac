//! Exact population-level analysis of menu suites.
//!
//! Because the shaped objective is linear in the per-task response
//! distribution, its population maximizer is a vertex of the simplex: a
//! point mass on the best-scoring response. The oracle computes those
//! maximizers in closed form, which gives trainer convergence tests an
//! analytic ground truth, and lets the theory be checked both ways (support
//! never touches incorrect responses whenever a correct one exists, and
//! accuracy is preserved for every penalty strength).

use alloc::vec;
use alloc::vec::Vec;

use crate::contract_err;
use crate::error::Result;
use crate::policy::MenuPolicy;
use crate::shaping::{length_feature, GroupStats, ShapingConfig};
use crate::tasks::{MenuResponse, MenuTask, Task, TaskId};

/// The maximizer's behavior on one task.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TaskSolution {
    pub id: TaskId,
    /// Optimal distribution over the task's responses.
    pub distribution: Vec<f64>,
    /// Response indices carrying probability above 1e-9.
    pub support: Vec<usize>,
    /// The task's contribution to the objective under the maximizer.
    pub objective: f64,
    /// Coverage flag of the task.
    pub has_correct: bool,
}

/// A population-level maximizer across a suite.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PopulationSolution {
    pub per_task: Vec<TaskSolution>,
    /// Weighted accuracy of the maximizer.
    pub accuracy: f64,
    /// Weighted objective value.
    pub expected_objective: f64,
}

const SUPPORT_EPS: f64 = 1e-9;

fn menu_tasks(tasks: &[Task]) -> Result<Vec<&MenuTask>> {
    tasks
        .iter()
        .map(|t| match t {
            Task::Menu(m) => Ok(m),
            Task::Chain(_) => {
                Err(contract_err!("oracle operates on menu tasks; {} is a chain task", t.id()))
            }
        })
        .collect()
}

fn normalized_weights(tasks: &[&MenuTask]) -> Result<Vec<f64>> {
    let total: f64 = tasks.iter().map(|t| t.weight).sum();
    if total <= 0.0 {
        return Err(contract_err!("menu suite has zero total weight"));
    }
    Ok(tasks.iter().map(|t| t.weight / total).collect())
}

fn support_of(distribution: &[f64]) -> Vec<usize> {
    distribution
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > SUPPORT_EPS)
        .map(|(i, _)| i)
        .collect()
}

/// Maximize plain accuracy: any distribution supported on the correct set is
/// optimal; the canonical output is uniform over it. Tasks without a correct
/// response keep the uniform distribution (everything scores zero) and are
/// flagged.
pub fn maximize_accuracy(tasks: &[Task]) -> Result<PopulationSolution> {
    let menus = menu_tasks(tasks)?;
    let weights = normalized_weights(&menus)?;
    let mut per_task = Vec::with_capacity(menus.len());
    let mut accuracy = 0.0;
    let mut expected_objective = 0.0;
    for (task, &w) in menus.iter().zip(&weights) {
        let correct = task.correct_indices();
        let n = task.responses.len();
        let (distribution, objective) = if correct.is_empty() {
            (vec![1.0 / n as f64; n], 0.0)
        } else {
            let mut dist = vec![0.0; n];
            let share = 1.0 / correct.len() as f64;
            for &i in &correct {
                dist[i] = share;
            }
            (dist, 1.0)
        };
        accuracy += w * objective;
        expected_objective += w * objective;
        per_task.push(TaskSolution {
            id: task.id.clone(),
            support: support_of(&distribution),
            distribution,
            objective,
            has_correct: !correct.is_empty(),
        });
    }
    Ok(PopulationSolution { per_task, accuracy, expected_objective })
}

/// Population-level length statistics of a task's correct set, the analog of
/// rollout-estimated group statistics.
pub fn population_stats(task: &MenuTask) -> GroupStats {
    let lengths: Vec<f64> = task
        .responses
        .iter()
        .filter(|r| r.is_correct)
        .map(|r| f64::from(r.token_length))
        .collect();
    GroupStats::from_correct_lengths(&lengths)
}

/// Maximize the shaped objective with the default score
/// `g(y) = 1 - alpha * f(len(y))` on correct responses (and 0 via the
/// verifier gate on incorrect ones).
pub fn maximize_shaped(tasks: &[Task], alpha: f64) -> Result<PopulationSolution> {
    let shaping = ShapingConfig::new(alpha)?;
    maximize_shaped_with(tasks, alpha, |task, response| {
        let stats = population_stats(task);
        1.0 - shaping.alpha * length_feature(f64::from(response.token_length), &stats, &shaping)
    })
}

/// Maximize the shaped objective with a caller-supplied positive score for
/// correct responses. The verifier gate stays: incorrect responses score 0
/// regardless of `g`. Any strictly positive, length-decreasing `g` has the
/// same argmax as the default, which is exactly what this hook lets tests
/// confirm.
pub fn maximize_shaped_with<F>(tasks: &[Task], alpha: f64, g: F) -> Result<PopulationSolution>
where
    F: Fn(&MenuTask, &MenuResponse) -> f64,
{
    ShapingConfig::new(alpha)?;
    let menus = menu_tasks(tasks)?;
    let weights = normalized_weights(&menus)?;
    let mut per_task = Vec::with_capacity(menus.len());
    let mut accuracy = 0.0;
    let mut expected_objective = 0.0;
    for (task, &w) in menus.iter().zip(&weights) {
        let scores: Vec<f64> = task
            .responses
            .iter()
            .map(|r| if r.is_correct { g(task, r) } else { 0.0 })
            .collect();
        // The objective is linear in the distribution, so a point mass on the
        // best response is optimal; ties break toward the lowest index.
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        let n = task.responses.len();
        let mut distribution = vec![0.0; n];
        distribution[best] = 1.0;
        let objective = scores[best];
        if task.responses[best].is_correct {
            accuracy += w;
        }
        expected_objective += w * objective;
        per_task.push(TaskSolution {
            id: task.id.clone(),
            support: support_of(&distribution),
            distribution,
            objective,
            has_correct: task.has_correct(),
        });
    }
    Ok(PopulationSolution { per_task, accuracy, expected_objective })
}

/// Comparison of a trained policy against the shaped maximizer.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PolicyCheck {
    pub pass: bool,
    pub tolerance: f64,
    pub trained_accuracy: f64,
    pub oracle_accuracy: f64,
    /// Weighted probability mass the policy puts on the oracle support.
    pub support_mass: f64,
    pub trained_mean_len: f64,
    pub oracle_mean_len: f64,
}

/// Check a trained menu policy against the shaped population maximizer:
/// pass iff its accuracy is within `tol` of the oracle's and it concentrates
/// at least `1 - tol` of its mass on the oracle support.
pub fn check_trained_policy(
    policy: &MenuPolicy,
    tasks: &[Task],
    alpha: f64,
    tol: f64,
) -> Result<PolicyCheck> {
    let oracle = maximize_shaped(tasks, alpha)?;
    let menus = menu_tasks(tasks)?;
    let weights = normalized_weights(&menus)?;
    let mut trained_accuracy = 0.0;
    let mut support_mass = 0.0;
    let mut trained_mean_len = 0.0;
    let mut oracle_mean_len = 0.0;
    for ((task, &w), solution) in menus.iter().zip(&weights).zip(&oracle.per_task) {
        let dist = policy.distribution(&task.id)?;
        if dist.len() != task.responses.len() {
            return Err(contract_err!(
                "policy shape differs from task {} response count",
                task.id
            ));
        }
        for (i, (p, r)) in dist.iter().zip(&task.responses).enumerate() {
            if r.is_correct {
                trained_accuracy += w * p;
            }
            if solution.support.contains(&i) {
                support_mass += w * p;
            }
            trained_mean_len += w * p * f64::from(r.token_length);
        }
        for (p, r) in solution.distribution.iter().zip(&task.responses) {
            oracle_mean_len += w * p * f64::from(r.token_length);
        }
    }
    let pass = trained_accuracy >= oracle.accuracy - tol && support_mass >= 1.0 - tol;
    Ok(PolicyCheck {
        pass,
        tolerance: tol,
        trained_accuracy,
        oracle_accuracy: oracle.accuracy,
        support_mass,
        trained_mean_len,
        oracle_mean_len,
    })
}
