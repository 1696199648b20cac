//! Verifier-gated, length-penalized rewards.
//!
//! An incorrect trajectory scores 0. A correct trajectory of length `len`
//! scores `1 - alpha * sigmoid((len - mean) / std)`, where `mean` and `std`
//! are the length statistics of the *correct* trajectories in the same
//! prompt's rollout group. The per-group normalization keeps long chains on
//! hard prompts from being penalized more than short chains on easy ones,
//! and with `alpha < 1` every correct response still beats every incorrect
//! one: correct rewards stay inside `(1 - alpha, 1)`.

use alloc::vec::Vec;

use crate::config_err;
use crate::contract_err;
use crate::error::Result;
use crate::math::{mean, population_std, sigmoid};
use crate::tasks::Trajectory;

/// Default floor below which a group's length spread counts as degenerate.
pub const DEFAULT_STD_FLOOR: f64 = 1e-6;

/// Length statistics of the correct subset of one rollout group.
///
/// `None` is the sentinel: no correct trajectory means no statistics, and a
/// single correct trajectory has a mean but no usable spread.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GroupStats {
    pub mean_len: Option<f64>,
    pub std_len: Option<f64>,
    pub n_correct: usize,
}

impl GroupStats {
    /// Statistics over an explicit list of correct lengths (used by the
    /// population oracle, where the "group" is the task's whole correct set).
    pub fn from_correct_lengths(lengths: &[f64]) -> GroupStats {
        match lengths.len() {
            0 => GroupStats { mean_len: None, std_len: None, n_correct: 0 },
            1 => GroupStats { mean_len: Some(lengths[0]), std_len: None, n_correct: 1 },
            n => {
                let m = mean(lengths).expect("non-empty");
                GroupStats {
                    mean_len: Some(m),
                    std_len: population_std(lengths, m),
                    n_correct: n,
                }
            }
        }
    }
}

/// Parameters of the shaped reward.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShapingConfig {
    /// Penalty strength, in `[0, 1)`. Zero recovers the plain verifier
    /// reward.
    pub alpha: f64,
    /// Spread floor; groups with `std < std_floor` fall back to a flat
    /// feature of 0.5.
    pub std_floor: f64,
}

impl ShapingConfig {
    pub fn new(alpha: f64) -> Result<ShapingConfig> {
        let cfg = ShapingConfig { alpha, std_floor: DEFAULT_STD_FLOOR };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return Err(config_err!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        if !(self.std_floor > 0.0 && self.std_floor.is_finite()) {
            return Err(config_err!("std_floor must be positive"));
        }
        Ok(())
    }
}

/// Mean and population standard deviation of the lengths of the correct
/// trajectories in one prompt's rollout group.
pub fn group_stats(group: &[Trajectory]) -> Result<GroupStats> {
    if group.is_empty() {
        return Err(contract_err!("group statistics need a non-empty rollout group"));
    }
    let prompt = &group[0].prompt_id;
    if group.iter().any(|t| &t.prompt_id != prompt) {
        return Err(contract_err!("rollout group mixes prompts"));
    }
    let lengths: Vec<f64> = group
        .iter()
        .filter(|t| t.is_correct)
        .map(|t| f64::from(t.length))
        .collect();
    Ok(GroupStats::from_correct_lengths(&lengths))
}

/// Sigmoid-normalized length feature in the open interval (0, 1).
///
/// Degenerate statistics (no spread, or fewer than two correct trajectories)
/// yield the midpoint 0.5, which keeps the feature continuous as the spread
/// collapses and is neutralized by advantage centering downstream.
pub fn length_feature(len: f64, stats: &GroupStats, cfg: &ShapingConfig) -> f64 {
    match (stats.mean_len, stats.std_len) {
        (Some(mean), Some(std)) if std >= cfg.std_floor => sigmoid((len - mean) / std),
        _ => 0.5,
    }
}

/// The shaped reward: 0 if incorrect, otherwise `1 - alpha * feature`.
pub fn shaped_reward(traj: &Trajectory, stats: &GroupStats, cfg: &ShapingConfig) -> Result<f64> {
    cfg.validate()?;
    if !traj.is_correct {
        return Ok(0.0);
    }
    Ok(1.0 - cfg.alpha * length_feature(f64::from(traj.length), stats, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::Outcome;
    use proptest::prelude::*;

    fn traj(len: u32, correct: bool) -> Trajectory {
        Trajectory {
            prompt_id: "t".into(),
            outcome: Outcome::Chain { thinks: len.saturating_sub(2), answer: 0 },
            length: len,
            logprobs: alloc::vec![],
            is_correct: correct,
        }
    }

    #[test]
    fn stats_of_two_correct_lengths() {
        let group = alloc::vec![traj(10, true), traj(20, true), traj(4, false)];
        let stats = group_stats(&group).unwrap();
        assert_eq!(stats.mean_len, Some(15.0));
        assert_eq!(stats.std_len, Some(5.0));
        assert_eq!(stats.n_correct, 2);
    }

    #[test]
    fn stats_sentinels() {
        let none = group_stats(&alloc::vec![traj(4, false), traj(6, false)]).unwrap();
        assert_eq!(none, GroupStats { mean_len: None, std_len: None, n_correct: 0 });

        let single = group_stats(&alloc::vec![traj(7, true), traj(6, false)]).unwrap();
        assert_eq!(single.mean_len, Some(7.0));
        assert_eq!(single.std_len, None);
        assert_eq!(single.n_correct, 1);
    }

    #[test]
    fn stats_reject_empty_or_mixed_groups() {
        assert!(group_stats(&[]).is_err());
        let mut other = traj(5, true);
        other.prompt_id = "other".into();
        assert!(group_stats(&alloc::vec![traj(5, true), other]).is_err());
    }

    #[test]
    fn feature_examples() {
        let cfg = ShapingConfig::new(0.2).unwrap();
        let stats = GroupStats { mean_len: Some(10.0), std_len: Some(2.0), n_correct: 4 };
        assert_eq!(length_feature(10.0, &stats, &cfg), 0.5);
        // z = 2 case.
        let f = length_feature(14.0, &stats, &cfg);
        assert!((f - 0.880_797_077_977_882_3).abs() < 1e-12);
        // Sentinel spread falls back to the midpoint.
        let single = GroupStats { mean_len: Some(7.0), std_len: None, n_correct: 1 };
        assert_eq!(length_feature(7.0, &single, &cfg), 0.5);
        let tiny = GroupStats { mean_len: Some(7.0), std_len: Some(1e-9), n_correct: 3 };
        assert_eq!(length_feature(7.0, &tiny, &cfg), 0.5);
    }

    #[test]
    fn feature_is_safe_for_extreme_z() {
        let cfg = ShapingConfig::new(0.4).unwrap();
        let stats = GroupStats { mean_len: Some(0.0), std_len: Some(1.0), n_correct: 2 };
        for len in [-1e4, 1e4] {
            let f = length_feature(len, &stats, &cfg);
            assert!(f > 0.0 && f < 1.0);
        }
    }

    #[test]
    fn reward_examples() {
        let stats = GroupStats { mean_len: Some(10.0), std_len: Some(2.0), n_correct: 4 };

        let incorrect = traj(3, false);
        for alpha in [0.0, 0.2, 0.4, 0.99] {
            let cfg = ShapingConfig { alpha, std_floor: DEFAULT_STD_FLOOR };
            assert_eq!(shaped_reward(&incorrect, &stats, &cfg).unwrap(), 0.0);
        }

        // alpha = 0 recovers the plain verifier reward.
        let cfg0 = ShapingConfig::new(0.0).unwrap();
        assert_eq!(shaped_reward(&traj(10, true), &stats, &cfg0).unwrap(), 1.0);

        // Correct at the mean with alpha = 0.4: 1 - 0.4 * 0.5.
        let cfg4 = ShapingConfig::new(0.4).unwrap();
        assert!((shaped_reward(&traj(10, true), &stats, &cfg4).unwrap() - 0.8).abs() < 1e-12);

        // z = 2 with alpha = 0.2, composing the two oracles above.
        let cfg2 = ShapingConfig::new(0.2).unwrap();
        let r = shaped_reward(&traj(14, true), &stats, &cfg2).unwrap();
        assert!((r - 0.823_840_584_404_423_5).abs() < 1e-12);
    }

    #[test]
    fn invalid_alpha_is_a_configuration_error() {
        assert!(ShapingConfig::new(1.0).is_err());
        assert!(ShapingConfig::new(-0.1).is_err());
        let bad = ShapingConfig { alpha: 1.0, std_floor: DEFAULT_STD_FLOOR };
        let stats = GroupStats { mean_len: Some(5.0), std_len: Some(1.0), n_correct: 2 };
        assert!(shaped_reward(&traj(5, true), &stats, &bad).is_err());
    }

    proptest! {
        /// Rewards stay in [0, 1]; correct always beats incorrect; alpha = 0
        /// collapses to the verifier output.
        #[test]
        fn reward_contract(
            lengths in proptest::collection::vec((2u32..2000, any::<bool>()), 1..12),
            alpha in 0.0f64..0.999,
        ) {
            let group: Vec<Trajectory> =
                lengths.iter().map(|&(l, c)| traj(l, c)).collect();
            let stats = group_stats(&group).unwrap();
            let cfg = ShapingConfig { alpha, std_floor: DEFAULT_STD_FLOOR };
            let cfg0 = ShapingConfig::new(0.0).unwrap();
            let mut min_correct = f64::INFINITY;
            let mut max_incorrect = f64::NEG_INFINITY;
            for t in &group {
                let r = shaped_reward(t, &stats, &cfg).unwrap();
                prop_assert!((0.0..=1.0).contains(&r));
                if t.is_correct {
                    min_correct = min_correct.min(r);
                    prop_assert!(r > 1.0 - alpha - 1e-12);
                } else {
                    max_incorrect = max_incorrect.max(r);
                }
                let plain = shaped_reward(t, &stats, &cfg0).unwrap();
                prop_assert_eq!(plain, if t.is_correct { 1.0 } else { 0.0 });
            }
            if min_correct.is_finite() && max_incorrect.is_finite() {
                prop_assert!(min_correct > max_incorrect);
            }
        }

        /// Within a group with real spread, the shaped reward is strictly
        /// decreasing in length among correct trajectories.
        #[test]
        fn reward_monotone_in_length(
            base in 2u32..500,
            spread in 1u32..200,
            alpha in 0.01f64..0.999,
        ) {
            let group = alloc::vec![traj(base, true), traj(base + spread, true)];
            let stats = group_stats(&group).unwrap();
            prop_assume!(stats.std_len.unwrap() >= DEFAULT_STD_FLOOR);
            let cfg = ShapingConfig { alpha, std_floor: DEFAULT_STD_FLOOR };
            let short = shaped_reward(&group[0], &stats, &cfg).unwrap();
            let long = shaped_reward(&group[1], &stats, &cfg).unwrap();
            prop_assert!(short > long);
        }
    }
}
