//! Test-time channel selection.
//!
//! Given per-channel quality weights, these routines decide which
//! microphones feed the beamformer. Four policies are provided:
//!
//! * one-best: keep only the highest-weight channel,
//! * fixed-n: keep the n highest-weight channels,
//! * auto-n: keep the channels whose quality ratio against the best
//!   channel exceeds a threshold gamma, letting the count adapt to the
//!   scene,
//! * soft-n: same support as auto-n, but selected channels carry their
//!   weight q_j instead of a hard 1, so the beamformer can de-emphasize
//!   marginal microphones.
//!
//! The quality ratio is r_j = (q_j/q*) * ((1-q*)/(1-q_j)) with q* the best
//! weight. It is the odds of channel j relative to the odds of the best
//! channel, equals 1 exactly when q_j = q*, and decays toward 0 as the
//! channel falls behind. Two boundary rules keep the policies total: a
//! perfect weight q_j = 1 gets r_j = 1 by definition (its odds are
//! infinite), and the argmax channel is always part of the selection even
//! at gamma = 1 where the strict comparison alone would return an empty
//! set. Ties are broken by the lowest channel index throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::ChannelWeights;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// Per-channel selection mask `p`, entries in [0, 1]. One-best, fixed-n and
/// auto-n emit binary masks; soft-n carries the quality weights of the
/// selected channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SelectionMask {
    pub p: Vec<f64>,
}

impl SelectionMask {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Indices of the selected channels, in ascending order.
    pub fn support(&self) -> Vec<usize> {
        self.p
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn num_selected(&self) -> usize {
        self.p.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.p.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Which selection policy to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionAlgorithm {
    OneBest,
    FixedN,
    AutoN,
    SoftN,
}

/// Bundled policy choice plus its parameters, the unit the harness and CLI
/// pass around.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub algorithm: SelectionAlgorithm,
    /// Channel count for fixed-n. `None` falls back to round(sqrt(W)).
    #[serde(default)]
    pub n: Option<usize>,
    /// Ratio threshold for auto-n and soft-n.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    0.5
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            algorithm: SelectionAlgorithm::AutoN,
            n: None,
            gamma: default_gamma(),
        }
    }
}

impl SelectionConfig {
    /// Run the configured policy on a weight vector.
    pub fn apply(&self, q: &ChannelWeights) -> Result<SelectionMask> {
        match self.algorithm {
            SelectionAlgorithm::OneBest => select_one_best(q),
            SelectionAlgorithm::FixedN => {
                let n = self.n.unwrap_or_else(|| default_num_channels(q.len()));
                select_fixed_n_best(q, n)
            }
            SelectionAlgorithm::AutoN => select_auto_n_best(q, self.gamma),
            SelectionAlgorithm::SoftN => select_soft_n_best(q, self.gamma),
        }
    }
}

/// Default channel count for fixed-n: round(sqrt(W)), never below 1.
pub fn default_num_channels(num_channels: usize) -> usize {
    ((num_channels as f64).sqrt().round() as usize).max(1)
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// Keep only the highest-weight channel (ties go to the lowest index).
pub fn select_one_best(q: &ChannelWeights) -> Result<SelectionMask> {
    let best = q.argmax().ok_or_else(|| {
        Error::InvalidArgument("cannot select from an empty weight vector".into())
    })?;
    let mut p = vec![0.0; q.len()];
    p[best] = 1.0;
    Ok(SelectionMask { p })
}

/// Keep the `n` highest-weight channels.
pub fn select_fixed_n_best(q: &ChannelWeights, n: usize) -> Result<SelectionMask> {
    if n == 0 || n > q.len() {
        return Err(Error::InvalidArgument(format!(
            "fixed-n needs 1 <= n <= {}, got {n}",
            q.len()
        )));
    }
    let mut order: Vec<usize> = (0..q.len()).collect();
    // Stable sort by descending weight keeps equal weights in index order.
    order.sort_by(|&a, &b| q.q[b].partial_cmp(&q.q[a]).expect("weights are finite"));
    let mut p = vec![0.0; q.len()];
    for &j in &order[..n] {
        p[j] = 1.0;
    }
    Ok(SelectionMask { p })
}

/// Keep every channel whose quality ratio against the best channel exceeds
/// `gamma`. The best channel itself is always kept.
pub fn select_auto_n_best(q: &ChannelWeights, gamma: f64) -> Result<SelectionMask> {
    let support = auto_support(q, gamma)?;
    Ok(SelectionMask {
        p: support.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect(),
    })
}

/// Auto-n support, with the selected channels carrying their weight q_j.
pub fn select_soft_n_best(q: &ChannelWeights, gamma: f64) -> Result<SelectionMask> {
    let support = auto_support(q, gamma)?;
    Ok(SelectionMask {
        p: support
            .iter()
            .zip(&q.q)
            .map(|(&s, &w)| if s { w } else { 0.0 })
            .collect(),
    })
}

/// Shared predicate of auto-n and soft-n: which channels clear the ratio
/// threshold. Returns one flag per channel.
fn auto_support(q: &ChannelWeights, gamma: f64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "gamma must lie in [0, 1], got {gamma}"
        )));
    }
    let best = q.argmax().ok_or_else(|| {
        Error::InvalidArgument("cannot select from an empty weight vector".into())
    })?;
    let q_star = q.q[best];
    if q_star == 0.0 {
        return Err(Error::NoUsableChannel(
            "all channel weights are zero".into(),
        ));
    }
    let mut support: Vec<bool> = q
        .q
        .iter()
        .map(|&qj| quality_ratio(qj, q_star) > gamma)
        .collect();
    // Strict comparison would drop even the best channel at gamma = 1.
    support[best] = true;
    Ok(support)
}

/// Odds ratio r_j of a channel against the best one. Defined as 1 when
/// q_j = 1, where the closed form degenerates.
fn quality_ratio(q_j: f64, q_star: f64) -> f64 {
    if q_j >= 1.0 {
        1.0
    } else {
        (q_j / q_star) * ((1.0 - q_star) / (1.0 - q_j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weights(q: &[f64]) -> ChannelWeights {
        ChannelWeights::new(q.to_vec()).unwrap()
    }

    #[test]
    fn one_best_marks_the_argmax() {
        let mask = select_one_best(&weights(&[0.2, 0.9, 0.5])).unwrap();
        assert_eq!(mask.p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn one_best_breaks_ties_toward_the_lowest_index() {
        let mask = select_one_best(&weights(&[0.4, 0.4])).unwrap();
        assert_eq!(mask.p, vec![1.0, 0.0]);
    }

    #[test]
    fn one_best_with_a_single_channel() {
        let mask = select_one_best(&weights(&[0.7])).unwrap();
        assert_eq!(mask.p, vec![1.0]);
    }

    #[test]
    fn one_best_rejects_empty_input() {
        assert!(select_one_best(&weights(&[])).is_err());
    }

    #[test]
    fn fixed_n_keeps_the_top_n() {
        let mask = select_fixed_n_best(&weights(&[0.1, 0.4, 0.3, 0.2]), 2).unwrap();
        assert_eq!(mask.p, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn fixed_n_with_one_channel_reduces_to_one_best() {
        let q = weights(&[0.3, 0.8, 0.1, 0.5]);
        assert_eq!(
            select_fixed_n_best(&q, 1).unwrap(),
            select_one_best(&q).unwrap()
        );
    }

    #[test]
    fn fixed_n_with_all_channels_is_all_ones() {
        let mask = select_fixed_n_best(&weights(&[0.1, 0.5, 0.2]), 3).unwrap();
        assert_eq!(mask.p, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn fixed_n_breaks_ties_toward_lower_indices() {
        let mask = select_fixed_n_best(&weights(&[0.5, 0.9, 0.5, 0.5]), 2).unwrap();
        assert_eq!(mask.p, vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn fixed_n_rejects_out_of_range_counts() {
        let q = weights(&[0.1, 0.2]);
        assert!(select_fixed_n_best(&q, 0).is_err());
        assert!(select_fixed_n_best(&q, 3).is_err());
    }

    #[test]
    fn auto_n_thresholds_the_quality_ratio() {
        // q* = 0.9. r2 = (0.8/0.9)*(0.1/0.2) = 0.444 < 0.5,
        // r3 = (0.3/0.9)*(0.1/0.7) = 0.0476 < 0.5. Only the best survives.
        let mask = select_auto_n_best(&weights(&[0.9, 0.8, 0.3]), 0.5).unwrap();
        assert_eq!(mask.p, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn auto_n_at_gamma_zero_still_needs_a_positive_ratio() {
        // r2 = 1 > 0 selects; r3 = 0 is not strictly above 0.
        let mask = select_auto_n_best(&weights(&[0.5, 0.5, 0.0]), 0.0).unwrap();
        assert_eq!(mask.p, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn auto_n_always_keeps_the_argmax() {
        for gamma in [0.0, 0.3, 0.7, 0.99, 1.0] {
            let mask = select_auto_n_best(&weights(&[0.6, 0.2]), gamma).unwrap();
            assert_eq!(mask.p[0], 1.0, "gamma = {gamma}");
        }
        // At gamma = 1 the strict comparison drops everything else.
        let mask = select_auto_n_best(&weights(&[0.6, 0.6, 0.2]), 1.0).unwrap();
        assert_eq!(mask.p, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn auto_n_rejects_all_zero_weights() {
        assert!(matches!(
            select_auto_n_best(&weights(&[0.0, 0.0]), 0.5),
            Err(Error::NoUsableChannel(_))
        ));
    }

    #[test]
    fn auto_n_rejects_gamma_outside_unit_interval() {
        let q = weights(&[0.5, 0.2]);
        assert!(select_auto_n_best(&q, -0.1).is_err());
        assert!(select_auto_n_best(&q, 1.1).is_err());
    }

    #[test]
    fn perfect_weights_get_unit_ratio() {
        // A perfect channel elsewhere drives every imperfect ratio to zero.
        let mask = select_auto_n_best(&weights(&[1.0, 0.5]), 0.5).unwrap();
        assert_eq!(mask.p, vec![1.0, 0.0]);
        // Two perfect channels both carry r = 1 by the degenerate rule.
        let mask = select_auto_n_best(&weights(&[1.0, 1.0]), 0.5).unwrap();
        assert_eq!(mask.p, vec![1.0, 1.0]);
    }

    #[test]
    fn soft_n_carries_the_weights_on_the_auto_support() {
        // r2 = 0.444 > 0.3 selects channel 2; r3 = 0.0476 does not clear it.
        let mask = select_soft_n_best(&weights(&[0.9, 0.8, 0.3]), 0.3).unwrap();
        assert_eq!(mask.p, vec![0.9, 0.8, 0.0]);
    }

    #[test]
    fn soft_n_with_lone_perfect_argmax() {
        let mask = select_soft_n_best(&weights(&[1.0, 0.4, 0.2]), 0.5).unwrap();
        assert_eq!(mask.p, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn soft_and_auto_share_their_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5e1ec7);
        for _ in 0..1000 {
            let w = rng.random_range(1..=12);
            let q = weights(
                &(0..w)
                    .map(|_| rng.random_range(0.0..=1.0))
                    .collect::<Vec<f64>>(),
            );
            let gamma: f64 = rng.random_range(0.0..=1.0);
            let (auto, soft) = match (
                select_auto_n_best(&q, gamma),
                select_soft_n_best(&q, gamma),
            ) {
                (Ok(a), Ok(s)) => (a, s),
                // Both must agree even on the failure path (all-zero draw).
                (a, s) => {
                    assert!(a.is_err() && s.is_err());
                    continue;
                }
            };
            assert_eq!(auto.support(), soft.support());
            assert!(auto.is_binary());
            assert!(soft.p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn selection_sets_nest_as_gamma_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xaa11);
        let gammas = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        for _ in 0..200 {
            let q = weights(
                &(0..10)
                    .map(|_| rng.random_range(0.01..=0.99))
                    .collect::<Vec<f64>>(),
            );
            let one = select_one_best(&q).unwrap();
            let mut prev = select_auto_n_best(&q, gammas[0]).unwrap().support();
            for &gamma in &gammas[1..] {
                let cur = select_auto_n_best(&q, gamma).unwrap().support();
                // Higher gamma never adds channels.
                assert!(cur.iter().all(|j| prev.contains(j)));
                prev = cur;
            }
            // The one-best channel survives every threshold.
            assert!(prev.contains(&one.support()[0]));
        }
    }

    #[test]
    fn default_channel_count_follows_the_square_root() {
        assert_eq!(default_num_channels(16), 4);
        assert_eq!(default_num_channels(8), 3);
        assert_eq!(default_num_channels(2), 1);
        assert_eq!(default_num_channels(1), 1);
    }

    #[test]
    fn config_dispatches_each_algorithm() {
        let q = weights(&[0.9, 0.8, 0.3, 0.2]);
        let one = SelectionConfig {
            algorithm: SelectionAlgorithm::OneBest,
            n: None,
            gamma: 0.5,
        };
        assert_eq!(one.apply(&q).unwrap(), select_one_best(&q).unwrap());

        // Fixed-n without an explicit n uses round(sqrt(4)) = 2.
        let fixed = SelectionConfig {
            algorithm: SelectionAlgorithm::FixedN,
            n: None,
            gamma: 0.5,
        };
        assert_eq!(fixed.apply(&q).unwrap(), select_fixed_n_best(&q, 2).unwrap());

        let auto = SelectionConfig::default();
        assert_eq!(auto.apply(&q).unwrap(), select_auto_n_best(&q, 0.5).unwrap());

        let soft = SelectionConfig {
            algorithm: SelectionAlgorithm::SoftN,
            n: None,
            gamma: 0.3,
        };
        assert_eq!(soft.apply(&q).unwrap(), select_soft_n_best(&q, 0.3).unwrap());
    }

    #[test]
    fn selection_algorithm_serde_uses_kebab_case() {
        let json = serde_json::to_string(&SelectionAlgorithm::AutoN).unwrap();
        assert_eq!(json, "\"auto-n\"");
        let parsed: SelectionAlgorithm = serde_json::from_str("\"one-best\"").unwrap();
        assert_eq!(parsed, SelectionAlgorithm::OneBest);
    }
}
