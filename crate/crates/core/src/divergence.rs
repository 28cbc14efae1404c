//! Chernoff-coefficient similarity between categorical label distributions.
//!
//! For distributions `P`, `Q` over a shared label space and `α ∈ (0, 1)`:
//!
//! ```text
//! C_α(P ‖ Q) = Σ_k p_k^α · q_k^(1-α)        divergence = 1 - C_α
//! ```
//!
//! Terms where either side has zero mass contribute nothing (0^x = 0), so
//! disjoint supports give a coefficient of exactly 0.
//!
//! Atoms are scenario and action labels (`α = 0.5`); compounds are intents
//! (`α = 0.1`). The train side always plays `P` and the test side `Q`.

use std::collections::BTreeMap;

use crate::corpus::Utterance;
use crate::{Error, Result};

/// Exponent used for atom (scenario + action) distributions.
pub const ATOM_ALPHA: f64 = 0.5;
/// Exponent used for compound (intent) distributions.
pub const COMPOUND_ALPHA: f64 = 0.1;

/// Moves between full recomputations of a [`PairedDistributionState`] sum.
pub const REFRESH_INTERVAL: u64 = 100_000;

/// Label counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategoricalDistribution {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl CategoricalDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut d = Self::new();
        for l in labels {
            d.add(l, 1);
        }
        d
    }

    pub fn from_counts<I, S>(counts: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut d = Self::new();
        for (l, n) in counts {
            d.add(l, n);
        }
        d
    }

    pub fn add(&mut self, label: impl Into<String>, n: u64) {
        if n == 0 {
            return;
        }
        *self.counts.entry(label.into()).or_insert(0) += n;
        self.total += n;
    }

    pub fn count(&self, label: &str) -> u64 {
        self.counts.get(label).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn probability(&self, label: &str) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(label) as f64 / self.total as f64
        }
    }

    /// Labels with nonzero count, in sorted order.
    pub fn support(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// True when both count vectors are positive multiples of each other.
    fn proportional_to(&self, other: &Self) -> bool {
        self.counts.len() == other.counts.len()
            && self.counts.iter().all(|(k, &a)| {
                let b = other.count(k);
                u128::from(a) * u128::from(other.total) == u128::from(b) * u128::from(self.total)
            })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "alpha must lie strictly between 0 and 1, got {alpha}"
        )))
    }
}

/// `C_α(p ‖ q)`; proportional count vectors give exactly 1.
pub fn chernoff_coefficient(
    p: &CategoricalDistribution,
    q: &CategoricalDistribution,
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    if p.is_empty() || q.is_empty() {
        return Err(Error::Domain(
            "Chernoff coefficient of an empty distribution".into(),
        ));
    }
    if p.proportional_to(q) {
        return Ok(1.0);
    }
    let (pt, qt) = (p.total as f64, q.total as f64);
    let sum: f64 = p
        .counts
        .iter()
        .filter_map(|(k, &a)| {
            let b = q.count(k);
            (b > 0).then(|| (a as f64 / pt).powf(alpha) * (b as f64 / qt).powf(1.0 - alpha))
        })
        .sum();
    Ok(sum.clamp(0.0, 1.0))
}

/// `1 - C_α(p ‖ q)`.
pub fn divergence(
    p: &CategoricalDistribution,
    q: &CategoricalDistribution,
    alpha: f64,
) -> Result<f64> {
    Ok(1.0 - chernoff_coefficient(p, q, alpha)?)
}

/// Scenario and action counts as one distribution over their disjoint union.
pub fn atom_distribution<'a, I>(utterances: I) -> CategoricalDistribution
where
    I: IntoIterator<Item = &'a Utterance>,
{
    let mut d = CategoricalDistribution::new();
    for u in utterances {
        d.add(atom_key_scenario(&u.scenario), 1);
        d.add(atom_key_action(&u.action), 1);
    }
    d
}

pub fn compound_distribution<'a, I>(utterances: I) -> CategoricalDistribution
where
    I: IntoIterator<Item = &'a Utterance>,
{
    CategoricalDistribution::from_labels(utterances.into_iter().map(|u| u.intent.as_str()))
}

pub(crate) fn atom_key_scenario(s: &str) -> String {
    format!("scenario:{s}")
}

pub(crate) fn atom_key_action(a: &str) -> String {
    format!("action:{a}")
}

pub fn atom_divergence(
    train_atoms: &CategoricalDistribution,
    test_atoms: &CategoricalDistribution,
) -> Result<f64> {
    divergence(train_atoms, test_atoms, ATOM_ALPHA)
}

pub fn compound_divergence(
    train_compounds: &CategoricalDistribution,
    test_compounds: &CategoricalDistribution,
) -> Result<f64> {
    divergence(train_compounds, test_compounds, COMPOUND_ALPHA)
}

/// Side of a [`PairedDistributionState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// A count change for one label, used to score moves without applying them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountChange {
    pub label: usize,
    pub left: i64,
    pub right: i64,
}

impl CountChange {
    /// One sample of `label` moved from one side to the other.
    pub fn transfer(label: usize, from_left: bool) -> Self {
        let d = if from_left { 1 } else { -1 };
        CountChange {
            label,
            left: -d,
            right: d,
        }
    }
}

/// Two count vectors over a dense label index with a running Chernoff sum.
///
/// Keeps `Σ_k left_k^α · right_k^(1-α)` up to date in O(1) per count change
/// (Neumaier-compensated, refreshed from scratch every [`REFRESH_INTERVAL`]
/// updates), so the coefficient
/// `sum / (left_total^α · right_total^(1-α))` is available in O(1).
#[derive(Debug, Clone)]
pub struct PairedDistributionState {
    alpha: f64,
    left: Vec<u64>,
    right: Vec<u64>,
    left_total: u64,
    right_total: u64,
    pow_left: Vec<f64>,
    pow_right: Vec<f64>,
    sum: f64,
    compensation: f64,
    nonzero_terms: usize,
    updates_since_refresh: u64,
}

impl PairedDistributionState {
    pub fn new(left: Vec<u64>, right: Vec<u64>, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if left.len() != right.len() {
            return Err(Error::Domain(format!(
                "label spaces differ in size: {} vs {}",
                left.len(),
                right.len()
            )));
        }
        let left_total = left.iter().sum();
        let right_total = right.iter().sum();
        let cap = (left_total + right_total) as usize;
        let pow_left = (0..=cap).map(|n| (n as f64).powf(alpha)).collect();
        let pow_right = (0..=cap).map(|n| (n as f64).powf(1.0 - alpha)).collect();
        let mut state = PairedDistributionState {
            alpha,
            left,
            right,
            left_total,
            right_total,
            pow_left,
            pow_right,
            sum: 0.0,
            compensation: 0.0,
            nonzero_terms: 0,
            updates_since_refresh: 0,
        };
        state.refresh();
        Ok(state)
    }

    /// Builds a state over the union support of two distributions, returning
    /// the label order used for the dense index.
    pub fn from_distributions(
        p: &CategoricalDistribution,
        q: &CategoricalDistribution,
        alpha: f64,
    ) -> Result<(Self, Vec<String>)> {
        let mut labels: Vec<String> = p.support().chain(q.support()).map(str::to_owned).collect();
        labels.sort();
        labels.dedup();
        let left = labels.iter().map(|l| p.count(l)).collect();
        let right = labels.iter().map(|l| q.count(l)).collect();
        Ok((Self::new(left, right, alpha)?, labels))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn left_counts(&self) -> &[u64] {
        &self.left
    }

    pub fn right_counts(&self) -> &[u64] {
        &self.right
    }

    pub fn left_total(&self) -> u64 {
        self.left_total
    }

    pub fn right_total(&self) -> u64 {
        self.right_total
    }

    #[inline]
    fn pow_l(&self, n: u64) -> f64 {
        self.pow_left
            .get(n as usize)
            .copied()
            .unwrap_or_else(|| (n as f64).powf(self.alpha))
    }

    #[inline]
    fn pow_r(&self, n: u64) -> f64 {
        self.pow_right
            .get(n as usize)
            .copied()
            .unwrap_or_else(|| (n as f64).powf(1.0 - self.alpha))
    }

    #[inline]
    fn term(&self, l: u64, r: u64) -> f64 {
        if l == 0 || r == 0 {
            0.0
        } else {
            self.pow_l(l) * self.pow_r(r)
        }
    }

    /// The running `Σ_k left_k^α · right_k^(1-α)`.
    pub fn chernoff_sum(&self) -> f64 {
        if self.nonzero_terms == 0 {
            0.0
        } else {
            self.sum + self.compensation
        }
    }

    /// The same sum recomputed from the counts.
    pub fn recompute_sum(&self) -> f64 {
        self.left
            .iter()
            .zip(&self.right)
            .map(|(&l, &r)| self.term(l, r))
            .sum()
    }

    fn normaliser(&self, left_total: u64, right_total: u64) -> f64 {
        self.pow_l(left_total) * self.pow_r(right_total)
    }

    /// Current coefficient; 0 when either side is empty.
    pub fn coefficient(&self) -> f64 {
        if self.left_total == 0 || self.right_total == 0 {
            return 0.0;
        }
        (self.chernoff_sum() / self.normaliser(self.left_total, self.right_total)).clamp(0.0, 1.0)
    }

    pub fn divergence(&self) -> f64 {
        1.0 - self.coefficient()
    }

    /// Recomputes the running sum from scratch.
    pub fn refresh(&mut self) {
        let mut sum = 0.0;
        let mut comp = 0.0;
        let mut nonzero = 0;
        for (&l, &r) in self.left.iter().zip(&self.right) {
            let t = self.term(l, r);
            if t != 0.0 {
                nonzero += 1;
                neumaier_add(&mut sum, &mut comp, t);
            }
        }
        self.sum = sum;
        self.compensation = comp;
        self.nonzero_terms = nonzero;
        self.updates_since_refresh = 0;
    }

    fn checked(count: u64, delta: i64, label: usize) -> Result<u64> {
        count.checked_add_signed(delta).ok_or_else(|| {
            Error::Domain(format!(
                "label {label} has count {count}, cannot apply {delta}"
            ))
        })
    }

    /// Applies a count change to both sides of one label.
    pub fn apply(&mut self, change: CountChange) -> Result<()> {
        let CountChange { label, left, right } = change;
        if label >= self.left.len() {
            return Err(Error::Domain(format!("label index {label} out of range")));
        }
        let (l0, r0) = (self.left[label], self.right[label]);
        let l1 = Self::checked(l0, left, label)?;
        let r1 = Self::checked(r0, right, label)?;
        let old = self.term(l0, r0);
        let new = self.term(l1, r1);
        if old != 0.0 {
            self.nonzero_terms -= 1;
            neumaier_add(&mut self.sum, &mut self.compensation, -old);
        }
        if new != 0.0 {
            self.nonzero_terms += 1;
            neumaier_add(&mut self.sum, &mut self.compensation, new);
        }
        self.left[label] = l1;
        self.right[label] = r1;
        self.left_total = Self::checked(self.left_total, left, label)?;
        self.right_total = Self::checked(self.right_total, right, label)?;
        if self.nonzero_terms == 0 {
            self.sum = 0.0;
            self.compensation = 0.0;
        }
        self.updates_since_refresh += 1;
        if self.updates_since_refresh >= REFRESH_INTERVAL {
            self.refresh();
        }
        Ok(())
    }

    /// Moves one sample of `label` to the other side.
    pub fn move_sample(&mut self, label: usize, from_left: bool) -> Result<()> {
        self.apply(CountChange::transfer(label, from_left))
    }

    /// Coefficient after `changes`, without applying them. Each label may
    /// appear at most once in `changes`.
    pub fn coefficient_after(&self, changes: &[CountChange]) -> f64 {
        let mut sum = self.chernoff_sum();
        let mut lt = self.left_total as i64;
        let mut rt = self.right_total as i64;
        for c in changes {
            let (l0, r0) = (self.left[c.label], self.right[c.label]);
            let l1 = (l0 as i64 + c.left).max(0) as u64;
            let r1 = (r0 as i64 + c.right).max(0) as u64;
            sum += self.term(l1, r1) - self.term(l0, r0);
            lt += c.left;
            rt += c.right;
        }
        if lt <= 0 || rt <= 0 || sum <= 0.0 {
            return 0.0;
        }
        (sum / self.normaliser(lt as u64, rt as u64)).clamp(0.0, 1.0)
    }

    pub fn left_distribution(&self, labels: &[String]) -> CategoricalDistribution {
        CategoricalDistribution::from_counts(labels.iter().cloned().zip(self.left.iter().copied()))
    }

    pub fn right_distribution(&self, labels: &[String]) -> CategoricalDistribution {
        CategoricalDistribution::from_counts(labels.iter().cloned().zip(self.right.iter().copied()))
    }
}

#[inline]
fn neumaier_add(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn dist(pairs: &[(&str, u64)]) -> CategoricalDistribution {
        CategoricalDistribution::from_counts(pairs.iter().map(|&(k, v)| (k, v)))
    }

    #[test]
    fn identical_and_disjoint() {
        let p = dist(&[("a", 3), ("b", 1), ("c", 5)]);
        assert_eq!(chernoff_coefficient(&p, &p, 0.5).unwrap(), 1.0);
        assert_eq!(divergence(&p, &p, 0.1).unwrap(), 0.0);
        let q = dist(&[("x", 2), ("y", 2)]);
        assert_eq!(chernoff_coefficient(&p, &q, 0.5).unwrap(), 0.0);
        assert_eq!(divergence(&p, &q, 0.5).unwrap(), 1.0);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn hand_evaluated_values() {
        // sqrt(0.5 * 1) and 0.5^0.1 * 1^0.9
        let p = dist(&[("a", 1), ("b", 1)]);
        let q = dist(&[("a", 1)]);
        assert!((chernoff_coefficient(&p, &q, 0.5).unwrap() - 0.70711).abs() < 1e-5);
        assert!((chernoff_coefficient(&p, &q, 0.1).unwrap() - 0.93303).abs() < 1e-5);
        assert!((divergence(&p, &q, 0.1).unwrap() - 0.06697).abs() < 1e-5);
    }

    #[test]
    fn domain_errors() {
        let p = dist(&[("a", 1)]);
        assert!(matches!(
            chernoff_coefficient(&p, &p, 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            chernoff_coefficient(&p, &p, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            chernoff_coefficient(&p, &p, f64::NAN),
            Err(Error::Domain(_))
        ));
        let empty = CategoricalDistribution::new();
        assert!(matches!(
            chernoff_coefficient(&p, &empty, 0.5),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn diagonal_intents_have_zero_atom_and_full_compound_divergence() {
        let mk = |s: &str, a: &str| crate::corpus::Utterance::new("x", "w", s, a, true, "spk");
        let train = [mk("s1", "a1"), mk("s2", "a2")];
        let test = [mk("s1", "a2"), mk("s2", "a1")];
        let da = atom_divergence(&atom_distribution(&train), &atom_distribution(&test)).unwrap();
        let dc = compound_divergence(
            &compound_distribution(&train),
            &compound_distribution(&test),
        )
        .unwrap();
        assert_eq!(da, 0.0);
        assert_eq!(dc, 1.0);
    }

    #[test]
    fn move_and_move_back() {
        let mut s = PairedDistributionState::new(vec![3, 0, 2], vec![1, 4, 2], 0.1).unwrap();
        let before = s.chernoff_sum();
        s.move_sample(0, true).unwrap();
        s.move_sample(0, false).unwrap();
        assert!((s.chernoff_sum() - before).abs() <= 1e-9 * before);
    }

    #[test]
    fn moving_last_count_zeroes_term() {
        let mut s = PairedDistributionState::new(vec![1, 0], vec![1, 0], 0.5).unwrap();
        assert_eq!(s.chernoff_sum(), 1.0);
        s.move_sample(0, true).unwrap();
        assert_eq!(s.left_counts()[0], 0);
        assert_eq!(s.chernoff_sum(), 0.0);
        assert_eq!(s.coefficient(), 0.0);
    }

    #[test]
    fn moving_from_zero_count_fails() {
        let mut s = PairedDistributionState::new(vec![0, 2], vec![1, 0], 0.5).unwrap();
        assert!(matches!(s.move_sample(0, true), Err(Error::Domain(_))));
        assert!(matches!(s.move_sample(1, false), Err(Error::Domain(_))));
        // unchanged on failure
        assert_eq!(s.left_counts(), &[0, 2]);
    }

    #[test]
    fn random_moves_track_recomputation() {
        let mut rng = rng::stream(11, "test");
        let mut s = PairedDistributionState::new(vec![5; 12], vec![5; 12], 0.1).unwrap();
        for _ in 0..1000 {
            let label = rng.gen_range(0..12);
            let from_left = rng.gen_bool(0.5);
            let _ = s.move_sample(label, from_left);
            let batch = s.recompute_sum();
            if batch == 0.0 {
                assert_eq!(s.chernoff_sum(), 0.0);
            } else {
                assert!((s.chernoff_sum() - batch).abs() <= 1e-9 * batch);
            }
        }
    }

    #[test]
    fn hypothetical_matches_committed() {
        let s = PairedDistributionState::new(vec![4, 1, 0, 3], vec![2, 2, 5, 1], 0.5).unwrap();
        let changes = [
            CountChange::transfer(1, true),
            CountChange::transfer(2, false),
        ];
        let predicted = s.coefficient_after(&changes);
        let mut t = s.clone();
        for c in changes {
            t.apply(c).unwrap();
        }
        assert!((predicted - t.coefficient()).abs() < 1e-12);
    }

    #[test]
    fn state_agrees_with_distribution_route() {
        let p = dist(&[("a", 4), ("b", 1), ("c", 7)]);
        let q = dist(&[("b", 3), ("c", 2), ("d", 9)]);
        for alpha in [0.1, 0.5, 0.9] {
            let (s, _) = PairedDistributionState::from_distributions(&p, &q, alpha).unwrap();
            let direct = chernoff_coefficient(&p, &q, alpha).unwrap();
            assert!((s.coefficient() - direct).abs() < 1e-12);
        }
    }

    fn arb_counts() -> impl Strategy<Value = Vec<(u64, u64)>> {
        prop::collection::vec((0u64..20, 0u64..20), 1..10).prop_filter("both sides nonempty", |v| {
            v.iter().any(|c| c.0 > 0) && v.iter().any(|c| c.1 > 0)
        })
    }

    fn split(v: &[(u64, u64)]) -> (CategoricalDistribution, CategoricalDistribution) {
        let p = CategoricalDistribution::from_counts(
            v.iter().enumerate().map(|(i, c)| (format!("l{i}"), c.0)),
        );
        let q = CategoricalDistribution::from_counts(
            v.iter().enumerate().map(|(i, c)| (format!("l{i}"), c.1)),
        );
        (p, q)
    }

    proptest! {
        #[test]
        fn symmetry_under_alpha_swap(v in arb_counts(), alpha in 0.01f64..0.99) {
            let (p, q) = split(&v);
            let a = chernoff_coefficient(&p, &q, alpha).unwrap();
            let b = chernoff_coefficient(&q, &p, 1.0 - alpha).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn bounded(v in arb_counts(), alpha in 0.01f64..0.99) {
            let (p, q) = split(&v);
            let c = chernoff_coefficient(&p, &q, alpha).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            let d = divergence(&p, &q, alpha).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn scale_invariant(v in arb_counts(), alpha in 0.01f64..0.99, k in 1u64..50) {
            let (p, q) = split(&v);
            let scaled = CategoricalDistribution::from_counts(p.iter().map(|(l, n)| (l.to_owned(), n * k)));
            let a = chernoff_coefficient(&p, &q, alpha).unwrap();
            let b = chernoff_coefficient(&scaled, &q, alpha).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
