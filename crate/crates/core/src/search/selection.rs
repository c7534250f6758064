//! Selection-likelihood bookkeeping for performance-based pruning.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::softmax;

/// The `⌈K/2⌉` candidates with the smallest α (ties by list order), in list
/// order. With `all`, every candidate is returned.
pub fn select_smaller(alpha: &[f32], all: bool) -> Result<Vec<usize>> {
    if alpha.len() < 2 {
        return Err(invalid!("selection needs at least 2 candidates, got {}", alpha.len()));
    }
    if all {
        return Ok((0..alpha.len()).collect());
    }
    let mut order: Vec<usize> = (0..alpha.len()).collect();
    order.sort_by(|&a, &b| alpha[a].total_cmp(&alpha[b]));
    let mut picked = order[..alpha.len().div_ceil(2)].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Softmax over the mean accuracies of the evaluated candidates.
pub fn s_smaller(mean_accuracies: &[f64]) -> Result<Vec<f64>> {
    softmax(mean_accuracies)
}

/// `½·(max s + (1/⌈K/2⌉)·Σ s)`, assigned to every candidate outside the smaller set.
pub fn s_larger(s_smaller: &[f64], k: usize) -> f64 {
    let max = s_smaller.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = s_smaller.iter().sum();
    0.5 * (max + sum / k.div_ceil(2) as f64)
}

/// `s ← ½·s + q·s_smaller + (1 − q)·s_larger`.
pub fn update_s(s: &mut [f64], q: &[bool], smaller: &[f64], larger: f64) {
    for ((s, &q), &sm) in s.iter_mut().zip(q).zip(smaller) {
        *s = 0.5 * *s + if q { sm } else { larger };
    }
}

/// `δ·√(2·ln N / n)`, infinite for `n = 0`.
pub fn ucb_bonus(delta: f64, total: u64, n: u64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    delta * (2.0 * (total as f64).ln() / n as f64).sqrt()
}

/// Index of the smallest `s` among unprotected candidates; ties go to the
/// lowest index.
pub fn prune_index(s: &[f64], protected: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in s.iter().enumerate() {
        if protected.get(i).copied().unwrap_or(false) {
            continue;
        }
        if best.is_none_or(|b| v < s[b]) {
            best = Some(i);
        }
    }
    best
}

/// Sampled evaluations of a full search from `k0` candidates down to one.
pub fn planned_evaluations(k0: usize, repeats: usize, all: bool) -> usize {
    (2..=k0).map(|k| repeats * if all { k } else { k.div_ceil(2) }).sum()
}

/// Per-edge likelihoods and counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSelection {
    pub s: Vec<f64>,
    pub n: Vec<u64>,
    /// Accuracies collected in the current round.
    pub y: Vec<Vec<f64>>,
    /// Membership of the current smaller set.
    pub q: Vec<bool>,
}

impl EdgeSelection {
    pub fn new(k: usize) -> Self {
        Self {
            s: vec![0.0; k],
            n: vec![0; k],
            y: vec![Vec::new(); k],
            q: vec![false; k],
        }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn remove(&mut self, index: usize) {
        self.s.remove(index);
        self.n.remove(index);
        self.y.remove(index);
        self.q.remove(index);
    }

    fn mean_accuracies(&self) -> Result<Vec<f64>> {
        self.q
            .iter()
            .zip(&self.y)
            .enumerate()
            .filter(|(_, (&q, _))| q)
            .map(|(i, (_, y))| {
                if y.is_empty() {
                    Err(invalid!("candidate {i} has no accuracies this round"))
                } else {
                    Ok(y.iter().sum::<f64>() / y.len() as f64)
                }
            })
            .collect()
    }
}

/// Outcome of closing one round on one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRoundUpdate {
    pub mean_accuracy: Vec<Option<f64>>,
    pub s_larger: Option<f64>,
    pub bonus: Option<Vec<f64>>,
    pub prune: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub edges: Vec<EdgeSelection>,
    /// Total sampled-architecture evaluations so far.
    pub total: u64,
    pub delta: f64,
}

impl SelectionState {
    pub fn new(edges: usize, k: usize, delta: f64) -> Self {
        Self {
            edges: (0..edges).map(|_| EdgeSelection::new(k)).collect(),
            total: 0,
            delta,
        }
    }

    pub fn begin_round(&mut self, smaller: &[Vec<usize>]) {
        for (edge, sel) in self.edges.iter_mut().zip(smaller) {
            edge.y.iter_mut().for_each(Vec::clear);
            edge.q.iter_mut().for_each(|q| *q = false);
            for &i in sel {
                edge.q[i] = true;
            }
        }
    }

    /// Records one sampled architecture (`arch[e]` = candidate index on edge `e`).
    pub fn record(&mut self, arch: &[usize], accuracy: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(invalid!("accuracy {accuracy} outside [0, 1]"));
        }
        if arch.len() != self.edges.len() {
            return Err(invalid!("architecture covers {} of {} edges", arch.len(), self.edges.len()));
        }
        self.total += 1;
        for (edge, &i) in self.edges.iter_mut().zip(arch) {
            edge.n[i] += 1;
            edge.y[i].push(accuracy);
        }
        Ok(())
    }

    /// Updates `s` on edge `e` (with the exploration bonus when `ucb` is set)
    /// and picks the candidate to prune. Candidates with an infinite bonus
    /// cannot be pruned; the bonus is only added to `s` where it is finite.
    pub fn close_edge(&mut self, e: usize, ucb: bool) -> Result<EdgeRoundUpdate> {
        let delta = self.delta;
        let total = self.total;
        let edge = &mut self.edges[e];
        let k = edge.len();
        if k < 2 {
            return Err(invalid!("edge {e} has only {k} candidate left"));
        }
        let means = edge.mean_accuracies()?;
        if means.is_empty() {
            return Err(invalid!("edge {e} has an empty smaller set"));
        }
        let sm = s_smaller(&means)?;
        let mut full = vec![0.0; k];
        let mut it = sm.iter();
        for (i, &q) in edge.q.iter().enumerate() {
            if q {
                full[i] = *it.next().expect("one likelihood per member");
            }
        }
        let all = edge.q.iter().all(|&q| q);
        let larger = (!all).then(|| s_larger(&sm, k));
        update_s(&mut edge.s, &edge.q, &full, larger.unwrap_or(0.0));
        let mut protected = vec![false; k];
        let bonus = if ucb {
            let b: Vec<f64> = edge.n.iter().map(|&n| ucb_bonus(delta, total, n)).collect();
            for (i, &v) in b.iter().enumerate() {
                if v.is_finite() {
                    edge.s[i] += v;
                } else {
                    protected[i] = true;
                }
            }
            Some(b)
        } else {
            None
        };
        let prune = prune_index(&edge.s, &protected).unwrap_or(0);
        let mut mean_accuracy = vec![None; k];
        let mut it = means.iter();
        for (i, &q) in edge.q.iter().enumerate() {
            if q {
                mean_accuracy[i] = it.next().copied();
            }
        }
        if !edge.s.iter().all(|v| v.is_finite()) {
            return Err(crate::Error::NonFinite(format!("selection likelihood on edge {e}")));
        }
        Ok(EdgeRoundUpdate {
            mean_accuracy,
            s_larger: larger,
            bonus,
            prune,
        })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn smaller_half_by_alpha() {
        let alpha = [8., 7., 6., 5., 4., 3., 2., 1.];
        assert_eq!(select_smaller(&alpha, false).unwrap(), vec![4, 5, 6, 7]);
        assert_eq!(select_smaller(&[0.3, 0.1, 0.2], false).unwrap().len(), 2);
        assert_eq!(select_smaller(&alpha, true).unwrap(), (0..8).collect::<Vec<_>>());
        assert_eq!(select_smaller(&[1.0, 1.0, 1.0, 1.0], false).unwrap(), vec![0, 1]);
        assert!(select_smaller(&[1.0], false).is_err());
    }

    #[test]
    fn softmax_of_mean_accuracies() {
        let uniform = s_smaller(&[0.4; 4]).unwrap();
        assert!(uniform.iter().all(|&v| (v - 0.25).abs() < 1e-12));
        let two = s_smaller(&[0.0, 3f64.ln()]).unwrap();
        assert!((two[0] - 0.25).abs() < 1e-12 && (two[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn larger_midpoint() {
        assert!((s_larger(&[0.3, 0.7], 4) - 0.6).abs() < 1e-12);
        assert!((s_larger(&[0.25; 4], 8) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn decay_recursion() {
        let mut s = [0.0, 0.4];
        update_s(&mut s, &[true, false], &[0.25, 0.0], 0.6);
        assert_eq!(s, [0.25, 0.8]);
        // Repeating a round with contribution c converges to 2c.
        let mut s = [0.0];
        for r in 1..=30 {
            update_s(&mut s, &[true], &[0.3], 0.0);
            let closed = 0.6 * (1.0 - 0.5f64.powi(r));
            assert!((s[0] - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn bonus_values() {
        let b = ucb_bonus(2.0, 8, 2);
        assert!((b - 2.0 * 8f64.ln().sqrt()).abs() < 1e-9);
        assert!((b - 2.884).abs() < 1e-3);
        assert!(ucb_bonus(2.0, 8, 8) < ucb_bonus(2.0, 8, 2));
        assert!(ucb_bonus(2.0, 16, 2) > b);
        assert!(ucb_bonus(2.0, 8, 0).is_infinite());
    }

    #[test]
    fn prune_argmin() {
        assert_eq!(prune_index(&[0.5, 0.1, 0.4], &[]), Some(1));
        assert_eq!(prune_index(&[0.2, 0.2], &[]), Some(0));
        assert_eq!(prune_index(&[0.1, 0.5], &[true, false]), Some(1));
    }

    #[test]
    fn loop_arithmetic() {
        assert_eq!(planned_evaluations(8, 3, false), 57);
        assert_eq!(planned_evaluations(8, 3, true), 105);
    }

    #[test]
    fn close_edge_uses_smaller_set() {
        let mut st = SelectionState::new(1, 4, 2.0);
        st.begin_round(&[vec![0, 2]]);
        for _ in 0..3 {
            st.record(&[0], 0.2).unwrap();
            st.record(&[2], 0.8).unwrap();
        }
        let up = st.close_edge(0, false).unwrap();
        let e = &st.edges[0];
        let p = s_smaller(&[0.2, 0.8]).unwrap();
        assert!((e.s[0] - p[0]).abs() < 1e-12 && (e.s[2] - p[1]).abs() < 1e-12);
        let larger = s_larger(&p, 4);
        assert_eq!(e.s[1], larger);
        assert_eq!(up.prune, 0);
        assert_eq!(e.n, vec![3, 0, 3, 0]);
        assert_eq!(st.total, 6);
        assert!(st.record(&[1], 1.5).is_err());
    }

    proptest! {
        #[test]
        fn prune_is_shift_invariant(s in prop::collection::vec(-10.0f64..10.0, 2..9), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            let a = prune_index(&s, &[]).unwrap();
            let b = prune_index(&shifted, &[]).unwrap();
            // Shifting can merge near-ties through rounding; the chosen values must still be minimal.
            prop_assert!((s[b] - s[a]).abs() < 1e-9);
        }

        #[test]
        fn larger_between_mean_and_max(raw in prop::collection::vec(-3.0f64..3.0, 1..8)) {
            let p = s_smaller(&raw).unwrap();
            let m = p.len();
            let v = s_larger(&p, 2 * m);
            let max = p.iter().copied().fold(f64::MIN, f64::max);
            prop_assert!(v <= max + 1e-12 && v >= 1.0 / m as f64 - 1e-12);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
