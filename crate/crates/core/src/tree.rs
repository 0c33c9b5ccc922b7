//! Axis-aligned binary decision trees: best-first CART growth on weighted
//! samples, weakest-link pruning, JSON and DOT export.

use std::collections::BinaryHeap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::{Action, Policy, State};
use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Classify,
    Regress,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    /// Samples with `x[feature] <= threshold` go left.
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

/// Training statistics kept on every node so that any subtree can be
/// collapsed without revisiting the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Class or regression value predicted if this node were a leaf.
    pub value: f64,
    pub n_samples: usize,
    pub weight: f64,
    /// Per-class weight (classification only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_weight: Vec<f64>,
    /// Σw·y and Σw·y² (regression only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<(f64, f64)>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    /// Weighted training error of this node as a leaf: misclassified
    /// weight, or weighted squared error around the mean.
    pub fn leaf_error(&self) -> f64 {
        match self.moments {
            Some((wy, wy2)) if self.weight > 0.0 => (wy2 - wy * wy / self.weight).max(0.0),
            Some(_) => 0.0,
            None => self.weight - self.class_weight.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub mode: Mode,
    #[serde(default)]
    pub n_classes: usize,
    #[serde(default)]
    pub feature_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_leaves: usize,
    pub mode: Mode,
    /// Number of classes; labels must lie in `0..n_classes`.
    pub n_classes: usize,
    pub feature_names: Vec<String>,
}

impl FitOptions {
    pub fn classify(max_leaves: usize, n_classes: usize) -> Self {
        Self { max_leaves, mode: Mode::Classify, n_classes, feature_names: Vec::new() }
    }

    pub fn regress(max_leaves: usize) -> Self {
        Self { max_leaves, mode: Mode::Regress, n_classes: 0, feature_names: Vec::new() }
    }
}

struct Data<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    w: &'a [f64],
    mode: Mode,
    n_classes: usize,
}

/// Sufficient statistics of a sample subset.
#[derive(Clone)]
struct Stats {
    weight: f64,
    class_weight: Vec<f64>,
    wy: f64,
    wy2: f64,
}

impl Stats {
    fn empty(data: &Data) -> Self {
        Self { weight: 0.0, class_weight: vec![0.0; data.n_classes], wy: 0.0, wy2: 0.0 }
    }

    fn add(&mut self, data: &Data, i: usize, sign: f64) {
        let w = data.w[i] * sign;
        self.weight += w;
        match data.mode {
            Mode::Classify => self.class_weight[data.y[i] as usize] += w,
            Mode::Regress => {
                self.wy += w * data.y[i];
                self.wy2 += w * data.y[i] * data.y[i];
            }
        }
    }

    /// Weighted impurity: W·Gini or the weighted sum of squared deviations.
    fn impurity(&self, mode: Mode) -> f64 {
        if self.weight <= 0.0 {
            return 0.0;
        }
        match mode {
            Mode::Classify => self.weight - self.class_weight.iter().map(|c| c * c).sum::<f64>() / self.weight,
            Mode::Regress => self.wy2 - self.wy * self.wy / self.weight,
        }
    }

    fn scale(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Classify => self.weight,
            Mode::Regress => self.wy2.abs() + self.weight,
        }
    }

    fn node(&self, n_samples: usize, mode: Mode) -> Node {
        let value = match mode {
            Mode::Classify => argmax(&self.class_weight) as f64,
            Mode::Regress if self.weight > 0.0 => self.wy / self.weight,
            Mode::Regress => 0.0,
        };
        Node {
            split: None,
            value,
            n_samples,
            weight: self.weight,
            class_weight: if mode == Mode::Classify { self.class_weight.clone() } else { Vec::new() },
            moments: (mode == Mode::Regress).then_some((self.wy, self.wy2)),
        }
    }
}

/// Index of the largest entry; the lowest index wins ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn best_split(data: &Data, idx: &[usize], total: &Stats) -> Option<Candidate> {
    let n_features = data.x[idx[0]].len();
    let parent = total.impurity(data.mode);
    let scale = total.scale(data.mode);
    let valid = 1e-10 * scale;
    let tie = 1e-12 * scale;
    let mut best: Option<Candidate> = None;
    let mut order = idx.to_vec();
    for f in 0..n_features {
        order.sort_by(|&a, &b| data.x[a][f].total_cmp(&data.x[b][f]));
        let mut left = Stats::empty(data);
        for k in 0..order.len() - 1 {
            left.add(data, order[k], 1.0);
            let (xa, xb) = (data.x[order[k]][f], data.x[order[k + 1]][f]);
            if xa == xb {
                continue;
            }
            let mut right = total.clone();
            right.weight -= left.weight;
            for (r, l) in right.class_weight.iter_mut().zip(&left.class_weight) {
                *r -= l;
            }
            right.wy -= left.wy;
            right.wy2 -= left.wy2;
            let gain = parent - left.impurity(data.mode) - right.impurity(data.mode).max(0.0);
            if gain <= valid {
                continue;
            }
            let mut threshold = xa + (xb - xa) / 2.0;
            if threshold >= xb {
                // adjacent floats: the midpoint rounds up
                threshold = xa;
            }
            let better = match &best {
                None => true,
                Some(b) => gain > b.gain + tie,
            };
            if better {
                best = Some(Candidate { gain, feature: f, threshold });
            }
        }
    }
    best
}

#[derive(PartialEq)]
struct Frontier {
    gain: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.gain.total_cmp(&other.gain).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

struct Grower<'a> {
    data: &'a Data<'a>,
    nodes: Vec<Node>,
    members: Vec<Vec<usize>>,
    pending: Vec<Option<Candidate>>,
    heap: BinaryHeap<Frontier>,
}

impl Grower<'_> {
    fn push(&mut self, idx: Vec<usize>) -> usize {
        let mut s = Stats::empty(self.data);
        for &i in &idx {
            s.add(self.data, i, 1.0);
        }
        let id = self.nodes.len();
        self.nodes.push(s.node(idx.len(), self.data.mode));
        let cand = if idx.len() > 1 { best_split(self.data, &idx, &s) } else { None };
        if let Some(c) = &cand {
            self.heap.push(Frontier { gain: c.gain, node: id });
        }
        self.members.push(idx);
        self.pending.push(cand);
        id
    }
}

/// Grow a tree best-first: the frontier leaf with the largest impurity
/// decrease is split next, until `max_leaves` leaves exist or no split
/// decreases impurity.
pub fn fit(x: &[Vec<f64>], y: &[f64], w: &[f64], opts: &FitOptions) -> Result<DecisionTree> {
    if x.is_empty() {
        return domain("cannot fit a tree on an empty dataset");
    }
    if y.len() != x.len() || w.len() != x.len() {
        return domain("features, labels and weights differ in length");
    }
    if opts.max_leaves == 0 {
        return domain("max_leaves must be at least 1");
    }
    let d = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return domain(format!("sample {i} has {} features, expected {d}", row.len()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return domain(format!("sample {i} has a non-finite feature"));
        }
        if !(w[i] >= 0.0 && w[i].is_finite()) {
            return domain(format!("sample {i} has invalid weight {}", w[i]));
        }
        match opts.mode {
            Mode::Classify if !(y[i] >= 0.0 && y[i].fract() == 0.0 && (y[i] as usize) < opts.n_classes) => {
                return domain(format!("label {} of sample {i} outside 0..{}", y[i], opts.n_classes))
            }
            Mode::Regress if !y[i].is_finite() => return domain(format!("label of sample {i} is not finite")),
            _ => {}
        }
    }
    if !opts.feature_names.is_empty() && opts.feature_names.len() != d {
        return domain("feature_names length differs from feature count");
    }
    let data = Data { x, y, w, mode: opts.mode, n_classes: opts.n_classes };

    let mut g = Grower { data: &data, nodes: Vec::new(), members: Vec::new(), pending: Vec::new(), heap: BinaryHeap::new() };
    g.push((0..x.len()).collect());
    let mut leaves = 1;
    while leaves < opts.max_leaves {
        let Some(Frontier { node, .. }) = g.heap.pop() else { break };
        let cand = g.pending[node].take().expect("frontier node has a candidate");
        let idx = std::mem::take(&mut g.members[node]);
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][cand.feature] <= cand.threshold);
        let left = g.push(l);
        let right = g.push(r);
        g.nodes[node].split = Some(Split { feature: cand.feature, threshold: cand.threshold, left, right });
        leaves += 1;
    }
    let nodes = g.nodes;
    Ok(DecisionTree { nodes, mode: opts.mode, n_classes: opts.n_classes, feature_names: opts.feature_names.clone() })
}

impl DecisionTree {
    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, i: usize) -> usize {
            match t.nodes[i].split {
                None => 0,
                Some(s) => 1 + go(t, s.left).max(go(t, s.right)),
            }
        }
        go(self, 0)
    }

    pub fn n_features(&self) -> usize {
        self.nodes.iter().filter_map(|n| n.split.map(|s| s.feature + 1)).max().unwrap_or(0)
    }

    fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        while let Some(s) = self.nodes[i].split {
            i = if x[s.feature] <= s.threshold { s.left } else { s.right };
        }
        i
    }

    /// Predicted class index (as a float) or regression value.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].value
    }

    pub fn predict_class(&self, x: &[f64]) -> usize {
        self.predict(x) as usize
    }

    /// Weighted training error over the leaves, normalized by root weight.
    pub fn training_error(&self) -> f64 {
        let root = self.nodes[0].weight;
        if root <= 0.0 {
            return 0.0;
        }
        self.reachable().into_iter().filter(|&i| self.nodes[i].is_leaf()).map(|i| self.nodes[i].leaf_error()).sum::<f64>()
            / root
    }

    /// Node indices reachable from the root in preorder.
    fn reachable(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0];
        while let Some(i) = stack.pop() {
            out.push(i);
            if let Some(s) = self.nodes[i].split {
                stack.push(s.right);
                stack.push(s.left);
            }
        }
        out
    }

    /// Check structural integrity: every child index points forward, is in
    /// range and has a single parent.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Validation("tree has no nodes".into()));
        }
        let mut parent = vec![false; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(s) = n.split {
                for c in [s.left, s.right] {
                    if c <= i || c >= self.nodes.len() || parent[c] {
                        return Err(Error::Validation(format!("node {i} has invalid child {c}")));
                    }
                    parent[c] = true;
                }
                if !s.threshold.is_finite() {
                    return Err(Error::Validation(format!("node {i} has a non-finite threshold")));
                }
                if !self.feature_names.is_empty() && s.feature >= self.feature_names.len() {
                    return Err(Error::Validation(format!("node {i} splits on unknown feature {}", s.feature)));
                }
            }
            if self.mode == Mode::Classify && !(n.value >= 0.0 && (n.value as usize) < self.n_classes.max(1)) {
                return Err(Error::Validation(format!("node {i} predicts class {} outside range", n.value)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: DecisionTree = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    fn feature_label(&self, f: usize) -> String {
        self.feature_names.get(f).cloned().unwrap_or_else(|| format!("x{f}"))
    }

    /// Graphviz rendering; `class_names` labels classification leaves.
    pub fn to_dot(&self, class_names: &[String]) -> String {
        let mut out = String::from("digraph tree {\n  node [shape=box, fontname=\"Helvetica\"];\n");
        for i in self.reachable() {
            let n = &self.nodes[i];
            let label = match n.split {
                Some(s) => format!("{} <= {}", self.feature_label(s.feature), s.threshold),
                None => match self.mode {
                    Mode::Classify => {
                        let c = n.value as usize;
                        class_names.get(c).cloned().unwrap_or_else(|| format!("class {c}"))
                    }
                    Mode::Regress => format!("{}", n.value),
                },
            };
            let _ = writeln!(out, "  n{i} [label=\"{}\\nsamples = {}\"];", label.replace('"', "\\\""), n.n_samples);
            if let Some(s) = n.split {
                let _ = writeln!(out, "  n{i} -> n{} [label=\"yes\"];", s.left);
                let _ = writeln!(out, "  n{i} -> n{} [label=\"no\"];", s.right);
            }
        }
        out.push_str("}\n");
        out
    }

    /// Renumber reachable nodes in preorder and drop the rest.
    fn compact(&self) -> Self {
        let order = self.reachable();
        let mut map = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            map[old] = new;
        }
        let nodes = order
            .iter()
            .map(|&old| {
                let mut n = self.nodes[old].clone();
                if let Some(s) = &mut n.split {
                    s.left = map[s.left];
                    s.right = map[s.right];
                }
                n
            })
            .collect();
        Self { nodes, ..self.clone() }
    }
}

/// Weakest-link pruning: repeatedly collapse the internal node whose
/// collapse adds the least training error per removed leaf (lowest index on
/// ties) until at most `target_leaves` remain.
pub fn ccp_prune(tree: &DecisionTree, target_leaves: usize) -> Result<DecisionTree> {
    if target_leaves == 0 {
        return domain("target_leaves must be at least 1");
    }
    let mut t = tree.clone();
    let n = t.nodes.len();
    // subtree leaf count and leaf error, recomputed after each collapse
    let mut leaves = vec![0usize; n];
    let mut err = vec![0f64; n];
    loop {
        let order = t.reachable();
        for &i in order.iter().rev() {
            match t.nodes[i].split {
                None => {
                    leaves[i] = 1;
                    err[i] = t.nodes[i].leaf_error();
                }
                Some(s) => {
                    leaves[i] = leaves[s.left] + leaves[s.right];
                    err[i] = err[s.left] + err[s.right];
                }
            }
        }
        if leaves[0] <= target_leaves {
            break;
        }
        let mut weakest: Option<(f64, usize)> = None;
        for &i in &order {
            if t.nodes[i].is_leaf() {
                continue;
            }
            let g = (t.nodes[i].leaf_error() - err[i]) / (leaves[i] - 1) as f64;
            let better = match weakest {
                None => true,
                Some((bg, bi)) => g < bg || (g == bg && i < bi),
            };
            if better {
                weakest = Some((g, i));
            }
        }
        let (_, i) = weakest.expect("a tree with several leaves has an internal node");
        t.nodes[i].split = None;
    }
    Ok(t.compact())
}

impl Policy for DecisionTree {
    fn act(&self, state: &State) -> Action {
        match self.mode {
            Mode::Classify => Action::Discrete(self.predict_class(&state.features)),
            Mode::Regress => Action::Continuous(self.predict(&state.features)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ones(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    #[test]
    fn one_split_separates_threshold_labels() {
        let x: Vec<Vec<f64>> = (0..11).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..11).map(|i| if i > 5 { 1.0 } else { 0.0 }).collect();
        let t = fit(&x, &y, &ones(11), &FitOptions::classify(10, 2)).unwrap();
        assert_eq!(t.depth(), 1);
        let thr = t.nodes[0].split.unwrap().threshold;
        assert!(thr > 5.0 && thr <= 6.0);
        assert_eq!(t.training_error(), 0.0);
    }

    #[test]
    fn constant_labels_give_single_leaf() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let t = fit(&x, &vec![2.0; 20], &ones(20), &FitOptions::classify(50, 3)).unwrap();
        assert_eq!(t.leaf_count(), 1);
        assert_eq!(t.predict(&[100.0, 0.0]), 2.0);
    }

    #[test]
    fn identical_states_conflicting_labels_majority_leaf() {
        let x = vec![vec![1.0]; 5];
        let y = vec![0.0, 1.0, 1.0, 0.0, 1.0];
        let t = fit(&x, &y, &ones(5), &FitOptions::classify(10, 2)).unwrap();
        assert_eq!(t.leaf_count(), 1);
        assert_eq!(t.predict(&[1.0]), 1.0);
        let r = fit(&x, &[1.0, 2.0, 3.0, 4.0, 5.0], &ones(5), &FitOptions::regress(10)).unwrap();
        assert_eq!(r.leaf_count(), 1);
        assert!((r.predict(&[1.0]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn tie_break_prefers_lowest_feature() {
        // both features separate the labels identically
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let t = fit(&x, &[0.0, 1.0], &ones(2), &FitOptions::classify(2, 2)).unwrap();
        assert_eq!(t.nodes[0].split.unwrap().feature, 0);
    }

    #[test]
    fn adjacent_float_values_still_split() {
        let a = 4.5f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let t = fit(&[vec![a], vec![b]], &[0.0, 1.0], &ones(2), &FitOptions::classify(usize::MAX, 2)).unwrap();
        assert_eq!(t.leaf_count(), 2);
        assert_eq!(t.predict(&[a]), 0.0);
        assert_eq!(t.predict(&[b]), 1.0);
    }

    #[test]
    fn regression_split_maximizes_variance_reduction() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let y = vec![1.0, 1.0, 1.0, 1.0, 9.0, 9.0, 9.0, 9.0];
        let t = fit(&x, &y, &ones(8), &FitOptions::regress(2)).unwrap();
        assert_eq!(t.nodes[0].split.unwrap().threshold, 3.5);
        assert_eq!(t.predict(&[0.0]), 1.0);
        assert_eq!(t.predict(&[7.0]), 9.0);
    }

    #[test]
    fn prune_to_one_is_root_majority() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..30).map(|i| ((i / 3) % 3) as f64).collect();
        let t = fit(&x, &y, &ones(30), &FitOptions::classify(100, 3)).unwrap();
        let p = ccp_prune(&t, 1).unwrap();
        assert_eq!(p.leaf_count(), 1);
        assert_eq!(p.nodes.len(), 1);
        let same = ccp_prune(&t, t.leaf_count()).unwrap();
        assert_eq!(same, t);
        assert!(ccp_prune(&t, 0).is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i % 4) as f64]).collect();
        let y: Vec<f64> = (0..12).map(|i| (i % 3) as f64).collect();
        let mut opts = FitOptions::classify(6, 3);
        opts.feature_names = vec!["a".into(), "b".into()];
        let t = fit(&x, &y, &ones(12), &opts).unwrap();
        let back = DecisionTree::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        let mut bad = t.clone();
        if let Some(s) = &mut bad.nodes[0].split {
            s.left = 0;
        }
        assert!(bad.validate().is_err());
        assert!(t.to_dot(&[]).starts_with("digraph tree {"));
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit(&[], &[], &[], &FitOptions::classify(2, 2)).is_err());
        assert!(fit(&[vec![0.0]], &[3.0], &[1.0], &FitOptions::classify(2, 2)).is_err());
        assert!(fit(&[vec![f64::NAN]], &[0.0], &[1.0], &FitOptions::classify(2, 2)).is_err());
        assert!(fit(&[vec![0.0]], &[0.0], &[-1.0], &FitOptions::classify(2, 2)).is_err());
    }

    proptest! {
        #[test]
        fn leaves_bounded_and_prune_monotone(
            pts in prop::collection::vec((0u8..20, 0u8..20, 0usize..4), 5..80),
            m in 1usize..30,
        ) {
            let x: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0 as f64, p.1 as f64]).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.2 as f64).collect();
            let t = fit(&x, &y, &ones(x.len()), &FitOptions::classify(usize::MAX, 4)).unwrap();
            let grown = fit(&x, &y, &ones(x.len()), &FitOptions::classify(m, 4)).unwrap();
            prop_assert!(grown.leaf_count() <= m);
            let mut prev = f64::INFINITY;
            for target in 1..=t.leaf_count() {
                let p = ccp_prune(&t, target).unwrap();
                prop_assert!(p.leaf_count() <= target);
                p.validate().unwrap();
                let e = p.training_error();
                prop_assert!(e <= prev + 1e-12);
                prev = e;
            }
        }
    }
}
