//! Histogram-based CART regression trees (variance-reduction splits).
//!
//! Features are binned once per training matrix: a feature with at most
//! `MAX_BINS` distinct values gets one bin per value, otherwise quantile
//! cut points. A split sends `x <= threshold` left, where the threshold is
//! the midpoint between adjacent observed values.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::stats;

pub const MAX_BINS: usize = 256;
const SMALL_NODE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
        n: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Weighted SSE reduction achieved by the split.
        gain: f64,
        n: usize,
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
}

impl RegressionTree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Multiply every node value (boosting shrinkage).
    pub fn scale(&mut self, factor: f64) {
        for node in &mut self.nodes {
            match node {
                Node::Leaf { value, .. } | Node::Split { value, .. } => *value *= factor,
            }
        }
    }

    /// Total split gain per feature.
    pub fn feature_gains(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.n_features];
        for node in &self.nodes {
            if let Node::Split { feature, gain, .. } = node {
                g[*feature] += gain;
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means all.
    pub mtry: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 6,
            min_leaf: 5,
            mtry: None,
        }
    }
}

/// Column-wise bin codes plus the cut points that define them.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    cuts: Vec<Vec<f64>>,
    codes: Vec<Vec<u16>>,
    nrows: usize,
}

impl BinnedMatrix {
    pub fn new(x: &Matrix) -> Self {
        let mut cuts = Vec::with_capacity(x.ncols());
        let mut codes = Vec::with_capacity(x.ncols());
        for j in 0..x.ncols() {
            let col = x.column(j);
            let c = cut_points(&col);
            codes.push(col.iter().map(|&v| bin_of(&c, v)).collect());
            cuts.push(c);
        }
        BinnedMatrix {
            cuts,
            codes,
            nrows: x.nrows(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.cuts.len()
    }
}

fn cut_points(col: &[f64]) -> Vec<f64> {
    let mut v = stats::sorted_copy(col);
    v.dedup();
    if v.len() <= 1 {
        return Vec::new();
    }
    let values: Vec<f64> = if v.len() <= MAX_BINS {
        v
    } else {
        // observed values at evenly spaced ranks
        let mut q: Vec<f64> = (0..MAX_BINS).map(|i| v[i * (v.len() - 1) / (MAX_BINS - 1)]).collect();
        q.dedup();
        q
    };
    values.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Number of cut points strictly below `v`; `v <= cuts[b]` iff bin <= b.
fn bin_of(cuts: &[f64], v: f64) -> u16 {
    cuts.partition_point(|&c| c < v) as u16
}

struct Builder<'a> {
    data: &'a BinnedMatrix,
    y: &'a [f64],
    params: TreeParams,
    nodes: Vec<Node>,
}

struct Best {
    feature: usize,
    bin: usize,
    gain: f64,
}

impl Builder<'_> {
    fn build(&mut self, rows: &mut [usize], depth: usize, rng: &mut Option<&mut Rng>) -> usize {
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let value = sum / n as f64;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value, n });
        if depth >= self.params.max_depth || n < 2 * self.params.min_leaf.max(1) {
            return id;
        }
        let features: Vec<usize> = match (self.params.mtry, rng.as_deref_mut()) {
            (Some(m), Some(r)) if m < self.data.ncols() => self.draw_features(rows, m.max(1), r),
            _ => (0..self.data.ncols()).collect(),
        };
        let Some(best) = self.best_split(rows, sum, &features) else {
            return id;
        };
        let codes = &self.data.codes[best.feature];
        // partition in place: left block first
        let mut split = 0;
        for i in 0..n {
            if codes[rows[i]] as usize <= best.bin {
                rows.swap(i, split);
                split += 1;
            }
        }
        let (l, r) = rows.split_at_mut(split);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: self.data.cuts[best.feature][best.bin],
            left,
            right,
            gain: best.gain,
            n,
            value,
        };
        id
    }

    /// Visit features in random order until `m` that vary within the node
    /// have been drawn. Node-constant features do not use up the budget.
    fn draw_features(&self, rows: &[usize], m: usize, rng: &mut Rng) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.ncols()).collect();
        order.shuffle(rng);
        let mut out = Vec::with_capacity(m);
        for f in order {
            let codes = &self.data.codes[f];
            let first = codes[rows[0]];
            if rows.iter().any(|&r| codes[r] != first) {
                out.push(f);
                if out.len() == m {
                    break;
                }
            }
        }
        out
    }

    fn best_split(&self, rows: &[usize], sum: f64, features: &[usize]) -> Option<Best> {
        let n = rows.len() as f64;
        let parent = sum * sum / n;
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<Best> = None;
        let mut consider = |feature: usize, bin: usize, sl: f64, nl: usize| {
            let nr = rows.len() - nl;
            if nl < min_leaf || nr < min_leaf {
                return;
            }
            let sr = sum - sl;
            let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent;
            let better = match &best {
                None => gain > 0.0,
                Some(b) => gain > b.gain,
            };
            if better && gain > 1e-12 * parent.abs().max(1e-300) {
                best = Some(Best { feature, bin, gain });
            }
        };
        for &f in features {
            let cuts = &self.data.cuts[f];
            if cuts.is_empty() {
                continue;
            }
            let codes = &self.data.codes[f];
            if rows.len() < SMALL_NODE {
                let mut pairs: Vec<(u16, f64)> = rows.iter().map(|&r| (codes[r], self.y[r])).collect();
                pairs.sort_by(|a, b| a.0.cmp(&b.0));
                let (mut sl, mut nl) = (0.0, 0usize);
                for i in 0..pairs.len() - 1 {
                    sl += pairs[i].1;
                    nl += 1;
                    if pairs[i].0 != pairs[i + 1].0 {
                        consider(f, pairs[i].0 as usize, sl, nl);
                    }
                }
            } else {
                let nb = cuts.len() + 1;
                let mut hs = vec![0.0; nb];
                let mut hn = vec![0usize; nb];
                for &r in rows {
                    let b = codes[r] as usize;
                    hs[b] += self.y[r];
                    hn[b] += 1;
                }
                let (mut sl, mut nl) = (0.0, 0usize);
                for b in 0..nb - 1 {
                    sl += hs[b];
                    nl += hn[b];
                    if hn[b] > 0 {
                        consider(f, b, sl, nl);
                    }
                }
            }
        }
        best
    }
}

/// Grow a tree on `rows` of `data` (repeats allowed, e.g. a bootstrap).
pub fn grow(data: &BinnedMatrix, y: &[f64], rows: &[usize], params: TreeParams, rng: Option<&mut Rng>) -> RegressionTree {
    let mut b = Builder {
        data,
        y,
        params,
        nodes: Vec::new(),
    };
    let mut rows = rows.to_vec();
    let mut rng = rng;
    if !rows.is_empty() {
        b.build(&mut rows, 0, &mut rng);
    } else {
        b.nodes.push(Node::Leaf { value: 0.0, n: 0 });
    }
    RegressionTree {
        nodes: b.nodes,
        n_features: data.ncols(),
    }
}

/// Convenience: bin `x` and grow on all rows.
pub fn fit_tree(x: &Matrix, y: &[f64], params: TreeParams) -> RegressionTree {
    let data = BinnedMatrix::new(x);
    let rows: Vec<usize> = (0..x.nrows()).collect();
    grow(&data, y, &rows, params, None)
}
