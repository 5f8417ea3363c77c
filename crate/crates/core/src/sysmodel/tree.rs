//! CART regression tree with two-dimensional targets.
//!
//! Splits maximize the reduction of the summed, variance-weighted squared
//! error of both targets, so a target with a large scale cannot dominate
//! split selection. Leaves store the mean target of their rows.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Target = [f64; 2];

/// Row-major feature matrix with paired targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_features: usize,
    pub x: Vec<f64>,
    pub y: Vec<Target>,
}

impl Dataset {
    pub fn new(n_features: usize) -> Self {
        Dataset {
            n_features,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn push(&mut self, row: &[f64], target: Target) {
        debug_assert_eq!(row.len(), self.n_features);
        self.x.extend_from_slice(row);
        self.y.push(target);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    fn value(&self, i: usize, f: usize) -> f64 {
        self.x[i * self.n_features + f]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per split (more are tried only if none of them
    /// admits a valid split).
    pub max_features: usize,
}

/// Serialized as `[feature, threshold, left, right]` or `[d1, d2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split(u32, f64, u32, u32),
    Leaf(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Structural check used after deserialization: children point forward
    /// and in range, features fit the input width.
    pub fn validate(&self, n_features: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match *n {
                Node::Split(f, t, l, r) => {
                    if f as usize >= n_features {
                        return Err(format!("node {i}: feature {f} out of range"));
                    }
                    if !t.is_finite() {
                        return Err(format!("node {i}: non-finite threshold"));
                    }
                    let len = self.nodes.len();
                    for c in [l as usize, r as usize] {
                        if c <= i || c >= len {
                            return Err(format!("node {i}: bad child index {c}"));
                        }
                    }
                }
                Node::Leaf(a, b) => {
                    if !a.is_finite() || !b.is_finite() {
                        return Err(format!("node {i}: non-finite leaf"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn predict(&self, row: &[f64]) -> Target {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf(a, b) => return [a, b],
                Node::Split(f, t, l, r) => {
                    i = if row[f as usize] <= t { l as usize } else { r as usize };
                }
            }
        }
    }

    /// Adds this tree's prediction for every row of `x` (row-major, stride
    /// `n_features`) into `acc`. Rows are routed down the tree in groups, so
    /// each node is visited once per call instead of once per row.
    pub fn accumulate(&self, x: &[f64], n_features: usize, idx: &mut [u32], acc: &mut [Target]) {
        for (i, v) in idx.iter_mut().enumerate() {
            *v = i as u32;
        }
        let mut stack = vec![(0usize, 0usize, idx.len())];
        while let Some((node, lo, hi)) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf(a, b) => {
                    for &r in &idx[lo..hi] {
                        let t = &mut acc[r as usize];
                        t[0] += a;
                        t[1] += b;
                    }
                }
                Node::Split(f, t, l, r) => {
                    let part = &mut idx[lo..hi];
                    let mut k = 0;
                    for j in 0..part.len() {
                        if x[part[j] as usize * n_features + f as usize] <= t {
                            part.swap(j, k);
                            k += 1;
                        }
                    }
                    if k > 0 {
                        stack.push((l as usize, lo, lo + k));
                    }
                    if lo + k < hi {
                        stack.push((r as usize, lo + k, hi));
                    }
                }
            }
        }
    }

    /// Like `accumulate` for the Cartesian product of `axes` (row-major,
    /// first axis most significant). The rows reaching a node always form a
    /// sub-product, so each node is visited at most once and no per-row
    /// comparisons are made.
    pub fn accumulate_product<const N: usize>(&self, axes: [&[f64]; N], acc: &mut [Target]) {
        assert!(axes.iter().all(|a| !a.is_empty() && a.len() <= 64), "axis lengths must lie in 1..=64");
        let mut stride = [1usize; N];
        for i in (0..N.saturating_sub(1)).rev() {
            stride[i] = stride[i + 1] * axes[i + 1].len();
        }
        let full: [u64; N] = std::array::from_fn(|i| u64::MAX >> (64 - axes[i].len()));
        let mut stack = vec![(0usize, full)];
        while let Some((node, masks)) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf(a, b) => add_product(0, 0, &masks, &stride, [a, b], acc),
                Node::Split(f, t, l, r) => {
                    let f = f as usize;
                    let mut left = 0u64;
                    let mut m = masks[f];
                    while m != 0 {
                        let k = m.trailing_zeros() as usize;
                        if axes[f][k] <= t {
                            left |= 1 << k;
                        }
                        m &= m - 1;
                    }
                    let right = masks[f] & !left;
                    if left != 0 {
                        let mut lm = masks;
                        lm[f] = left;
                        stack.push((l as usize, lm));
                    }
                    if right != 0 {
                        let mut rm = masks;
                        rm[f] = right;
                        stack.push((r as usize, rm));
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(..) => 0,
                Node::Split(_, _, l, r) => 1 + walk(nodes, l as usize).max(walk(nodes, r as usize)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Fits on the (possibly repeated) row indices `rows`.
    pub fn fit<R: Rng>(
        data: &Dataset,
        rows: Vec<usize>,
        weights: Target,
        params: &TreeParams,
        rng: &mut R,
    ) -> Tree {
        let mut builder = Builder {
            data,
            weights,
            params,
            nodes: Vec::new(),
            scratch: Vec::with_capacity(rows.len()),
        };
        let mut rows = rows;
        builder.grow(&mut rows, 0, rng);
        Tree { nodes: builder.nodes }
    }
}

struct Builder<'a> {
    data: &'a Dataset,
    weights: Target,
    params: &'a TreeParams,
    nodes: Vec<Node>,
    scratch: Vec<(f64, usize)>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn grow<R: Rng>(&mut self, rows: &mut [usize], depth: usize, rng: &mut R) -> u32 {
        let id = self.nodes.len() as u32;
        let n = rows.len();
        let mut sum = [0.0; 2];
        for &r in rows.iter() {
            let y = self.data.y[r];
            sum[0] += y[0];
            sum[1] += y[1];
        }
        let mean = [sum[0] / n as f64, sum[1] / n as f64];
        self.nodes.push(Node::Leaf(mean[0], mean[1]));

        if depth >= self.params.max_depth || n < 2 * self.params.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(rows, sum, rng) else {
            return id;
        };

        let mut lo = 0;
        for k in 0..n {
            if self.data.value(rows[k], best.feature) <= best.threshold {
                rows.swap(k, lo);
                lo += 1;
            }
        }
        let (left_rows, right_rows) = rows.split_at_mut(lo);
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        self.nodes[id as usize] = Node::Split(best.feature as u32, best.threshold, left, right);
        id
    }

    fn best_split<R: Rng>(&mut self, rows: &[usize], total: Target, rng: &mut R) -> Option<BestSplit> {
        let n = rows.len();
        let min_leaf = self.params.min_leaf.max(1);
        let w = self.weights;
        let parent = w[0] * total[0] * total[0] / n as f64 + w[1] * total[1] * total[1] / n as f64;

        let mut features: Vec<usize> = (0..self.data.n_features).collect();
        features.shuffle(rng);

        let mut best: Option<BestSplit> = None;
        for (visited, &f) in features.iter().enumerate() {
            if visited >= self.params.max_features && best.is_some() {
                break;
            }
            self.scratch.clear();
            self.scratch.extend(rows.iter().map(|&r| (self.data.value(r, f), r)));
            self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if self.scratch[0].0 == self.scratch[n - 1].0 {
                continue;
            }

            let mut left = [0.0; 2];
            for k in 0..n - 1 {
                let y = self.data.y[self.scratch[k].1];
                left[0] += y[0];
                left[1] += y[1];
                let nl = k + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let (v, next) = (self.scratch[k].0, self.scratch[k + 1].0);
                if v == next {
                    continue;
                }
                let right = [total[0] - left[0], total[1] - left[1]];
                let score = w[0] * (left[0] * left[0] / nl as f64 + right[0] * right[0] / nr as f64)
                    + w[1] * (left[1] * left[1] / nl as f64 + right[1] * right[1] / nr as f64);
                let gain = score - parent;
                if gain > 1e-12 * parent.abs().max(1e-300) && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: v + (next - v) / 2.0,
                        gain,
                    });
                }
            }
        }
        best
    }
}

fn add_product<const N: usize>(i: usize, base: usize, masks: &[u64; N], stride: &[usize; N], v: Target, acc: &mut [Target]) {
    if i == N {
        acc[base][0] += v[0];
        acc[base][1] += v[1];
        return;
    }
    let mut m = masks[i];
    while m != 0 {
        let k = m.trailing_zeros() as usize;
        add_product(i + 1, base + k * stride[i], masks, stride, v, acc);
        m &= m - 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn step_data() -> Dataset {
        let mut d = Dataset::new(2);
        for i in 0..100 {
            let x = i as f64;
            let y = if x < 50.0 { [1.0, 10.0] } else { [3.0, 30.0] };
            d.push(&[x, (i % 7) as f64], y);
        }
        d
    }

    #[test]
    fn recovers_a_step() {
        let d = step_data();
        let params = TreeParams { max_depth: 4, min_leaf: 1, max_features: 2 };
        let t = Tree::fit(&d, (0..100).collect(), [1.0, 0.01], &params, &mut seeded(1));
        assert_eq!(t.predict(&[10.0, 0.0]), [1.0, 10.0]);
        assert_eq!(t.predict(&[70.0, 0.0]), [3.0, 30.0]);
        assert_eq!(t.nodes().len(), 3);
        t.validate(2).unwrap();
    }

    #[test]
    fn respects_depth_and_leaf_limits() {
        let mut d = Dataset::new(1);
        for i in 0..200 {
            d.push(&[i as f64], [(i as f64).sin(), (i as f64).cos()]);
        }
        let params = TreeParams { max_depth: 3, min_leaf: 10, max_features: 1 };
        let t = Tree::fit(&d, (0..200).collect(), [1.0, 1.0], &params, &mut seeded(2));
        assert!(t.depth() <= 3);
        assert!(t.nodes().len() <= 15);
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let mut d = Dataset::new(3);
        for i in 0..50 {
            d.push(&[i as f64, 1.0, -(i as f64)], [0.5, 0.25]);
        }
        let params = TreeParams { max_depth: 8, min_leaf: 2, max_features: 2 };
        let t = Tree::fit(&d, (0..50).collect(), [1.0, 1.0], &params, &mut seeded(3));
        assert_eq!(t.nodes(), &[Node::Leaf(0.5, 0.25)]);
    }

    #[test]
    fn node_wire_format() {
        let t = Tree { nodes: vec![Node::Split(1, 0.5, 1, 2), Node::Leaf(1.0, 2.0), Node::Leaf(3.0, 4.0)] };
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, "[[1,0.5,1,2],[1.0,2.0],[3.0,4.0]]");
        assert_eq!(serde_json::from_str::<Tree>(&s).unwrap(), t);
    }

    #[test]
    fn validate_rejects_cycles() {
        let t = Tree { nodes: vec![Node::Split(0, 0.5, 0, 1), Node::Leaf(1.0, 2.0)] };
        assert!(t.validate(1).is_err());
        let t = Tree { nodes: vec![Node::Split(3, 0.5, 1, 2), Node::Leaf(1.0, 2.0), Node::Leaf(1.0, 2.0)] };
        assert!(t.validate(2).is_err());
    }
}
