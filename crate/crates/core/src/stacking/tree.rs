//! Binary decision trees stored as an arena, with a Gini classification
//! builder (random forest) and a second-order regression builder
//! (gradient boosting).

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return *v,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    #[cfg(test)]
    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    fn push(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }
}

/// Samples sorted by one feature; ties keep their incoming order.
fn sorted_by(xs: &[&[f64]], samples: &[usize], f: usize) -> Vec<usize> {
    let mut order = samples.to_vec();
    order.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]));
    order
}

fn gini_impurity(n: f64, pos: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

/// Gini tree on labels in {0, 1}; leaves hold the fraction of class 1.
/// `samples` may contain repeats (bootstrap multiplicity).
pub(crate) fn fit_gini<R: Rng>(xs: &[&[f64]], ys: &[usize], samples: &[usize], max_features: usize, rng: &mut R) -> Tree {
    let mut tree = Tree { nodes: Vec::new() };
    let d = xs.first().map_or(0, |x| x.len());
    grow_gini(&mut tree, xs, ys, samples.to_vec(), max_features.clamp(1, d.max(1)), d, rng);
    tree
}

fn grow_gini<R: Rng>(
    tree: &mut Tree,
    xs: &[&[f64]],
    ys: &[usize],
    samples: Vec<usize>,
    max_features: usize,
    d: usize,
    rng: &mut R,
) -> usize {
    let n = samples.len() as f64;
    let pos = samples.iter().filter(|&&i| ys[i] == 1).count() as f64;
    let leaf_value = if n > 0.0 { pos / n } else { 0.5 };
    if samples.len() < 2 || pos == 0.0 || pos == n {
        return tree.push(Node::Leaf(leaf_value));
    }

    let parent = n * gini_impurity(n, pos);
    let mut best: Option<(f64, usize, f64)> = None;
    for f in sample(rng, d, max_features).into_iter() {
        let order = sorted_by(xs, &samples, f);
        let mut left_n = 0.0;
        let mut left_pos = 0.0;
        for w in 0..order.len() - 1 {
            let i = order[w];
            left_n += 1.0;
            left_pos += (ys[i] == 1) as u8 as f64;
            let (a, b) = (xs[i][f], xs[order[w + 1]][f]);
            if a == b {
                continue;
            }
            let right_n = n - left_n;
            let score = left_n * gini_impurity(left_n, left_pos) + right_n * gini_impurity(right_n, pos - left_pos);
            if best.map_or(true, |(s, _, _)| score < s) {
                best = Some((score, f, a + (b - a) / 2.0));
            }
        }
    }

    match best {
        Some((score, feature, threshold)) if score < parent - 1e-12 => {
            let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| xs[i][feature] <= threshold);
            let id = tree.push(Node::Leaf(leaf_value));
            let left = grow_gini(tree, xs, ys, l, max_features, d, rng);
            let right = grow_gini(tree, xs, ys, r, max_features, d, rng);
            tree.nodes[id] = Node::Split { feature, threshold, left, right };
            id
        }
        _ => tree.push(Node::Leaf(leaf_value)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct NewtonTreeParams {
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub eta: f64,
}

/// Regression tree on per-sample gradients and hessians. Leaves hold the
/// shrunken Newton step `-eta * G / (H + lambda)`.
pub(crate) fn fit_newton(xs: &[&[f64]], grad: &[f64], hess: &[f64], params: &NewtonTreeParams) -> Tree {
    let mut tree = Tree { nodes: Vec::new() };
    let d = xs.first().map_or(0, |x| x.len());
    let all: Vec<usize> = (0..xs.len()).collect();
    grow_newton(&mut tree, xs, grad, hess, all, 0, d, params);
    tree
}

#[allow(clippy::too_many_arguments)]
fn grow_newton(
    tree: &mut Tree,
    xs: &[&[f64]],
    grad: &[f64],
    hess: &[f64],
    samples: Vec<usize>,
    depth: usize,
    d: usize,
    p: &NewtonTreeParams,
) -> usize {
    let g: f64 = samples.iter().map(|&i| grad[i]).sum();
    let h: f64 = samples.iter().map(|&i| hess[i]).sum();
    let leaf = -p.eta * g / (h + p.lambda);
    if depth >= p.max_depth || samples.len() < 2 {
        return tree.push(Node::Leaf(leaf));
    }
    let parent_score = g * g / (h + p.lambda);
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..d {
        let order = sorted_by(xs, &samples, f);
        let (mut gl, mut hl) = (0.0, 0.0);
        for w in 0..order.len() - 1 {
            let i = order[w];
            gl += grad[i];
            hl += hess[i];
            let (a, b) = (xs[i][f], xs[order[w + 1]][f]);
            if a == b {
                continue;
            }
            let (gr, hr) = (g - gl, h - hl);
            if hl < p.min_child_weight || hr < p.min_child_weight {
                continue;
            }
            let gain = 0.5 * (gl * gl / (hl + p.lambda) + gr * gr / (hr + p.lambda) - parent_score) - p.gamma;
            if gain > 0.0 && best.map_or(true, |(s, _, _)| gain > s) {
                best = Some((gain, f, a + (b - a) / 2.0));
            }
        }
    }
    match best {
        Some((_, feature, threshold)) => {
            let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| xs[i][feature] <= threshold);
            let id = tree.push(Node::Leaf(leaf));
            let left = grow_newton(tree, xs, grad, hess, l, depth + 1, d, p);
            let right = grow_newton(tree, xs, grad, hess, r, depth + 1, d, p);
            tree.nodes[id] = Node::Split { feature, threshold, left, right };
            id
        }
        None => tree.push(Node::Leaf(leaf)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::seeded_rng;

    #[test]
    fn gini_tree_fits_threshold() {
        let data: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 0.0]).collect();
        let xs: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let ys: Vec<usize> = (0..20).map(|i| (i >= 12) as usize).collect();
        let all: Vec<usize> = (0..20).collect();
        let tree = fit_gini(&xs, &ys, &all, 2, &mut seeded_rng(0));
        assert_eq!(tree.n_leaves(), 2);
        assert_eq!(tree.predict(&[11.0, 0.0]), 0.0);
        assert_eq!(tree.predict(&[11.6, 0.0]), 1.0);
    }

    #[test]
    fn constant_features_give_a_leaf() {
        let data = vec![vec![1.0]; 6];
        let xs: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let ys = vec![0, 1, 0, 1, 1, 1];
        let tree = fit_gini(&xs, &ys, &(0..6).collect::<Vec<_>>(), 1, &mut seeded_rng(0));
        assert_eq!(tree.n_leaves(), 1);
        assert!((tree.predict(&[1.0]) - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn newton_leaf_is_regularised_step() {
        let data = vec![vec![0.0]; 4];
        let xs: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let grad = vec![-0.5, -0.5, -0.5, 0.5];
        let hess = vec![0.25; 4];
        let p = NewtonTreeParams { max_depth: 3, lambda: 1.0, gamma: 0.0, min_child_weight: 1.0, eta: 0.3 };
        let tree = fit_newton(&xs, &grad, &hess, &p);
        assert!((tree.predict(&[0.0]) - 0.3 * 1.0 / 2.0).abs() < 1e-12);
    }
}
