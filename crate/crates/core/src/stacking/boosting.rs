use serde::{Deserialize, Serialize};

use super::tree::{fit_newton, NewtonTreeParams, Tree};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BoostingParams {
    pub rounds: usize,
    pub tree: NewtonTreeParams,
}

impl Default for BoostingParams {
    // the usual XGBoost defaults: eta 0.3, depth 6, lambda 1, gamma 0, min_child_weight 1
    fn default() -> Self {
        BoostingParams {
            rounds: 100,
            tree: NewtonTreeParams { max_depth: 6, lambda: 1.0, gamma: 0.0, min_child_weight: 1.0, eta: 0.3 },
        }
    }
}

/// Second-order gradient boosting on the logistic loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct GradientBoostedTrees {
    base_margin: f64,
    trees: Vec<Tree>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl GradientBoostedTrees {
    pub fn fit(xs: &[&[f64]], ys: &[usize], params: &BoostingParams) -> Self {
        let n = xs.len();
        let mut margin = vec![0.0; n];
        let mut trees = Vec::with_capacity(params.rounds);
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for _ in 0..params.rounds {
            for i in 0..n {
                let p = sigmoid(margin[i]);
                grad[i] = p - ys[i] as f64;
                hess[i] = (p * (1.0 - p)).max(1e-16);
            }
            let tree = fit_newton(xs, &grad, &hess, &params.tree);
            for (m, x) in margin.iter_mut().zip(xs) {
                *m += tree.predict(x);
            }
            trees.push(tree);
        }
        GradientBoostedTrees { base_margin: 0.0, trees }
    }

    pub fn predict_male(&self, x: &[f64]) -> f64 {
        sigmoid(self.base_margin + self.trees.iter().map(|t| t.predict(x)).sum::<f64>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boosting_drives_training_loss_down() {
        let data: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 20) as f64 / 20.0, (i / 20) as f64]).collect();
        let xs: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let ys: Vec<usize> = data.iter().map(|v| (v[0] > 0.5) as usize).collect();
        let m = GradientBoostedTrees::fit(&xs, &ys, &BoostingParams::default());
        for (x, &y) in xs.iter().zip(&ys) {
            let p = m.predict_male(x);
            assert!(if y == 1 { p > 0.9 } else { p < 0.1 }, "p={p} y={y}");
        }
    }
}
