use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_gini, Tree};
use crate::numeric::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `sqrt(d)`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 100, max_features: None, bootstrap: true }
    }
}

/// Bagged Gini trees; the probability is the mean of leaf class fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct RandomForest {
    trees: Vec<Tree>,
}

impl RandomForest {
    pub fn fit(xs: &[&[f64]], ys: &[usize], params: &ForestParams, seed: u64) -> Self {
        let n = xs.len();
        let d = xs.first().map_or(1, |x| x.len());
        let mtry = params.max_features.unwrap_or_else(|| (d as f64).sqrt().round().max(1.0) as usize);
        let mut rng = seeded_rng(seed);
        let trees = (0..params.n_trees)
            .map(|_| {
                let samples: Vec<usize> =
                    if params.bootstrap { (0..n).map(|_| rng.gen_range(0..n)).collect() } else { (0..n).collect() };
                fit_gini(xs, ys, &samples, mtry, &mut rng)
            })
            .collect();
        RandomForest { trees }
    }

    pub fn predict_male(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_forests_are_identical() {
        let mut rng = seeded_rng(3);
        let data: Vec<Vec<f64>> = (0..60).map(|_| (0..4).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let xs: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let ys: Vec<usize> = data.iter().map(|v| (v[0] + v[1] > 1.0) as usize).collect();
        let a = RandomForest::fit(&xs, &ys, &ForestParams::default(), 9);
        let b = RandomForest::fit(&xs, &ys, &ForestParams::default(), 9);
        assert_eq!(a, b);
        let acc = xs.iter().zip(&ys).filter(|(x, &y)| (a.predict_male(x) > 0.5) as usize == y).count();
        assert!(acc >= 57);
    }
}
