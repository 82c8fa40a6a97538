use serde::{Deserialize, Serialize};

use crate::numeric::softmax;

/// Portion of the largest feature variance added to every variance.
const VAR_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct GaussianNaiveBayes {
    log_prior: [f64; 2],
    mean: [Vec<f64>; 2],
    var: [Vec<f64>; 2],
}

impl GaussianNaiveBayes {
    pub fn fit(xs: &[&[f64]], ys: &[usize]) -> Self {
        let d = xs[0].len();
        let n = xs.len() as f64;
        let mut count = [0.0f64; 2];
        let mut mean = [vec![0.0; d], vec![0.0; d]];
        for (x, &y) in xs.iter().zip(ys) {
            count[y] += 1.0;
            mean[y].iter_mut().zip(x.iter()).for_each(|(m, v)| *m += v);
        }
        for c in 0..2 {
            mean[c].iter_mut().for_each(|m| *m /= count[c]);
        }
        let mut var = [vec![0.0; d], vec![0.0; d]];
        for (x, &y) in xs.iter().zip(ys) {
            for j in 0..d {
                let diff = x[j] - mean[y][j];
                var[y][j] += diff * diff;
            }
        }
        for c in 0..2 {
            var[c].iter_mut().for_each(|v| *v /= count[c]);
        }

        // overall per-feature variance sets the smoothing scale
        let max_var = (0..d)
            .map(|j| {
                let mu = xs.iter().map(|x| x[j]).sum::<f64>() / n;
                xs.iter().map(|x| (x[j] - mu).powi(2)).sum::<f64>() / n
            })
            .fold(0.0, f64::max);
        let eps = (VAR_SMOOTHING * max_var).max(1e-12);
        for c in 0..2 {
            var[c].iter_mut().for_each(|v| *v += eps);
        }
        let log_prior = [(count[0] / n).ln(), (count[1] / n).ln()];
        GaussianNaiveBayes { log_prior, mean, var }
    }

    pub fn predict_proba(&self, x: &[f64]) -> [f64; 2] {
        let mut joint = [0.0; 2];
        for c in 0..2 {
            let ll: f64 = x
                .iter()
                .zip(&self.mean[c])
                .zip(&self.var[c])
                .map(|((v, m), s2)| -0.5 * ((2.0 * std::f64::consts::PI * s2).ln() + (v - m).powi(2) / s2))
                .sum();
            joint[c] = self.log_prior[c] + ll;
        }
        let p = softmax(&joint);
        [p[0], p[1]]
    }
}
