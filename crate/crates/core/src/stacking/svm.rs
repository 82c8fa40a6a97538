//! RBF-kernel C-SVC trained with SMO (second-order working-set selection)
//! and Platt-scaled on cross-validated decision values.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::numeric::seeded_rng;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SvmParams {
    pub c: f64,
    /// `None` picks `1 / (d * Var(X))`.
    pub gamma: Option<f64>,
    pub eps: f64,
    pub probability_folds: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { c: 1.0, gamma: None, eps: 1e-3, probability_folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct SvmClassifier {
    gamma: f64,
    rho: f64,
    support: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    coef: Vec<f64>,
    platt_a: f64,
    platt_b: f64,
}

fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

pub(crate) fn scale_gamma(xs: &[&[f64]]) -> f64 {
    let count = xs.iter().map(|x| x.len()).sum::<usize>() as f64;
    let d = xs.first().map_or(1, |x| x.len()) as f64;
    let mean = xs.iter().flat_map(|x| x.iter()).sum::<f64>() / count;
    let var = xs.iter().flat_map(|x| x.iter()).map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    if var > 0.0 { 1.0 / (d * var) } else { 1.0 }
}

struct Dual {
    alpha: Vec<f64>,
    rho: f64,
}

/// Solves the C-SVC dual on a precomputed kernel matrix; `y` is +-1.
fn solve(k: &[Vec<f64>], y: &[f64], c: f64, eps: f64) -> Dual {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut g = vec![-1.0; n];
    let q = |i: usize, j: usize| y[i] * y[j] * k[i][j];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let max_iter = (100 * n).max(10_000_000);

    for _ in 0..max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let in_up = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if in_up && -y[t] * g[t] >= gmax {
                gmax = -y[t] * g[t];
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else { break };
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            let in_low = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
            if !in_low {
                continue;
            }
            let yg = y[t] * g[t];
            gmax2 = gmax2.max(yg);
            let grad_diff = gmax + yg;
            if grad_diff > 0.0 {
                let quad = k[i][i] + k[t][t] - 2.0 * k[i][t];
                let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= obj_min {
                    obj_min = obj;
                    j_sel = Some(t);
                }
            }
        }
        let Some(j) = j_sel else { break };
        if gmax + gmax2 < eps {
            break;
        }

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = {
            let v = k[i][i] + k[j][j] - 2.0 * k[i][j];
            if v > 0.0 { v } else { TAU }
        };
        if y[i] != y[j] {
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            g[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut free_sum) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * g[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 { free_sum / free as f64 } else { (ub + lb) / 2.0 };
    Dual { alpha, rho }
}

struct RawSvm {
    gamma: f64,
    rho: f64,
    support: Vec<Vec<f64>>,
    coef: Vec<f64>,
}

impl RawSvm {
    fn decision(&self, x: &[f64]) -> f64 {
        self.support.iter().zip(&self.coef).map(|(s, c)| c * rbf(self.gamma, s, x)).sum::<f64>() - self.rho
    }
}

fn fit_raw(xs: &[&[f64]], ys: &[usize], gamma: f64, params: &SvmParams) -> RawSvm {
    let k: Vec<Vec<f64>> = xs.iter().map(|a| xs.iter().map(|b| rbf(gamma, a, b)).collect()).collect();
    let y: Vec<f64> = ys.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect();
    let dual = solve(&k, &y, params.c, params.eps);
    let mut support = Vec::new();
    let mut coef = Vec::new();
    for (t, &a) in dual.alpha.iter().enumerate() {
        if a > 0.0 {
            support.push(xs[t].to_vec());
            coef.push(a * y[t]);
        }
    }
    RawSvm { gamma, rho: dual.rho, support, coef }
}

/// Sigmoid fit of Lin, Lin and Weng; returns `(A, B)` with
/// `P(+1 | f) = 1 / (1 + exp(A f + B))`.
pub(crate) fn sigmoid_train(dec: &[f64], positive: &[bool]) -> (f64, f64) {
    let prior1 = positive.iter().filter(|&&p| p).count() as f64;
    let prior0 = positive.len() as f64 - prior1;
    let (max_iter, min_step, sigma, eps) = (100, 1e-10, 1e-12, 1e-5);
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();
    let objective = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 { ti * z + (-z).exp().ln_1p() } else { (ti - 1.0) * z + z.exp().ln_1p() }
            })
            .sum()
    };
    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let mut fval = objective(a, b);
    for _ in 0..max_iter {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (sigma, sigma, 0.0, 0.0, 0.0);
        for (&f, &ti) in dec.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < eps && g2.abs() < eps {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= min_step {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < min_step {
            break;
        }
    }
    (a, b)
}

impl SvmClassifier {
    pub fn fit(xs: &[&[f64]], ys: &[usize], params: &SvmParams, seed: u64) -> Self {
        let gamma = params.gamma.unwrap_or_else(|| scale_gamma(xs));
        let n = xs.len();
        let folds = params.probability_folds.clamp(2, n.max(2));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut seeded_rng(seed));

        let mut dec = vec![0.0; n];
        for f in 0..folds {
            let (start, end) = (f * n / folds, (f + 1) * n / folds);
            let held = &perm[start..end];
            let rest: Vec<usize> = perm[..start].iter().chain(&perm[end..]).copied().collect();
            let pos = rest.iter().filter(|&&i| ys[i] == 1).count();
            if pos == 0 || pos == rest.len() {
                let v = if pos == 0 { -1.0 } else { 1.0 };
                held.iter().for_each(|&i| dec[i] = v);
                continue;
            }
            let sub_x: Vec<&[f64]> = rest.iter().map(|&i| xs[i]).collect();
            let sub_y: Vec<usize> = rest.iter().map(|&i| ys[i]).collect();
            let m = fit_raw(&sub_x, &sub_y, gamma, params);
            held.iter().for_each(|&i| dec[i] = m.decision(xs[i]));
        }
        let positive: Vec<bool> = ys.iter().map(|&y| y == 1).collect();
        let (platt_a, platt_b) = sigmoid_train(&dec, &positive);

        let raw = fit_raw(xs, ys, gamma, params);
        SvmClassifier { gamma, rho: raw.rho, support: raw.support, coef: raw.coef, platt_a, platt_b }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support.iter().zip(&self.coef).map(|(s, c)| c * rbf(self.gamma, s, x)).sum::<f64>() - self.rho
    }

    pub fn predict_male(&self, x: &[f64]) -> f64 {
        let z = self.platt_a * self.decision(x) + self.platt_b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}
