//! L2-regularised logistic regression fitted by Newton's method (IRLS) with
//! a backtracking line search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_labels, ClassWeight, FeatureMatrix, LearnError, Predictor};

/// Overflow-safe logistic function.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Mean binary cross-entropy of logits `f` against labels.
pub(crate) fn log_loss_logits(f: &[f64], y: &[u8]) -> f64 {
    let total: f64 = f
        .iter()
        .zip(y)
        .map(|(&t, &yi)| softplus(t) - f64::from(yi) * t)
        .sum();
    total / f.len() as f64
}

/// Mean binary cross-entropy of probabilities, clipped to [1e-15, 1 - 1e-15].
pub fn log_loss(p: &[f64], y: &[u8]) -> f64 {
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&pi, &yi)| {
            let pi = pi.clamp(1e-15, 1.0 - 1e-15);
            if yi == 1 {
                -pi.ln()
            } else {
                -(1.0 - pi).ln()
            }
        })
        .sum();
    total / p.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub max_iter: usize,
    /// Convergence threshold on the gradient infinity-norm.
    pub tol: f64,
    /// Penalty (l2/2)*||beta||^2; the intercept is not penalised.
    pub l2: f64,
    #[serde(default)]
    pub class_weight: ClassWeight,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            max_iter: 100,
            tol: 1e-8,
            l2: 1e-3,
            class_weight: ClassWeight::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub beta0: f64,
    pub beta: Vec<f64>,
}

impl LogisticModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.beta0 + self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

impl Predictor for LogisticModel {
    fn n_features(&self) -> usize {
        self.beta.len()
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub model: LogisticModel,
    pub iterations: usize,
    /// False when `max_iter` ran out or the line search stalled; the model
    /// is then the best iterate found.
    pub converged: bool,
    pub gradient_norm: f64,
}

struct Problem<'a> {
    x: &'a FeatureMatrix,
    y: Vec<f64>,
    w: Vec<f64>,
    l2: f64,
}

impl Problem<'_> {
    fn logit(&self, theta: &DVector<f64>, i: usize) -> f64 {
        theta[0] + self.x.row(i).iter().zip(theta.iter().skip(1)).map(|(a, b)| a * b).sum::<f64>()
    }

    fn objective(&self, theta: &DVector<f64>) -> f64 {
        let nll: f64 = (0..self.x.n())
            .map(|i| {
                let t = self.logit(theta, i);
                self.w[i] * (softplus(t) - self.y[i] * t)
            })
            .sum();
        nll + 0.5 * self.l2 * theta.rows(1, theta.len() - 1).norm_squared()
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(theta.len());
        for i in 0..self.x.n() {
            let r = self.w[i] * (sigmoid(self.logit(theta, i)) - self.y[i]);
            g[0] += r;
            for (j, v) in self.x.row(i).iter().enumerate() {
                g[j + 1] += r * v;
            }
        }
        for j in 1..theta.len() {
            g[j] += self.l2 * theta[j];
        }
        g
    }

    fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let k = theta.len();
        let mut h = DMatrix::zeros(k, k);
        let mut xt = vec![0.0; k];
        for i in 0..self.x.n() {
            let p = sigmoid(self.logit(theta, i));
            let s = self.w[i] * p * (1.0 - p);
            xt[0] = 1.0;
            xt[1..].copy_from_slice(self.x.row(i));
            for a in 0..k {
                let sa = s * xt[a];
                for b in a..k {
                    h[(a, b)] += sa * xt[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        for j in 1..k {
            h[(j, j)] += self.l2;
        }
        h
    }
}

fn newton_direction(h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = h.diagonal().amax().max(1.0);
    for jitter in [0.0, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4] {
        let mut hj = h.clone();
        for j in 0..hj.nrows() {
            hj[(j, j)] += jitter * scale;
        }
        if let Some(ch) = hj.cholesky() {
            return Some(ch.solve(g));
        }
    }
    None
}

/// Minimise the (weighted) negative log-likelihood plus (l2/2)*||beta||^2.
pub fn fit_logistic(x: &FeatureMatrix, y: &[u8], config: &LogisticConfig) -> Result<LogisticFit, LearnError> {
    let (n, d) = (x.n(), x.d());
    if n < d + 1 {
        return Err(LearnError::InsufficientRows { n, required: d + 1 });
    }
    check_labels(n, y)?;
    if !(config.l2 >= 0.0 && config.tol > 0.0) {
        return Err(LearnError::InvalidParameter("need l2 >= 0 and tol > 0".into()));
    }
    let problem = problem_for(x, y, config)?;
    let mut theta = DVector::zeros(d + 1);
    let mut obj = problem.objective(&theta);
    let mut iterations = 0;
    let mut converged = false;
    let mut grad = problem.gradient(&theta);
    loop {
        if grad.amax() < config.tol {
            converged = true;
            break;
        }
        if iterations == config.max_iter {
            break;
        }
        let Some(dir) = newton_direction(problem.hessian(&theta), &grad) else {
            break;
        };
        let slope = grad.dot(&dir);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &theta - step * &dir;
            let c_obj = problem.objective(&cand);
            if c_obj <= obj - 1e-4 * step * slope {
                accepted = Some((cand, c_obj));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((cand, c_obj)) => {
                theta = cand;
                obj = c_obj;
                grad = problem.gradient(&theta);
            }
            None => {
                // Objective flat to rounding; take the full step if it does
                // not increase the gradient, otherwise stop here.
                let cand = &theta - &dir;
                let g2 = problem.gradient(&cand);
                if g2.amax() < grad.amax() {
                    theta = cand;
                    obj = problem.objective(&theta);
                    grad = g2;
                    continue;
                }
                break;
            }
        }
    }
    let model = LogisticModel {
        beta0: theta[0],
        beta: theta.iter().skip(1).copied().collect(),
    };
    if !model.beta0.is_finite() || model.beta.iter().any(|b| !b.is_finite()) {
        return Err(LearnError::InvalidParameter("logistic fit diverged".into()));
    }
    Ok(LogisticFit {
        model,
        iterations,
        converged,
        gradient_norm: grad.amax(),
    })
}

fn problem_for<'a>(x: &'a FeatureMatrix, y: &[u8], config: &LogisticConfig) -> Result<Problem<'a>, LearnError> {
    if y.len() != x.n() {
        return Err(LearnError::LengthMismatch(x.n(), y.len()));
    }
    Ok(Problem {
        x,
        y: y.iter().map(|&v| f64::from(v)).collect(),
        w: config.class_weight.sample_weights(y),
        l2: config.l2,
    })
}

fn theta_of(model: &LogisticModel, d: usize) -> Result<DVector<f64>, LearnError> {
    if model.beta.len() != d {
        return Err(LearnError::DimensionMismatch { expected: d, found: model.beta.len() });
    }
    Ok(DVector::from_iterator(d + 1, std::iter::once(model.beta0).chain(model.beta.iter().copied())))
}

/// The objective `fit_logistic` minimises, evaluated at `model`.
pub fn logistic_objective(
    model: &LogisticModel,
    x: &FeatureMatrix,
    y: &[u8],
    config: &LogisticConfig,
) -> Result<f64, LearnError> {
    Ok(problem_for(x, y, config)?.objective(&theta_of(model, x.d())?))
}

/// Gradient of [`logistic_objective`]; entry 0 is the intercept.
pub fn logistic_gradient(
    model: &LogisticModel,
    x: &FeatureMatrix,
    y: &[u8],
    config: &LogisticConfig,
) -> Result<Vec<f64>, LearnError> {
    Ok(problem_for(x, y, config)?.gradient(&theta_of(model, x.d())?).iter().copied().collect())
}
