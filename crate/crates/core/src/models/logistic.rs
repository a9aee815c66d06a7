use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::metrics::auprc;
use super::FeatureSchema;
use crate::datagen::{BucketEdges, FeatureVector, TrainingExample};
use crate::error::{Error, Result};
use crate::sigmoid;

/// `sigmoid(intercept + weights · x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLogit {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl LinearLogit {
    pub fn zeros(n: usize) -> Self {
        Self { intercept: 0.0, weights: vec![0.0; n] }
    }

    #[inline]
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    /// Penalty `l2 / 2 * |w|^2`; the intercept is not penalised.
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient's Euclidean norm, divided by the row count, is
    /// at most this.
    pub tol: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self { l2: 0.0, max_iter: 500, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: LinearLogit,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    /// Objective after each accepted step, starting from the initial point.
    pub loss_trace: Vec<f64>,
}

/// Penalised negative log-likelihood over `theta = [intercept, w...]`.
pub struct LogisticObjective<'a> {
    pub x: &'a Matrix,
    pub y: &'a [bool],
    pub l2: f64,
}

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticObjective<'_> {
    fn margin(&self, theta: &[f64], i: usize) -> f64 {
        theta[0] + self.x.row(i).iter().zip(&theta[1..]).map(|(v, w)| v * w).sum::<f64>()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let nll: f64 = (0..self.x.n_rows())
            .map(|i| {
                let z = self.margin(theta, i);
                softplus(z) - if self.y[i] { z } else { 0.0 }
            })
            .sum();
        nll + 0.5 * self.l2 * theta[1..].iter().map(|w| w * w).sum::<f64>()
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        for i in 0..self.x.n_rows() {
            let r = sigmoid(self.margin(theta, i)) - f64::from(u8::from(self.y[i]));
            g[0] += r;
            for (gj, v) in g[1..].iter_mut().zip(self.x.row(i)) {
                *gj += r * v;
            }
        }
        for (gj, w) in g[1..].iter_mut().zip(&theta[1..]) {
            *gj += self.l2 * w;
        }
        g
    }

    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let p = theta.len();
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut row = vec![1.0; p];
        for i in 0..self.x.n_rows() {
            let s = sigmoid(self.margin(theta, i));
            let wgt = s * (1.0 - s);
            if wgt == 0.0 {
                continue;
            }
            row[1..].copy_from_slice(self.x.row(i));
            for a in 0..p {
                let ra = wgt * row[a];
                if ra == 0.0 {
                    continue;
                }
                for b in a..p {
                    h[(a, b)] += ra * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        for j in 1..p {
            h[(j, j)] += self.l2;
        }
        h
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_labels(y: &[bool]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::DegenerateData("no training rows".into()));
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::DegenerateData("training labels are single-class".into()));
    }
    Ok(())
}

/// Damped Newton with backtracking; every accepted step lowers the objective.
pub fn fit_logistic(x: &Matrix, y: &[bool], opts: &LogisticOptions) -> Result<FitResult> {
    if x.n_rows() != y.len() {
        return Err(Error::contract("design matrix and label lengths differ"));
    }
    if !(opts.l2 >= 0.0 && opts.l2.is_finite()) {
        return Err(Error::config("l2 must be finite and >= 0"));
    }
    check_labels(y)?;
    let obj = LogisticObjective { x, y, l2: opts.l2 };
    let p = x.n_cols() + 1;
    let mut theta = vec![0.0; p];
    let mut loss = obj.value(&theta);
    let mut trace = vec![loss];
    let mut g = obj.gradient(&theta);
    let mut iterations = 0;
    let tol = opts.tol * x.n_rows().max(1) as f64;

    while iterations < opts.max_iter && norm(&g) > tol {
        iterations += 1;
        let h = obj.hessian(&theta);
        let gv = DVector::from_column_slice(&g);
        let scale = (0..p).map(|i| h[(i, i)]).fold(0.0f64, f64::max).max(1.0);
        let mut damping = 0.0;
        let dir = loop {
            let mut hd = h.clone();
            for i in 0..p {
                hd[(i, i)] += damping;
            }
            if let Some(ch) = hd.cholesky() {
                break ch.solve(&(-&gv));
            }
            damping = if damping == 0.0 { 1e-10 * scale } else { damping * 10.0 };
            if damping > 1e10 * scale {
                return Err(Error::SingularDesign("logistic Hessian could not be regularised".into()));
            }
        };
        let slope: f64 = gv.dot(&dir);
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-12 {
            let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t + step * d).collect();
            let v = obj.value(&cand);
            if v <= loss + 1e-4 * step * slope {
                accepted = Some((cand, v));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, v)) = accepted else { break };
        let stalled = v >= loss;
        theta = cand;
        loss = v;
        trace.push(loss);
        g = obj.gradient(&theta);
        if stalled {
            break;
        }
    }
    let grad_norm = norm(&g);
    Ok(FitResult {
        model: LinearLogit { intercept: theta[0], weights: theta[1..].to_vec() },
        iterations,
        converged: grad_norm <= tol,
        grad_norm,
        loss_trace: trace,
    })
}

/// Creation-probability model
/// `sigmoid(mu + gamma . [S, activity] + lambda[level] + beta . interactions)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub mu: f64,
    pub gamma: Vec<f64>,
    /// One coefficient per feedback level; level 1 is the reference (0).
    pub lambda_: Vec<f64>,
    pub beta: Vec<f64>,
    pub l2: f64,
    pub schema: FeatureSchema,
}

impl LogisticModel {
    /// All-zero coefficients for `schema`.
    pub fn zeros(schema: FeatureSchema) -> Self {
        Self {
            mu: 0.0,
            gamma: vec![0.0; schema.n_static + schema.n_activity],
            lambda_: vec![0.0; schema.edges.k()],
            beta: vec![0.0; schema.interactions.width(&schema.edges)],
            l2: 0.0,
            schema,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.schema;
        if self.gamma.len() != s.n_static + s.n_activity
            || self.lambda_.len() != s.edges.k()
            || self.beta.len() != s.interactions.width(&s.edges)
        {
            return Err(Error::schema("logistic coefficient blocks do not match the schema"));
        }
        let all = std::iter::once(&self.mu).chain(&self.gamma).chain(&self.lambda_).chain(&self.beta);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::schema("non-finite logistic coefficient"));
        }
        Ok(())
    }

    pub fn margin(&self, fv: &FeatureVector) -> Result<f64> {
        self.schema.check(fv)?;
        let dense = fv.static_features.iter().chain(&fv.activity);
        let lin: f64 = self.gamma.iter().zip(dense).map(|(g, v)| g * v).sum();
        let inter: f64 = self.beta.iter().zip(&fv.interactions).map(|(b, v)| b * v).sum();
        Ok(self.mu + lin + self.lambda_[fv.a_bucket - 1] + inter)
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<f64> {
        Ok(sigmoid(self.margin(fv)?))
    }

    fn from_linear(lin: &LinearLogit, l2: f64, schema: FeatureSchema) -> Self {
        let nd = schema.n_static + schema.n_activity;
        let k = schema.edges.k();
        let w = &lin.weights;
        let mut lambda_ = vec![0.0];
        lambda_.extend_from_slice(&w[nd..nd + k - 1]);
        Self { mu: lin.intercept, gamma: w[..nd].to_vec(), lambda_, beta: w[nd + k - 1..].to_vec(), l2, schema }
    }
}

/// Row layout used for fitting: `[S, activity, level 2..K one-hot, interactions]`.
pub fn logistic_design_row(fv: &FeatureVector, k: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(fv.static_features.len() + fv.activity.len() + k - 1 + fv.interactions.len());
    row.extend_from_slice(&fv.static_features);
    row.extend_from_slice(&fv.activity);
    row.extend((2..=k).map(|lvl| f64::from(u8::from(fv.a_bucket == lvl))));
    row.extend_from_slice(&fv.interactions);
    row
}

fn design(examples: &[TrainingExample], schema: &FeatureSchema) -> Result<(Matrix, Vec<bool>)> {
    let k = schema.edges.k();
    let mut x =
        Matrix::zeros(0, schema.n_static + schema.n_activity + k - 1 + schema.interactions.width(&schema.edges));
    for e in examples {
        schema.check(&e.features)?;
        x.push_row(&logistic_design_row(&e.features, k));
    }
    Ok((x, examples.iter().map(|e| e.label).collect()))
}

/// Fits one model per `l2` value and keeps the one with the best
/// validation AUPRC (earliest on ties).
pub fn train_logistic(
    train: &[TrainingExample],
    valid: &[TrainingExample],
    edges: &BucketEdges,
    l2_grid: &[f64],
) -> Result<LogisticModel> {
    if l2_grid.is_empty() {
        return Err(Error::config("l2 grid is empty"));
    }
    let first = train.first().ok_or_else(|| Error::DegenerateData("no training rows".into()))?;
    let mode = first.features.mode();
    let schema = FeatureSchema::for_features(&first.features, edges.clone(), mode);
    let (x, y) = design(train, &schema)?;
    check_labels(&y)?;
    let (vx, vy) = design(valid, &schema)?;
    let select_on_valid = vy.iter().any(|&v| v) && vy.iter().any(|&v| !v);
    if !select_on_valid {
        log::warn!("validation set lacks a class; selecting l2 on the training set");
    }

    let mut best: Option<(f64, LogisticModel)> = None;
    for &l2 in l2_grid {
        let fit = fit_logistic(&x, &y, &LogisticOptions { l2, ..LogisticOptions::default() })?;
        if !fit.converged {
            log::warn!("logistic fit with l2={l2} stopped at gradient norm {:.3e}", fit.grad_norm);
        }
        let (ex, ey) = if select_on_valid { (&vx, &vy) } else { (&x, &y) };
        let scores: Vec<f64> = ex.rows().map(|r| fit.model.predict(r)).collect();
        let score = auprc(&scores, ey)?;
        log::debug!("l2={l2}: selection AUPRC {score:.5}");
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, LogisticModel::from_linear(&fit.model, l2, schema.clone())));
        }
    }
    Ok(best.map(|b| b.1).expect("grid is nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::InteractionMode;
    use crate::ecosystem::{ActivityLevel, ContributionLevel};
    use approx::assert_relative_eq;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn random_problem(seed: u64, n: usize, p: usize) -> (Matrix, Vec<bool>) {
        let mut rng = crate::rng::rng_from(seed);
        let w: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = Matrix::zeros(0, p);
        let mut y = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let z: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - 0.5;
            y.push(rng.random::<f64>() < sigmoid(z));
            x.push_row(&row);
        }
        (x, y)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = random_problem(1, 80, 4);
        let obj = LogisticObjective { x: &x, y: &y, l2: 0.7 };
        let mut rng = crate::rng::rng_from(2);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = obj.gradient(&theta);
            for j in 0..5 {
                let h = 1e-5;
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let fd = (obj.value(&tp) - obj.value(&tm)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0), "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn intercept_only_recovers_base_rate() {
        let x = Matrix::zeros(400, 3);
        let y: Vec<bool> = (0..400).map(|i| i % 5 == 0).collect();
        let fit = fit_logistic(&x, &y, &LogisticOptions::default()).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.model.intercept, crate::logit(0.2), epsilon = 1e-3);
    }

    #[test]
    fn loss_never_increases() {
        let (x, y) = random_problem(3, 300, 6);
        for l2 in [0.0, 1.0] {
            let fit = fit_logistic(&x, &y, &LogisticOptions { l2, ..Default::default() }).unwrap();
            assert!(fit.loss_trace.windows(2).all(|w| w[1] <= w[0]));
            assert!(fit.converged);
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = Matrix::zeros(10, 2);
        let r = fit_logistic(&x, &[true; 10], &LogisticOptions::default());
        assert!(matches!(r, Err(Error::DegenerateData(_))));
    }

    fn example(user: u32, a: u32, label: bool, edges: &BucketEdges) -> TrainingExample {
        let s =
            crate::ecosystem::UserProfile::new(user, ActivityLevel::Daily, ContributionLevel::DailyContrib, 0, 1, 1, 1)
                .static_features;
        TrainingExample {
            user_id: user,
            features: FeatureVector::new(a, edges, s, vec![0.0; 5], InteractionMode::CohortCross).unwrap(),
            label,
            activity_level: ActivityLevel::Daily,
            contribution_level: ContributionLevel::DailyContrib,
        }
    }

    #[test]
    fn trained_model_predicts_like_its_linear_fit() {
        let edges = BucketEdges::default();
        let mut rng = crate::rng::rng_from(4);
        let ex: Vec<_> = (0..400)
            .map(|i| {
                let a = rng.random_range(0..30);
                let label = rng.random::<f64>() < sigmoid(-2.0 + 0.1 * f64::from(a));
                example(i, a, label, &edges)
            })
            .collect();
        let m = train_logistic(&ex[..300], &ex[300..], &edges, &[0.1, 1.0]).unwrap();
        m.validate().unwrap();
        assert_eq!(m.lambda_[0], 0.0);
        assert!(m.lambda_[5] > m.lambda_[1]);
        let (x, _) = design(&ex, &m.schema).unwrap();
        let nd = m.gamma.len();
        let mut w = m.gamma.clone();
        w.extend_from_slice(&m.lambda_[1..]);
        w.extend_from_slice(&m.beta);
        let lin = LinearLogit { intercept: m.mu, weights: w };
        for (e, r) in ex.iter().zip(x.rows()) {
            assert_relative_eq!(m.predict(&e.features).unwrap(), lin.predict(r), epsilon = 1e-12);
        }
        assert_eq!(nd, 8 + 3 + 5);
    }

    #[test]
    fn closed_form_predictions() {
        let e = example(0, 3, true, &BucketEdges::default());
        let mut m = LogisticModel::zeros(FeatureSchema::for_features(
            &e.features,
            BucketEdges::default(),
            InteractionMode::CohortCross,
        ));
        assert_eq!(m.predict(&e.features).unwrap(), 0.5);
        m.mu = 2.0;
        assert_relative_eq!(m.predict(&e.features).unwrap(), 0.880797, epsilon = 1e-6);
    }
}
