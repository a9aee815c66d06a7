use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::metrics::auprc;
use super::FeatureSchema;
use crate::datagen::{BucketEdges, FeatureVector, InteractionMode, TrainingExample};
use crate::error::{Error, Result};
use crate::{logit, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtParams {
    pub max_depth: usize,
    pub learning_rate: f64,
    pub n_trees: usize,
    /// Rounds without validation AUPRC improvement before stopping; 0 disables.
    pub early_stopping: usize,
    pub min_child_weight: f64,
    /// L2 penalty on leaf scores.
    pub lambda: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { max_depth: 4, learning_rate: 0.1, n_trees: 200, early_stopping: 20, min_child_weight: 1.0, lambda: 1.0 }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if !(self.lambda >= 0.0 && self.min_child_weight >= 0.0) {
            return Err(Error::config("lambda and min_child_weight must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: usize,
        right: usize,
    },
}

/// Regression tree stored as a node array rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self { nodes: vec![Node::Leaf { value }] }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if x[feature] < threshold { left } else { right };
                }
            }
        }
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::schema("empty tree"));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match *n {
                Node::Leaf { value } if !value.is_finite() => {
                    return Err(Error::schema("non-finite leaf score"));
                }
                Node::Split { feature, threshold, left, right, .. } => {
                    if feature >= n_features || !threshold.is_finite() {
                        return Err(Error::schema("invalid split"));
                    }
                    if left <= i || right <= i || left >= self.nodes.len() || right >= self.nodes.len() {
                        return Err(Error::schema("tree children must follow their parent"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Boosted trees on `[a, S, activity]` with logistic loss:
/// `p = sigmoid(base_score + learning_rate * sum(tree(x)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_trees: usize,
    pub trees: Vec<Tree>,
    pub schema: FeatureSchema,
}

impl GbtModel {
    pub fn n_features(&self) -> usize {
        1 + self.schema.n_static + self.schema.n_activity
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.len() != self.n_trees {
            return Err(Error::schema("n_trees differs from the stored tree count"));
        }
        if !self.base_score.is_finite() || !self.learning_rate.is_finite() {
            return Err(Error::schema("non-finite ensemble parameter"));
        }
        if self.schema.interactions != InteractionMode::None {
            return Err(Error::schema("tree models take no interaction features"));
        }
        self.trees.iter().try_for_each(|t| t.validate(self.n_features()))
    }

    pub fn margin_raw(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin_raw(x))
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<f64> {
        self.schema.check(fv)?;
        Ok(self.predict_raw(&raw_row(fv)))
    }
}

/// Unbucketised feature row used by the trees.
pub fn raw_row(fv: &FeatureVector) -> Vec<f64> {
    let mut row = Vec::with_capacity(1 + fv.static_features.len() + fv.activity.len());
    row.push(f64::from(fv.a));
    row.extend_from_slice(&fv.static_features);
    row.extend_from_slice(&fv.activity);
    row
}

/// Second-order split gain.
#[inline]
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr))
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Exact greedy tree over presorted columns, grown level by level.
fn grow_tree(x: &Matrix, sorted: &[Vec<usize>], g: &[f64], h: &[f64], params: &GbtParams) -> Tree {
    let n = x.n_rows();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut pos = vec![0usize; n];
    let sum = |rows: &mut dyn Iterator<Item = usize>| rows.fold((0.0, 0.0), |(a, b), i| (a + g[i], b + h[i]));
    let (g0, h0) = sum(&mut (0..n));
    let mut totals = vec![(g0, h0)];
    let mut frontier = vec![0usize];

    for depth in 0..=params.max_depth {
        let mut best: Vec<Option<Candidate>> = vec![None; nodes.len()];
        let active: Vec<bool> = {
            let mut a = vec![false; nodes.len()];
            for &f in &frontier {
                a[f] = true;
            }
            a
        };
        if depth < params.max_depth {
            let mut gl = vec![0.0; nodes.len()];
            let mut hl = vec![0.0; nodes.len()];
            let mut last: Vec<Option<f64>> = vec![None; nodes.len()];
            for (j, order) in sorted.iter().enumerate() {
                gl.iter_mut().for_each(|v| *v = 0.0);
                hl.iter_mut().for_each(|v| *v = 0.0);
                last.iter_mut().for_each(|v| *v = None);
                for &i in order {
                    let node = pos[i];
                    if !active[node] {
                        continue;
                    }
                    let v = x.get(i, j);
                    if let Some(prev) = last[node] {
                        if v > prev {
                            let (gt, ht) = totals[node];
                            let (l_g, l_h) = (gl[node], hl[node]);
                            let (r_g, r_h) = (gt - l_g, ht - l_h);
                            if l_h >= params.min_child_weight && r_h >= params.min_child_weight {
                                let gain = split_gain(l_g, l_h, r_g, r_h, params.lambda);
                                if best[node].is_none_or(|b| gain > b.gain) {
                                    best[node] = Some(Candidate { gain, feature: j, threshold: 0.5 * (prev + v) });
                                }
                            }
                        }
                    }
                    gl[node] += g[i];
                    hl[node] += h[i];
                    last[node] = Some(v);
                }
            }
        }

        let mut next = Vec::new();
        let mut child_of = vec![(0usize, 0usize); nodes.len()];
        for &f in &frontier {
            let (gt, ht) = totals[f];
            match best[f] {
                Some(c) if c.gain > 0.0 => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    totals.push((0.0, 0.0));
                    totals.push((0.0, 0.0));
                    nodes[f] =
                        Node::Split { feature: c.feature, threshold: c.threshold, gain: c.gain, left, right: left + 1 };
                    child_of[f] = (left, left + 1);
                    next.push(left);
                    next.push(left + 1);
                }
                _ => nodes[f] = Node::Leaf { value: -gt / (ht + params.lambda) },
            }
        }
        if next.is_empty() {
            break;
        }
        for i in 0..n {
            if let Node::Split { feature, threshold, .. } = nodes[pos[i]] {
                if active[pos[i]] {
                    let (l, r) = child_of[pos[i]];
                    pos[i] = if x.get(i, feature) < threshold { l } else { r };
                    totals[pos[i]].0 += g[i];
                    totals[pos[i]].1 += h[i];
                }
            }
        }
        frontier = next;
    }
    Tree { nodes }
}

fn presort(x: &Matrix) -> Vec<Vec<usize>> {
    (0..x.n_cols())
        .map(|j| {
            let mut idx: Vec<usize> = (0..x.n_rows()).collect();
            idx.sort_by(|&a, &b| x.get(a, j).total_cmp(&x.get(b, j)).then(a.cmp(&b)));
            idx
        })
        .collect()
}

/// Boosts on a raw design matrix. Early stopping watches AUPRC on
/// `(vx, vy)` and truncates the ensemble to its best round.
pub fn fit_gbt_raw(
    x: &Matrix,
    y: &[bool],
    valid: Option<(&Matrix, &[bool])>,
    params: &GbtParams,
) -> Result<(f64, Vec<Tree>)> {
    params.validate()?;
    if x.n_rows() != y.len() {
        return Err(Error::contract("design matrix and label lengths differ"));
    }
    if y.is_empty() || y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::DegenerateData("training labels are single-class".into()));
    }
    let rate = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
    let base = logit(rate);
    let sorted = presort(x);
    let mut margin = vec![base; x.n_rows()];
    let mut g = vec![0.0; x.n_rows()];
    let mut h = vec![0.0; x.n_rows()];

    let valid = valid.filter(|(_, vy)| vy.iter().any(|&v| v) && vy.iter().any(|&v| !v));
    let mut vmargin: Vec<f64> = valid.map_or_else(Vec::new, |(vx, _)| vec![base; vx.n_rows()]);
    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut trees = Vec::new();

    for round in 0..params.n_trees {
        for i in 0..x.n_rows() {
            let p = sigmoid(margin[i]);
            g[i] = p - f64::from(u8::from(y[i]));
            h[i] = (p * (1.0 - p)).max(1e-16);
        }
        let tree = grow_tree(x, &sorted, &g, &h, params);
        for (i, m) in margin.iter_mut().enumerate() {
            *m += params.learning_rate * tree.predict(x.row(i));
        }
        trees.push(tree);
        if let (Some((vx, vy)), true) = (valid, params.early_stopping > 0) {
            let t = trees.last().expect("just pushed");
            for (i, m) in vmargin.iter_mut().enumerate() {
                *m += params.learning_rate * t.predict(vx.row(i));
            }
            let score = auprc(&vmargin, vy)?;
            if score > best.0 {
                best = (score, round + 1);
            } else if round + 1 - best.1 >= params.early_stopping {
                break;
            }
        }
    }
    if valid.is_some() && params.early_stopping > 0 {
        trees.truncate(best.1);
    }
    Ok((base, trees))
}

pub fn train_gbt(
    train: &[TrainingExample],
    valid: &[TrainingExample],
    edges: &BucketEdges,
    params: &GbtParams,
) -> Result<GbtModel> {
    let first = train.first().ok_or_else(|| Error::DegenerateData("no training rows".into()))?;
    let schema = FeatureSchema::for_features(&first.features, edges.clone(), InteractionMode::None);
    let design = |ex: &[TrainingExample]| -> Result<(Matrix, Vec<bool>)> {
        let mut m = Matrix::zeros(0, 1 + schema.n_static + schema.n_activity);
        for e in ex {
            if e.features.static_features.len() != schema.n_static || e.features.activity.len() != schema.n_activity {
                return Err(Error::contract("examples have inconsistent feature widths"));
            }
            m.push_row(&raw_row(&e.features));
        }
        Ok((m, ex.iter().map(|e| e.label).collect()))
    };
    let (x, y) = design(train)?;
    let (vx, vy) = design(valid)?;
    let (base_score, trees) = fit_gbt_raw(&x, &y, Some((&vx, &vy)), params)?;
    Ok(GbtModel {
        base_score,
        learning_rate: params.learning_rate,
        max_depth: params.max_depth,
        n_trees: trees.len(),
        trees,
        schema,
    })
}
