//! Trainable base learners: MLP, LVQ and RBF.
//!
//! All three map a template feature vector to a per-class score vector on
//! the probability simplex, so decision fusion can mix them freely. The
//! shared hyperparameter block (hidden units, epochs, learning rate)
//! applies to all families: hidden units means hidden neurons for the MLP,
//! prototypes for LVQ and centers for RBF.
//!
//! Training is bit-reproducible: every random choice flows from the
//! config seed through a counter-based generator, and all loops run in a
//! fixed order.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::template::TemplateSet;

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub hidden_units: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // network parameters: 500 hidden neurons, 300 epochs, rate 0.03
        TrainConfig {
            hidden_units: 500,
            epochs: 300,
            learning_rate: 0.03,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units < 1 {
            return Err(Error::BadTrainConfig("hidden_units must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::BadTrainConfig("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-class scores: non-negative, summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
}

impl ScoreVector {
    /// Index of the highest score; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate().skip(1) {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }
}

const MINI_BATCH: usize = 32;
const STD_FLOOR: f64 = 1e-8;
const RIDGE_LAMBDA: f64 = 1e-6;
const WIDTH_FLOOR: f64 = 1e-6;
const KMEANS_ITERS: usize = 25;

/// Feature matrix plus integer labels, decoupled from the template layout
/// so toy problems can train directly.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl TrainingData {
    pub fn from_template_set(set: &TemplateSet) -> Result<TrainingData> {
        let mut features = Vec::with_capacity(set.templates.len());
        let mut labels = Vec::with_capacity(set.templates.len());
        for t in &set.templates {
            let idx = set
                .class_index(&t.subject_id)
                .expect("template subject present in subject list");
            features.push(t.features_f64());
            labels.push(idx);
        }
        Ok(TrainingData {
            features,
            labels,
            class_count: set.subjects.len(),
        })
    }

    fn input_dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.len())
    }

    fn distinct_labels(&self) -> usize {
        let mut seen = vec![false; self.class_count];
        for &y in &self.labels {
            seen[y] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }

    fn per_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

fn euclidean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

// --- MLP --------------------------------------------------------------------

/// One sigmoid hidden layer and a softmax output, trained with mini-batch
/// gradient descent on cross-entropy. The per-dimension standardization
/// fitted on the training set is stored with the model.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub input_dim: usize,
    pub hidden_units: usize,
    pub class_count: usize,
    /// hidden_units x input_dim, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// class_count x hidden_units, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub feat_mean: Vec<f64>,
    pub feat_std: Vec<f64>,
    /// Cross-entropy over the full training set after the final epoch.
    pub final_loss: f64,
}

impl MlpModel {
    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.feat_mean.iter().zip(&self.feat_std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    fn forward(&self, xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut h = vec![0.0; self.hidden_units];
        for j in 0..self.hidden_units {
            let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
            let z: f64 = self.b1[j] + row.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>();
            h[j] = 1.0 / (1.0 + (-z).exp());
        }
        let mut z2 = vec![0.0; self.class_count];
        for c in 0..self.class_count {
            let row = &self.w2[c * self.hidden_units..(c + 1) * self.hidden_units];
            z2[c] = self.b2[c] + row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>();
        }
        (h, z2)
    }

    /// All trainable parameters flattened as (w1, b1, w2, b2).
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut p = self.w1.clone();
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.extend_from_slice(&self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (n1, n2, n3) = (self.w1.len(), self.b1.len(), self.w2.len());
        self.w1.copy_from_slice(&p[..n1]);
        self.b1.copy_from_slice(&p[n1..n1 + n2]);
        self.w2.copy_from_slice(&p[n1 + n2..n1 + n2 + n3]);
        self.b2.copy_from_slice(&p[n1 + n2 + n3..]);
    }

    /// Mean cross-entropy over raw (unstandardized) samples.
    pub fn loss(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        let mut loss = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let xs = self.standardize(x);
            let (_, z2) = self.forward(&xs);
            let p = softmax(&z2);
            loss -= p[y].max(1e-300).ln();
        }
        loss / features.len() as f64
    }

    /// Mean cross-entropy and its gradient, flattened like
    /// [`flatten_params`](MlpModel::flatten_params). The analytic gradient
    /// checked against finite differences in the test suite.
    pub fn loss_and_grad(&self, features: &[Vec<f64>], labels: &[usize]) -> (f64, Vec<f64>) {
        let n = features.len() as f64;
        let mut gw1 = vec![0.0; self.w1.len()];
        let mut gb1 = vec![0.0; self.b1.len()];
        let mut gw2 = vec![0.0; self.w2.len()];
        let mut gb2 = vec![0.0; self.b2.len()];
        let mut loss = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let xs = self.standardize(x);
            let (h, z2) = self.forward(&xs);
            let p = softmax(&z2);
            loss -= p[y].max(1e-300).ln();
            let mut d2 = p;
            d2[y] -= 1.0;
            for c in 0..self.class_count {
                gb2[c] += d2[c];
                for j in 0..self.hidden_units {
                    gw2[c * self.hidden_units + j] += d2[c] * h[j];
                }
            }
            for j in 0..self.hidden_units {
                let back: f64 = (0..self.class_count)
                    .map(|c| self.w2[c * self.hidden_units + j] * d2[c])
                    .sum();
                let d1 = back * h[j] * (1.0 - h[j]);
                gb1[j] += d1;
                for i in 0..self.input_dim {
                    gw1[j * self.input_dim + i] += d1 * xs[i];
                }
            }
        }
        let mut g = gw1;
        g.extend_from_slice(&gb1);
        g.extend_from_slice(&gw2);
        g.extend_from_slice(&gb2);
        for v in &mut g {
            *v /= n;
        }
        (loss / n, g)
    }
}

fn standardization(features: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let dim = features[0].len();
    let n = features.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in features {
        for (m, &v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut std = vec![0.0; dim];
    for x in features {
        for (s, (&v, &m)) in std.iter_mut().zip(x.iter().zip(&mean)) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut std {
        *s = (*s / n).sqrt().max(STD_FLOOR);
    }
    (mean, std)
}

pub fn train_mlp(train: &TemplateSet, cfg: &TrainConfig) -> Result<MlpModel> {
    train_mlp_on(&TrainingData::from_template_set(train)?, cfg)
}

pub fn train_mlp_on(data: &TrainingData, cfg: &TrainConfig) -> Result<MlpModel> {
    cfg.validate()?;
    if data.distinct_labels() < 2 {
        return Err(Error::SingleClass);
    }
    let input_dim = data.input_dim();
    let (hidden, classes) = (cfg.hidden_units, data.class_count);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let a1 = (6.0 / (input_dim + hidden) as f64).sqrt();
    let w1: Vec<f64> = (0..hidden * input_dim)
        .map(|_| rng.random_range(-a1..a1))
        .collect();
    let a2 = (6.0 / (hidden + classes) as f64).sqrt();
    let w2: Vec<f64> = (0..classes * hidden)
        .map(|_| rng.random_range(-a2..a2))
        .collect();

    let (feat_mean, feat_std) = standardization(&data.features);
    let mut model = MlpModel {
        input_dim,
        hidden_units: hidden,
        class_count: classes,
        w1,
        b1: vec![0.0; hidden],
        w2,
        b2: vec![0.0; classes],
        feat_mean,
        feat_std,
        final_loss: 0.0,
    };

    let xs: Vec<Vec<f64>> = data.features.iter().map(|x| model.standardize(x)).collect();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(MINI_BATCH) {
            sgd_step(&mut model, &xs, &data.labels, batch, cfg.learning_rate);
        }
    }
    model.final_loss = model.loss(&data.features, &data.labels);
    Ok(model)
}

fn sgd_step(model: &mut MlpModel, xs: &[Vec<f64>], labels: &[usize], batch: &[usize], lr: f64) {
    let scale = lr / batch.len() as f64;
    let (hid, ind, cls) = (model.hidden_units, model.input_dim, model.class_count);
    let mut gw1 = vec![0.0; model.w1.len()];
    let mut gb1 = vec![0.0; hid];
    let mut gw2 = vec![0.0; model.w2.len()];
    let mut gb2 = vec![0.0; cls];
    for &s in batch {
        let x = &xs[s];
        let (h, z2) = model.forward(x);
        let mut d2 = softmax(&z2);
        d2[labels[s]] -= 1.0;
        for c in 0..cls {
            gb2[c] += d2[c];
            let row = &mut gw2[c * hid..(c + 1) * hid];
            for (g, &v) in row.iter_mut().zip(&h) {
                *g += d2[c] * v;
            }
        }
        for j in 0..hid {
            let back: f64 = (0..cls).map(|c| model.w2[c * hid + j] * d2[c]).sum();
            let d1 = back * h[j] * (1.0 - h[j]);
            gb1[j] += d1;
            let row = &mut gw1[j * ind..(j + 1) * ind];
            for (g, &v) in row.iter_mut().zip(x) {
                *g += d1 * v;
            }
        }
    }
    for (w, g) in model.w1.iter_mut().zip(&gw1) {
        *w -= scale * g;
    }
    for (w, g) in model.b1.iter_mut().zip(&gb1) {
        *w -= scale * g;
    }
    for (w, g) in model.w2.iter_mut().zip(&gw2) {
        *w -= scale * g;
    }
    for (w, g) in model.b2.iter_mut().zip(&gb2) {
        *w -= scale * g;
    }
}

pub fn predict_mlp(model: &MlpModel, features: &[f64]) -> Result<ScoreVector> {
    if features.len() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            got: features.len(),
        });
    }
    let xs = model.standardize(features);
    let (_, z2) = model.forward(&xs);
    Ok(ScoreVector {
        scores: softmax(&z2),
    })
}

// --- LVQ --------------------------------------------------------------------

/// Labeled codebook trained with LVQ1: the nearest prototype is attracted
/// to same-class samples and repelled from others, with the learning rate
/// decaying linearly to zero across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct LvqModel {
    pub input_dim: usize,
    pub class_count: usize,
    pub prototypes: Vec<Vec<f64>>,
    /// Class index per prototype; every class owns at least one.
    pub labels: Vec<usize>,
}

/// Largest-remainder allocation of `total` prototypes proportional to
/// class frequency, at least one per class.
fn allocate_prototypes(counts: &[usize], total: usize) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let total = total.max(counts.len());
    let mut quota: Vec<usize> = counts
        .iter()
        .map(|&c| ((total * c) as f64 / n as f64).floor() as usize)
        .collect();
    for q in &mut quota {
        *q = (*q).max(1);
    }
    let mut assigned: usize = quota.iter().sum();
    // trim overshoot from the largest quotas, then fill by remainder
    while assigned > total {
        let i = (0..quota.len())
            .filter(|&i| quota[i] > 1)
            .max_by(|&a, &b| quota[a].cmp(&quota[b]).then(b.cmp(&a)))
            .expect("some class has more than one prototype");
        quota[i] -= 1;
        assigned -= 1;
    }
    if assigned < total {
        let mut by_remainder: Vec<usize> = (0..quota.len()).collect();
        by_remainder.sort_by(|&a, &b| {
            let ra = (total * counts[a]) as f64 / n as f64 - quota[a] as f64;
            let rb = (total * counts[b]) as f64 / n as f64 - quota[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let classes = quota.len();
        for i in 0..(total - assigned) {
            quota[by_remainder[i % classes]] += 1;
        }
    }
    quota
}

pub fn train_lvq(train: &TemplateSet, cfg: &TrainConfig) -> Result<LvqModel> {
    train_lvq_on(&TrainingData::from_template_set(train)?, cfg)
}

pub fn train_lvq_on(data: &TrainingData, cfg: &TrainConfig) -> Result<LvqModel> {
    cfg.validate()?;
    if data.class_count < 2 {
        return Err(Error::SingleClass);
    }
    let counts = data.per_class_counts();
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(format!("class index {empty}")));
    }
    let mut hidden = cfg.hidden_units;
    if hidden < data.class_count {
        log::warn!(
            "hidden_units {} below class count {}; raising to one prototype per class",
            hidden,
            data.class_count
        );
        hidden = data.class_count;
    }
    let quota = allocate_prototypes(&counts, hidden);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut prototypes = Vec::with_capacity(hidden);
    let mut labels = Vec::with_capacity(hidden);
    for (class, &q) in quota.iter().enumerate() {
        let mut members: Vec<usize> = (0..data.labels.len())
            .filter(|&i| data.labels[i] == class)
            .collect();
        members.shuffle(&mut rng);
        for j in 0..q {
            prototypes.push(data.features[members[j % members.len()]].clone());
            labels.push(class);
        }
    }

    let mut order: Vec<usize> = (0..data.features.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * (cfg.epochs - epoch) as f64 / cfg.epochs as f64;
        order.shuffle(&mut rng);
        for &s in &order {
            let x = &data.features[s];
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, p) in prototypes.iter().enumerate() {
                let d = euclidean_sq(x, p);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            let sign = if labels[best] == data.labels[s] { lr } else { -lr };
            for (p, &v) in prototypes[best].iter_mut().zip(x) {
                *p += sign * (v - *p);
            }
        }
    }
    Ok(LvqModel {
        input_dim: data.input_dim(),
        class_count: data.class_count,
        prototypes,
        labels,
    })
}

/// Softmin over per-class nearest-prototype distances: `score_c` is
/// proportional to `exp(-d_c / tau)` with `tau` the mean of the `d_c`.
pub fn predict_lvq(model: &LvqModel, features: &[f64]) -> Result<ScoreVector> {
    if features.len() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            got: features.len(),
        });
    }
    let mut class_dist = vec![f64::INFINITY; model.class_count];
    for (p, &label) in model.prototypes.iter().zip(&model.labels) {
        let d = euclidean_sq(features, p).sqrt();
        if d < class_dist[label] {
            class_dist[label] = d;
        }
    }
    let tau = (class_dist.iter().sum::<f64>() / model.class_count as f64).max(STD_FLOOR);
    let raw: Vec<f64> = class_dist.iter().map(|&d| (-d / tau).exp()).collect();
    let sum: f64 = raw.iter().sum();
    Ok(ScoreVector {
        scores: raw.iter().map(|&v| v / sum).collect(),
    })
}

// --- RBF --------------------------------------------------------------------

/// Gaussian hidden layer over k-means centers with a ridge-regularized
/// linear readout fitted against one-hot targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfModel {
    pub input_dim: usize,
    pub class_count: usize,
    pub centers: Vec<Vec<f64>>,
    pub widths: Vec<f64>,
    /// (centers + 1) x class_count, row-major; the last row is the bias.
    pub weights: Vec<f64>,
}

impl RbfModel {
    pub fn activations(&self, x: &[f64]) -> Vec<f64> {
        self.centers
            .iter()
            .zip(&self.widths)
            .map(|(c, &w)| (-euclidean_sq(x, c) / (2.0 * w * w)).exp())
            .collect()
    }

    fn linear_outputs(&self, phi: &[f64]) -> Vec<f64> {
        let k = self.centers.len();
        (0..self.class_count)
            .map(|c| {
                let mut z = self.weights[k * self.class_count + c]; // bias row
                for (j, &p) in phi.iter().enumerate() {
                    z += self.weights[j * self.class_count + c] * p;
                }
                z
            })
            .collect()
    }
}

fn kmeans(features: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut pick: Vec<usize> = (0..n).collect();
    pick.shuffle(rng);
    let mut centers: Vec<Vec<f64>> = pick[..k].iter().map(|&i| features[i].clone()).collect();
    let mut assign = vec![0usize; n];

    for _ in 0..KMEANS_ITERS {
        for (i, x) in features.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centers.iter().enumerate() {
                let d = euclidean_sq(x, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assign[i] = best;
        }
        let dim = features[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, x) in features.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, &v) in sums[assign[i]].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut reseeded = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                for (c, s) in centers[j].iter_mut().zip(&sums[j]) {
                    *c = s / counts[j] as f64;
                }
            } else {
                // reseed an empty cluster from the sample farthest from its
                // current center, skipping samples already used this round
                let far = (0..n)
                    .filter(|&i| !reseeded[i])
                    .max_by(|&a, &b| {
                        euclidean_sq(&features[a], &centers[assign[a]])
                            .total_cmp(&euclidean_sq(&features[b], &centers[assign[b]]))
                            .then(b.cmp(&a))
                    })
                    .expect("non-empty sample set");
                reseeded[far] = true;
                centers[j] = features[far].clone();
            }
        }
    }
    centers
}

/// Symmetric positive-definite solve via Cholesky: returns X with
/// `a * X = b`, where `a` is n x n and `b` is n x m, both row-major.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize, m: usize) {
    // decompose in place: lower triangle of a becomes L
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= a[i * n + p] * a[j * n + p];
            }
            if i == j {
                a[i * n + j] = s.max(1e-300).sqrt();
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
    }
    // forward then back substitution per column
    for col in 0..m {
        for i in 0..n {
            let mut s = b[i * m + col];
            for p in 0..i {
                s -= a[i * n + p] * b[p * m + col];
            }
            b[i * m + col] = s / a[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i * m + col];
            for p in i + 1..n {
                s -= a[p * n + i] * b[p * m + col];
            }
            b[i * m + col] = s / a[i * n + i];
        }
    }
}

pub fn train_rbf(train: &TemplateSet, cfg: &TrainConfig) -> Result<RbfModel> {
    train_rbf_on(&TrainingData::from_template_set(train)?, cfg)
}

pub fn train_rbf_on(data: &TrainingData, cfg: &TrainConfig) -> Result<RbfModel> {
    cfg.validate()?;
    if data.class_count < 2 {
        return Err(Error::SingleClass);
    }
    let n = data.features.len();
    if n < data.class_count {
        return Err(Error::TooFewSamples {
            samples: n,
            classes: data.class_count,
        });
    }
    let mut k = cfg.hidden_units;
    if k > n {
        log::warn!("hidden_units {} exceeds sample count {}; clamping", k, n);
        k = n;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = kmeans(&data.features, k, &mut rng);

    let widths: Vec<f64> = (0..k)
        .map(|j| {
            let mut dists: Vec<f64> = (0..k)
                .filter(|&o| o != j)
                .map(|o| euclidean_sq(&centers[j], &centers[o]).sqrt())
                .collect();
            if dists.is_empty() {
                return 1.0;
            }
            dists.sort_by(f64::total_cmp);
            let take = dists.len().min(3);
            (dists[..take].iter().sum::<f64>() / take as f64).max(WIDTH_FLOOR)
        })
        .collect();

    let model_stub = RbfModel {
        input_dim: data.input_dim(),
        class_count: data.class_count,
        centers,
        widths,
        weights: Vec::new(),
    };

    // ridge least squares on [phi | 1] against one-hot targets
    let cols = k + 1;
    let classes = data.class_count;
    let phis: Vec<Vec<f64>> = data.features.iter().map(|x| model_stub.activations(x)).collect();
    let mut gram = vec![0.0; cols * cols];
    let mut rhs = vec![0.0; cols * classes];
    for (phi, &y) in phis.iter().zip(&data.labels) {
        for i in 0..cols {
            let pi = if i < k { phi[i] } else { 1.0 };
            rhs[i * classes + y] += pi;
            for j in 0..cols {
                let pj = if j < k { phi[j] } else { 1.0 };
                gram[i * cols + j] += pi * pj;
            }
        }
    }
    for i in 0..cols {
        gram[i * cols + i] += RIDGE_LAMBDA;
    }
    cholesky_solve(&mut gram, &mut rhs, cols, classes);

    Ok(RbfModel {
        weights: rhs,
        ..model_stub
    })
}

pub fn predict_rbf(model: &RbfModel, features: &[f64]) -> Result<ScoreVector> {
    if features.len() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            got: features.len(),
        });
    }
    let phi = model.activations(features);
    Ok(ScoreVector {
        scores: softmax(&model.linear_outputs(&phi)),
    })
}

// --- family dispatch and persistence ----------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Mlp,
    Lvq,
    Rbf,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Mlp, Family::Lvq, Family::Rbf];

    /// Combined-classifier name as reported in evaluation output.
    pub fn label(&self) -> &'static str {
        match self {
            Family::Mlp => "MLP",
            Family::Lvq => "CLVQ",
            Family::Rbf => "CRBF",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Family::Mlp => 1,
            Family::Lvq => 2,
            Family::Rbf => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierModel {
    Mlp(MlpModel),
    Lvq(LvqModel),
    Rbf(RbfModel),
}

impl ClassifierModel {
    pub fn family(&self) -> Family {
        match self {
            ClassifierModel::Mlp(_) => Family::Mlp,
            ClassifierModel::Lvq(_) => Family::Lvq,
            ClassifierModel::Rbf(_) => Family::Rbf,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ClassifierModel::Mlp(m) => m.input_dim,
            ClassifierModel::Lvq(m) => m.input_dim,
            ClassifierModel::Rbf(m) => m.input_dim,
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            ClassifierModel::Mlp(m) => m.class_count,
            ClassifierModel::Lvq(m) => m.class_count,
            ClassifierModel::Rbf(m) => m.class_count,
        }
    }

    pub fn predict(&self, features: &[f64]) -> Result<ScoreVector> {
        match self {
            ClassifierModel::Mlp(m) => predict_mlp(m, features),
            ClassifierModel::Lvq(m) => predict_lvq(m, features),
            ClassifierModel::Rbf(m) => predict_rbf(m, features),
        }
    }
}

pub fn train_family(family: Family, data: &TrainingData, cfg: &TrainConfig) -> Result<ClassifierModel> {
    Ok(match family {
        Family::Mlp => ClassifierModel::Mlp(train_mlp_on(data, cfg)?),
        Family::Lvq => ClassifierModel::Lvq(train_lvq_on(data, cfg)?),
        Family::Rbf => ClassifierModel::Rbf(train_rbf_on(data, cfg)?),
    })
}

const MODEL_MAGIC: &[u8; 5] = b"MVBM1";

fn push_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Binary model container: magic `MVBM1`, family tag byte, little-endian
/// u32 dimension header, then f32 parameter blobs (and, for the MLP, the
/// standardization vectors). Reloading and saving again is byte-identical.
pub fn save_model(model: &ClassifierModel, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.push(model.family().tag());
    match model {
        ClassifierModel::Mlp(m) => {
            for dim in [m.input_dim, m.hidden_units, m.class_count] {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            push_f32s(&mut out, &m.w1);
            push_f32s(&mut out, &m.b1);
            push_f32s(&mut out, &m.w2);
            push_f32s(&mut out, &m.b2);
            push_f32s(&mut out, &m.feat_mean);
            push_f32s(&mut out, &m.feat_std);
        }
        ClassifierModel::Lvq(m) => {
            for dim in [m.input_dim, m.class_count, m.prototypes.len()] {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for &label in &m.labels {
                out.extend_from_slice(&(label as u32).to_le_bytes());
            }
            for p in &m.prototypes {
                push_f32s(&mut out, p);
            }
        }
        ClassifierModel::Rbf(m) => {
            for dim in [m.input_dim, m.class_count, m.centers.len()] {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for c in &m.centers {
                push_f32s(&mut out, c);
            }
            push_f32s(&mut out, &m.widths);
            push_f32s(&mut out, &m.weights);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct ModelCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ModelCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::BadFileFormat {
                path: self.path.to_path_buf(),
                reason: "unexpected end of file".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

pub fn load_model(path: &Path) -> Result<ClassifierModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = ModelCursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if cur.take(5)? != MODEL_MAGIC {
        return Err(Error::BadFileFormat {
            path: path.to_path_buf(),
            reason: "bad magic (expected MVBM1)".into(),
        });
    }
    let tag = cur.take(1)?[0];
    match tag {
        1 => {
            let input_dim = cur.u32()?;
            let hidden_units = cur.u32()?;
            let class_count = cur.u32()?;
            Ok(ClassifierModel::Mlp(MlpModel {
                input_dim,
                hidden_units,
                class_count,
                w1: cur.f64s(hidden_units * input_dim)?,
                b1: cur.f64s(hidden_units)?,
                w2: cur.f64s(class_count * hidden_units)?,
                b2: cur.f64s(class_count)?,
                feat_mean: cur.f64s(input_dim)?,
                feat_std: cur.f64s(input_dim)?,
                final_loss: 0.0,
            }))
        }
        2 => {
            let input_dim = cur.u32()?;
            let class_count = cur.u32()?;
            let count = cur.u32()?;
            let mut labels = Vec::with_capacity(count);
            for _ in 0..count {
                labels.push(cur.u32()?);
            }
            let mut prototypes = Vec::with_capacity(count);
            for _ in 0..count {
                prototypes.push(cur.f64s(input_dim)?);
            }
            Ok(ClassifierModel::Lvq(LvqModel {
                input_dim,
                class_count,
                prototypes,
                labels,
            }))
        }
        3 => {
            let input_dim = cur.u32()?;
            let class_count = cur.u32()?;
            let count = cur.u32()?;
            let mut centers = Vec::with_capacity(count);
            for _ in 0..count {
                centers.push(cur.f64s(input_dim)?);
            }
            Ok(ClassifierModel::Rbf(RbfModel {
                input_dim,
                class_count,
                centers,
                widths: cur.f64s(count)?,
                weights: cur.f64s((count + 1) * class_count)?,
            }))
        }
        other => Err(Error::BadFileFormat {
            path: path.to_path_buf(),
            reason: format!("unknown family tag {other}"),
        }),
    }
}
