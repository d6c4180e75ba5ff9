//! Classifiers over byte features: nearest centroid, multinomial logistic
//! regression and a ReLU MLP, the last two trained with Adam on
//! cross-entropy.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{top_k_accuracy, ByteSample, DatasetSplit, MlError};
use crate::victim::KEY_COUNT;

pub const CLASS_COUNT: usize = KEY_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    NearestCentroid,
    MultinomialLogistic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, epochs: 500, batch_size: 32, hidden: vec![128, 64], seed: 0 }
    }
}

/// Fully connected layer `z = x W + b`, one sample per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "DenseParams", into = "DenseParams")]
pub struct Dense {
    w: DMatrix<f64>,
    b: DVector<f64>,
}

/// Checkpoint form of [`Dense`]: weights row-major, `inputs x outputs`.
#[derive(Serialize, Deserialize)]
struct DenseParams {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<DenseParams> for Dense {
    fn from(p: DenseParams) -> Self {
        Dense { w: DMatrix::from_row_slice(p.inputs, p.outputs, &p.weights), b: DVector::from_vec(p.bias) }
    }
}

impl From<Dense> for DenseParams {
    fn from(d: Dense) -> Self {
        DenseParams {
            inputs: d.w.nrows(),
            outputs: d.w.ncols(),
            weights: d.w.transpose().as_slice().to_vec(),
            bias: d.b.as_slice().to_vec(),
        }
    }
}

/// ReLU between layers, softmax on the output. No hidden layers is
/// multinomial logistic regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Dense>,
}

struct Grads {
    w: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
}

impl Network {
    /// He-normal weights, zero biases.
    pub fn new(inputs: usize, hidden: &[usize], outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        let layers = sizes
            .windows(2)
            .map(|s| {
                let n = Normal::new(0.0, (2.0 / s[0] as f64).sqrt()).expect("valid sigma");
                Dense { w: DMatrix::from_fn(s[0], s[1], |_, _| n.sample(&mut rng)), b: DVector::zeros(s[1]) }
            })
            .collect();
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Activations of every layer; the last is the softmax output.
    fn forward(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![x.clone()];
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts.last().expect("input present") * &l.w;
            for mut row in z.row_iter_mut() {
                row += l.b.transpose();
            }
            if i + 1 < self.layers.len() {
                z.apply(|v| *v = v.max(0.0));
            } else {
                for mut row in z.row_iter_mut() {
                    let m = row.max();
                    row.apply(|v| *v = (*v - m).exp());
                    let s = row.sum();
                    row /= s;
                }
            }
            acts.push(z);
        }
        acts
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let acts = self.forward(&DMatrix::from_row_slice(1, x.len(), x));
        acts.last().expect("output").as_slice().to_vec()
    }

    /// Mean cross-entropy of a batch and its gradient.
    fn loss_and_grad(&self, x: &DMatrix<f64>, y: &[usize]) -> (f64, Grads) {
        let acts = self.forward(x);
        let n = y.len() as f64;
        let p = acts.last().expect("output");
        let loss = y.iter().enumerate().map(|(r, &c)| -p[(r, c)].max(1e-300).ln()).sum::<f64>() / n;
        let mut dz = p.clone();
        for (r, &c) in y.iter().enumerate() {
            dz[(r, c)] -= 1.0;
        }
        dz /= n;
        let mut gw = Vec::with_capacity(self.layers.len());
        let mut gb = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            gw.push(acts[i].transpose() * &dz);
            gb.push(DVector::from_iterator(dz.ncols(), dz.column_iter().map(|c| c.sum())));
            if i > 0 {
                let mut da = &dz * self.layers[i].w.transpose();
                da.zip_apply(&acts[i], |g, a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                dz = da;
            }
        }
        gw.reverse();
        gb.reverse();
        (loss, Grads { w: gw, b: gb })
    }

    pub fn loss(&self, x: &DMatrix<f64>, y: &[usize]) -> f64 {
        self.loss_and_grad(x, y).0
    }

    fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let mut i = idx;
        for l in &mut self.layers {
            if i < l.w.len() {
                return &mut l.w.as_mut_slice()[i];
            }
            i -= l.w.len();
            if i < l.b.len() {
                return &mut l.b.as_mut_slice()[i];
            }
            i -= l.b.len();
        }
        panic!("parameter index {idx} out of range")
    }
}

fn grad_at(g: &Grads, idx: usize) -> f64 {
    let mut i = idx;
    for (w, b) in g.w.iter().zip(&g.b) {
        if i < w.len() {
            return w.as_slice()[i];
        }
        i -= w.len();
        if i < b.len() {
            return b.as_slice()[i];
        }
        i -= b.len();
    }
    panic!("parameter index {idx} out of range")
}

/// Compares backpropagated gradients with central differences on `count`
/// seeded parameters; returns the worst relative error.
pub fn gradient_check(net: &Network, x: &DMatrix<f64>, y: &[usize], count: usize, seed: u64) -> f64 {
    let (_, g) = net.loss_and_grad(x, y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < count {
        let idx = rng.random_range(0..net.parameter_count());
        let analytic = grad_at(&g, idx);
        if analytic.abs() < 1e-7 {
            // Dead unit or saturated class: nothing to compare.
            continue;
        }
        let mut plus = net.clone();
        *plus.param_mut(idx) += h;
        let mut minus = net.clone();
        *minus.param_mut(idx) -= h;
        let numeric = (plus.loss(x, y) - minus.loss(x, y)) / (2.0 * h);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()));
        checked += 1;
    }
    worst
}

struct Adam {
    m: Grads,
    v: Grads,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &Network) -> Self {
        let zeros = || Grads {
            w: net.layers.iter().map(|l| DMatrix::zeros(l.w.nrows(), l.w.ncols())).collect(),
            b: net.layers.iter().map(|l| DVector::zeros(l.b.len())).collect(),
        };
        Self { m: zeros(), v: zeros(), t: 0 }
    }

    fn step(&mut self, net: &mut Network, g: &Grads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g[i];
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        };
        for (i, l) in net.layers.iter_mut().enumerate() {
            update(l.w.as_mut_slice(), g.w[i].as_slice(), self.m.w[i].as_mut_slice(), self.v.w[i].as_mut_slice());
            update(l.b.as_mut_slice(), g.b[i].as_slice(), self.m.b[i].as_mut_slice(), self.v.b[i].as_mut_slice());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Classifier {
    /// Softmax over negative squared distances; classes never seen in
    /// training get probability zero.
    NearestCentroid { centroids: Vec<Option<Vec<f64>>> },
    MultinomialLogistic { network: Network },
    Mlp { network: Network },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingOutcome {
    pub classifier: Classifier,
    pub config: TrainConfig,
    pub curve: Vec<EpochStats>,
    /// Epoch whose parameters were kept (best validation top-1, latest on
    /// ties); 0 means the initial parameters.
    pub best_epoch: usize,
    /// Classes with no training sample.
    pub missing_classes: Vec<usize>,
}

fn batch(data: &[ByteSample], idx: &[usize]) -> (DMatrix<f64>, Vec<usize>) {
    let d = data[idx[0]].features.len();
    let x = DMatrix::from_fn(idx.len(), d, |r, c| data[idx[r]].features[c]);
    (x, idx.iter().map(|&i| data[i].label).collect())
}

impl Classifier {
    pub fn train(
        kind: ModelKind,
        data: &[ByteSample],
        split: &DatasetSplit,
        cfg: &TrainConfig,
    ) -> Result<TrainingOutcome, MlError> {
        if split.train.is_empty() {
            return Err(MlError::EmptyTrain);
        }
        let d = data[split.train[0]].features.len();
        let mut counts = vec![0usize; CLASS_COUNT];
        for &i in &split.train {
            counts[data[i].label] += 1;
        }
        let missing_classes = (0..CLASS_COUNT).filter(|&c| counts[c] == 0).collect();
        let outcome = |classifier, curve, best_epoch| TrainingOutcome {
            classifier,
            config: cfg.clone(),
            curve,
            best_epoch,
            missing_classes,
        };
        let hidden: &[usize] = match kind {
            ModelKind::NearestCentroid => {
                let mut sums = vec![vec![0.0; d]; CLASS_COUNT];
                for &i in &split.train {
                    for (s, f) in sums[data[i].label].iter_mut().zip(&data[i].features) {
                        *s += f;
                    }
                }
                let centroids = sums
                    .into_iter()
                    .zip(&counts)
                    .map(|(s, &n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
                    .collect();
                return Ok(outcome(Classifier::NearestCentroid { centroids }, vec![], 0));
            }
            ModelKind::MultinomialLogistic => &[],
            ModelKind::Mlp => &cfg.hidden,
        };
        let wrap = |network| match kind {
            ModelKind::Mlp => Classifier::Mlp { network },
            _ => Classifier::MultinomialLogistic { network },
        };
        let mut net = Network::new(d, hidden, CLASS_COUNT, cfg.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        let mut order = split.train.clone();
        let (train_x, train_y) = batch(data, &split.train);
        let val_top1 = |net: &Network| {
            let c = wrap(net.clone());
            top_k_accuracy(&c, data, &split.val)[0]
        };
        let mut best = (val_top1(&net), 0, net.clone());
        let mut adam = Adam::new(&net);
        let mut curve = Vec::with_capacity(cfg.epochs);
        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let (x, y) = batch(data, chunk);
                let (_, g) = net.loss_and_grad(&x, &y);
                adam.step(&mut net, &g, cfg.learning_rate);
            }
            let acc = val_top1(&net);
            curve.push(EpochStats { epoch, train_loss: net.loss(&train_x, &train_y), val_top1: acc });
            if acc >= best.0 {
                best = (acc, epoch, net.clone());
            }
        }
        Ok(outcome(wrap(best.2), curve, best.1))
    }

    /// Probability per class, summing to one.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Classifier::NearestCentroid { centroids } => {
                let d2: Vec<Option<f64>> = centroids
                    .iter()
                    .map(|c| c.as_ref().map(|c| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum()))
                    .collect();
                let best = d2.iter().flatten().copied().fold(f64::INFINITY, f64::min);
                let e: Vec<f64> = d2.iter().map(|d| d.map_or(0.0, |d| (best - d).exp())).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            }
            Classifier::MultinomialLogistic { network } | Classifier::Mlp { network } => network.probabilities(x),
        }
    }

    /// Labels by descending probability, ties by label index.
    pub fn predict_topk(&self, x: &[f64], k: usize) -> Vec<usize> {
        let p = self.predict_proba(x);
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        order.truncate(k);
        order
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, MlError> {
        serde_json::from_str(s).map_err(|e| MlError::Checkpoint(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), MlError> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn read(path: &Path) -> Result<Self, MlError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::victim::PromptKind;
    use crate::wire::Hand;

    fn sample(features: Vec<f64>, label: usize) -> ByteSample {
        ByteSample { features, label, user_id: 1, hand: Hand::Right, row: 3, prompt_kind: PromptKind::Numbers }
    }

    fn blobs(n: usize, seed: u64) -> Vec<ByteSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let c = i % 5;
                let f = (0..8).map(|j| if j == c { 0.9 } else { 0.1 } + rng.random_range(-0.05..0.05)).collect();
                sample(f, c)
            })
            .collect()
    }

    #[test]
    fn centroid_separable() {
        let data = blobs(200, 1);
        let split = DatasetSplit::stratified(&data.iter().map(|s| s.label).collect::<Vec<_>>(), 2);
        let out = Classifier::train(ModelKind::NearestCentroid, &data, &split, &TrainConfig::default()).unwrap();
        assert_eq!(top_k_accuracy(&out.classifier, &data, &split.val)[0], 1.0);
        assert_eq!(out.missing_classes.len(), CLASS_COUNT - 5);
        let p = out.classifier.predict_proba(&data[0].features);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(out.classifier.predict_topk(&data[3].features, 1), vec![3]);
    }

    #[test]
    fn uniform_topk_lists_every_label() {
        let c = Classifier::NearestCentroid { centroids: vec![Some(vec![0.5]); CLASS_COUNT] };
        let mut all = c.predict_topk(&[0.2], CLASS_COUNT);
        assert_eq!(all[..3], [0, 1, 2]);
        all.sort_unstable();
        assert_eq!(all, (0..CLASS_COUNT).collect::<Vec<_>>());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let data = blobs(16, 3);
        let (x, y) = batch(&data, &(0..16).collect::<Vec<_>>());
        for hidden in [vec![], vec![12, 7]] {
            let net = Network::new(8, &hidden, CLASS_COUNT, 4);
            let err = gradient_check(&net, &x, &y, 10, 5);
            assert!(err < 1e-4, "{hidden:?}: {err}");
        }
    }

    #[test]
    fn mlp_learns_and_checkpoints() {
        let data = blobs(300, 6);
        let split = DatasetSplit::stratified(&data.iter().map(|s| s.label).collect::<Vec<_>>(), 7);
        let cfg = TrainConfig { epochs: 40, learning_rate: 1e-3, hidden: vec![16, 8], ..TrainConfig::default() };
        let out = Classifier::train(ModelKind::Mlp, &data, &split, &cfg).unwrap();
        assert!(out.curve.windows(2).all(|w| w[1].train_loss <= w[0].train_loss + 1e-3));
        let acc = top_k_accuracy(&out.classifier, &data, &split.test);
        assert!(acc[0] > 0.9, "{acc:?} best {}", out.best_epoch);
        let back = Classifier::from_json(&out.classifier.to_json()).unwrap();
        assert_eq!(back.predict_proba(&data[0].features), out.classifier.predict_proba(&data[0].features));
    }
}
