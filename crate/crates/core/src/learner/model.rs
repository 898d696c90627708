use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::learner::data::Dataset;
use crate::rng::{self, Stream};
use crate::tensor::{GradientUpdate, ModelShape};

/// `input -> tanh(hidden) -> softmax(classes)`.
///
/// Parameters live in a [`GradientUpdate`] of the model's shape:
/// `[W1 (input x hidden), b1 (hidden x 1), W2 (hidden x classes), b2 (classes x 1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    shape: ModelShape,
    params: GradientUpdate,
    input: usize,
    hidden: usize,
    classes: usize,
}

struct Activations {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl Model {
    pub fn new(input: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let shape = ModelShape::mlp(input, hidden, classes);
        let mut params = GradientUpdate::zeros(&shape);
        for (i, m) in params.matrices_mut().iter_mut().enumerate() {
            if i % 2 == 1 {
                continue; // biases start at zero
            }
            let fan_in = m.rows() as f64;
            let draws = rng::normal_vec(m.data().len(), rng::stream_seed(seed, Stream::ModelInit, &[i as u64]));
            for (w, z) in m.data_mut().iter_mut().zip(draws) {
                *w = z / fan_in.sqrt();
            }
        }
        Model {
            shape,
            params,
            input,
            hidden,
            classes,
        }
    }

    pub fn with_params(input: usize, hidden: usize, classes: usize, params: GradientUpdate) -> Result<Self> {
        let shape = ModelShape::mlp(input, hidden, classes);
        if params.shape_id() != shape.id() {
            return Err(Error::ShapeMismatch("parameters do not fit the model".into()));
        }
        Ok(Model {
            shape,
            params,
            input,
            hidden,
            classes,
        })
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn params(&self) -> &GradientUpdate {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut GradientUpdate {
        &mut self.params
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    /// `params -= update`
    pub fn apply_update(&mut self, update: &GradientUpdate) -> Result<()> {
        self.params.add_scaled(update, -1.0)
    }

    fn forward(&self, x: &[f64]) -> Activations {
        let m = self.params.matrices();
        let (w1, b1, w2, b2) = (&m[0], &m[1], &m[2], &m[3]);
        let mut hidden = b1.data().to_vec();
        for (d, &xd) in x.iter().enumerate() {
            if xd == 0.0 {
                continue;
            }
            let row = &w1.data()[d * self.hidden..(d + 1) * self.hidden];
            for (h, w) in hidden.iter_mut().zip(row) {
                *h += xd * w;
            }
        }
        hidden.iter_mut().for_each(|h| *h = h.tanh());
        let mut logits = b2.data().to_vec();
        for (h, &a) in hidden.iter().enumerate() {
            let row = &w2.data()[h * self.classes..(h + 1) * self.classes];
            for (l, w) in logits.iter_mut().zip(row) {
                *l += a * w;
            }
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        Activations { hidden, probs }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).probs
    }

    /// Argmax class, ties to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.forward(x).probs;
        let mut best = 0;
        for (c, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = c;
            }
        }
        best
    }

    /// Mean cross-entropy over `idx` and its gradient.
    pub fn loss_and_grad(&self, data: &Dataset, idx: &[usize]) -> (f64, GradientUpdate) {
        let mut grad = GradientUpdate::zeros(&self.shape);
        let mut loss = 0.0;
        let (h_n, c_n) = (self.hidden, self.classes);
        let w2 = self.params.matrices()[2].data().to_vec();
        let mut dz = vec![0.0; h_n];
        for &i in idx {
            let x = data.features(i);
            let y = data.label(i) as usize;
            let act = self.forward(x);
            loss -= act.probs[y].max(1e-300).ln();
            let mut dlogits = act.probs.clone();
            dlogits[y] -= 1.0;
            let g = grad.matrices_mut();
            for (h, &a) in act.hidden.iter().enumerate() {
                let mut back = 0.0;
                for c in 0..c_n {
                    g[2].data_mut()[h * c_n + c] += a * dlogits[c];
                    back += w2[h * c_n + c] * dlogits[c];
                }
                dz[h] = back * (1.0 - a * a);
            }
            for (b, d) in g[3].data_mut().iter_mut().zip(&dlogits) {
                *b += d;
            }
            for (b, d) in g[1].data_mut().iter_mut().zip(&dz) {
                *b += d;
            }
            let w1g = g[0].data_mut();
            for (d, &xd) in x.iter().enumerate() {
                if xd == 0.0 {
                    continue;
                }
                for (w, dzh) in w1g[d * h_n..(d + 1) * h_n].iter_mut().zip(&dz) {
                    *w += xd * dzh;
                }
            }
        }
        let n = idx.len().max(1) as f64;
        (loss / n, grad.scaled(1.0 / n))
    }

    pub fn loss(&self, data: &Dataset, idx: &[usize]) -> f64 {
        let n = idx.len().max(1) as f64;
        idx.iter()
            .map(|&i| -self.forward(data.features(i)).probs[data.label(i) as usize].max(1e-300).ln())
            .sum::<f64>()
            / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub epochs: usize,
    pub lr: f64,
    /// Zero means full batch.
    pub batch_size: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 1,
            lr: 0.1,
            batch_size: 32,
        }
    }
}

/// Mini-batch gradient descent on `shard`; returns `params_before - params_after`.
pub fn local_train(model: &Model, shard: &Dataset, train: TrainParams, seed: u64) -> Result<GradientUpdate> {
    if shard.is_empty() {
        return Err(Error::EmptyShard(shard.owner()));
    }
    let mut local = model.clone();
    let bs = if train.batch_size == 0 {
        shard.len()
    } else {
        train.batch_size.min(shard.len())
    };
    let mut order: Vec<usize> = (0..shard.len()).collect();
    for epoch in 0..train.epochs {
        let mut rng = rng::rng(rng::stream_seed(seed, Stream::Training, &[epoch as u64]));
        order.shuffle(&mut rng);
        for batch in order.chunks(bs) {
            let (_, g) = local.loss_and_grad(shard, batch);
            local.params.add_scaled(&g, -train.lr)?;
        }
    }
    let mut update = model.params.clone();
    update.add_scaled(&local.params, -1.0)?;
    Ok(update)
}

/// Largest relative gap between the analytic gradient and central differences
/// with step `h`, over every parameter. Gaps below `1e-7` in both terms count
/// as agreement.
pub fn gradient_check(model: &Model, data: &Dataset, idx: &[usize], h: f64) -> f64 {
    let (_, grad) = model.loss_and_grad(data, idx);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (k, analytic) in grad.to_flat().into_iter().enumerate() {
        let orig = *probe.params.values_mut().nth(k).expect("index within params");
        let mut loss_at = |v: f64| {
            *probe.params.values_mut().nth(k).expect("index within params") = v;
            probe.loss(data, idx)
        };
        let plus = loss_at(orig + h);
        let minus = loss_at(orig - h);
        loss_at(orig);
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    worst
}

/// Fraction of argmax-correct predictions.
pub fn evaluate(model: &Model, test: &Dataset) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let correct = (0..test.len())
        .filter(|&i| model.predict(test.features(i)) == test.label(i) as usize)
        .count();
    correct as f64 / test.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::data::{generate_synthetic, SyntheticSpec};

    fn tiny_data() -> Dataset {
        generate_synthetic(
            &SyntheticSpec {
                dim: 4,
                classes: 3,
                separation: 3.0,
                noise: 1.0,
            },
            30,
            7,
        )
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = Model::new(4, 5, 3, 1);
        let d = tiny_data();
        for i in 0..d.len() {
            let s: f64 = m.predict_proba(d.features(i)).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_learning_rate_gives_zero_update() {
        let m = Model::new(4, 5, 3, 1);
        let u = local_train(&m, &tiny_data(), TrainParams { epochs: 3, lr: 0.0, batch_size: 8 }, 2).unwrap();
        assert!(u.values().all(|x| x == 0.0));
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let m = Model::new(4, 5, 3, 1);
        let t = TrainParams::default();
        assert_eq!(
            local_train(&m, &tiny_data(), t, 9).unwrap(),
            local_train(&m, &tiny_data(), t, 9).unwrap()
        );
    }

    #[test]
    fn empty_shard_errors() {
        let m = Model::new(4, 5, 3, 1);
        let empty = tiny_data().subset(&[], 4);
        assert_eq!(local_train(&m, &empty, TrainParams::default(), 0), Err(Error::EmptyShard(4)));
    }

    #[test]
    fn uniform_model_hits_chance_on_balanced_data() {
        let mut m = Model::new(4, 5, 3, 1);
        m.params_mut().values_mut().for_each(|w| *w = 0.0);
        let d = tiny_data();
        // every prediction ties -> class 0, which is a third of the data
        assert!((evaluate(&m, &d) - 1.0 / 3.0).abs() < 1e-12);
        let doubled = d.concat(&d);
        assert_eq!(evaluate(&m, &d), evaluate(&m, &doubled));
    }

    #[test]
    fn memorizes_a_small_training_set() {
        let d = tiny_data();
        let mut m = Model::new(4, 16, 3, 3);
        let t = TrainParams { epochs: 400, lr: 0.5, batch_size: 0 };
        let u = local_train(&m, &d, t, 1).unwrap();
        m.apply_update(&u).unwrap();
        assert_eq!(evaluate(&m, &d), 1.0);
    }

    #[test]
    fn backprop_matches_central_differences() {
        let d = tiny_data();
        let m = Model::new(4, 5, 3, 8);
        let idx: Vec<usize> = (0..d.len()).collect();
        let worst = gradient_check(&m, &d, &idx, 1e-5);
        assert!(worst < 1e-5, "worst relative error {worst}");
    }
}
