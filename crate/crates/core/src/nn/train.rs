use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, Metrics};

use super::adam::{Adam, AdamConfig};
use super::loss::softmax;
use super::network::{stream_rng, DualBranchNet, Gradients, NetworkConfig};
use super::{Real, Tensor};

const SHUFFLE_STREAM: u64 = 4;

/// One network input pair with its class.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub image: Tensor<T>,
    pub glcm: Option<Tensor<T>>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub adam: AdamConfig,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Evaluate the samples of a mini-batch on the rayon pool. Per-sample
    /// gradients are still summed in batch order, so results do not change.
    #[serde(default)]
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 16, adam: AdamConfig::default(), seed: 0, parallel: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
    /// One-vs-others AUC per class on the test split.
    pub test_auc: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<T> {
    pub history: Vec<EpochRecord>,
    pub model: DualBranchNet<T>,
}

impl<T> TrainReport<T> {
    pub fn epochs(&self) -> usize {
        self.history.len()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.history.last()
    }

    /// Epoch with the lowest test loss (first one on ties).
    pub fn best_by_test_loss(&self) -> Option<&EpochRecord> {
        self.history
            .iter()
            .filter(|r| r.test_loss.is_some())
            .min_by(|a, b| a.test_loss.partial_cmp(&b.test_loss).expect("finite losses"))
    }

    /// `epoch,train_loss,test_loss,test_acc`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_loss,test_acc\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.history {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, opt(r.test_loss), opt(r.test_acc)));
        }
        out
    }
}

fn check_samples<T: Real>(samples: &[Sample<T>], classes: usize) -> Result<()> {
    for s in samples {
        if s.label >= classes {
            return Err(Error::LabelOutOfRange { label: s.label, classes });
        }
    }
    Ok(())
}

fn sample_grads<T: Real>(net: &DualBranchNet<T>, s: &Sample<T>) -> Result<(T, Gradients<T>)> {
    let mut g = net.zero_grads();
    let loss = net.loss_and_grads(&s.image, s.glcm.as_ref(), s.label, &mut g)?;
    Ok((loss, g))
}

/// Trains a freshly initialized network and evaluates it on `test` after
/// every epoch.
///
/// Deterministic given `config.seed` and `opts.seed`.
pub fn train<T: Real>(
    config: &NetworkConfig,
    train_set: &[Sample<T>],
    test_set: &[Sample<T>],
    opts: &TrainConfig,
) -> Result<TrainReport<T>> {
    if train_set.is_empty() {
        return Err(Error::invalid("training set", "no samples"));
    }
    if opts.batch_size == 0 {
        return Err(Error::invalid("train config", "batch_size must be positive"));
    }
    check_samples(train_set, config.num_classes)?;
    check_samples(test_set, config.num_classes)?;
    let mut net = DualBranchNet::<T>::new(config.clone())?;
    let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let mut adam = Adam::<T>::new(opts.adam, &sizes);
    let mut rng = stream_rng(opts.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(opts.epochs);

    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let (batch_loss, mut grads) = if opts.parallel {
                let parts = batch
                    .par_iter()
                    .map(|&i| sample_grads(&net, &train_set[i]))
                    .collect::<Result<Vec<_>>>()?;
                let mut total = net.zero_grads();
                let mut loss = T::zero();
                for (l, g) in &parts {
                    loss += *l;
                    total.add(g);
                }
                (loss, total)
            } else {
                let mut total = net.zero_grads();
                let mut loss = T::zero();
                for &i in batch {
                    let s = &train_set[i];
                    loss += net.loss_and_grads(&s.image, s.glcm.as_ref(), s.label, &mut total)?;
                }
                (loss, total)
            };
            let batch_loss = batch_loss.to_f64_lossy();
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch, reason: format!("training loss is {batch_loss}") });
            }
            loss_sum += batch_loss;
            grads.scale(T::one() / T::lit(batch.len() as f64));
            adam.step(&mut net.params_mut(), &grads.0).map_err(|e| match e {
                Error::Diverged { reason, .. } => Error::Diverged { epoch, reason },
                other => other,
            })?;
        }
        let mut record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            test_loss: None,
            test_acc: None,
            test_auc: Vec::new(),
        };
        if !test_set.is_empty() {
            let m = evaluate(&net, test_set)?;
            if !m.loss.is_finite() {
                return Err(Error::Diverged { epoch, reason: format!("test loss is {}", m.loss) });
            }
            record.test_loss = Some(m.loss);
            record.test_acc = Some(m.accuracy);
            record.test_auc = m.auc;
        }
        history.push(record);
    }
    Ok(TrainReport { history, model: net })
}

/// Class probabilities for each sample, in `f64`.
pub fn predict<T: Real>(net: &DualBranchNet<T>, samples: &[Sample<T>]) -> Result<Vec<Vec<f64>>> {
    samples
        .iter()
        .map(|s| {
            let logits = net.forward_dual(&s.image, s.glcm.as_ref())?;
            let logits: Vec<f64> = logits.iter().map(|v| v.to_f64_lossy()).collect();
            Ok(softmax(&logits))
        })
        .collect()
}

pub fn evaluate<T: Real>(net: &DualBranchNet<T>, samples: &[Sample<T>]) -> Result<Metrics> {
    let probs = predict(net, samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    metrics::summarize(&probs, &labels, net.config().num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(classes: usize) -> NetworkConfig {
        NetworkConfig {
            image_shape: [1, 6, 6],
            glcm_shape: [1, 4, 4],
            image_branch: vec![LayerSpec::Conv { filters: 2, kernel: 3, stride: 1, padding: 1 }, LayerSpec::Relu, LayerSpec::Maxpool2],
            glcm_branch: vec![],
            image_feature_width: 6,
            glcm_feature_width: 3,
            num_classes: classes,
            seed: 3,
        }
    }

    /// Class 1 images are brighter on the left half, class 0 on the right.
    fn separable(n: usize, seed: u64) -> Vec<Sample<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let image = Tensor::from_fn(&[1, 6, 6], |k| {
                    let left = k % 6 < 3;
                    let base = if left == (label == 1) { 1.0 } else { 0.0 };
                    base + rng.random_range(-0.2..0.2)
                });
                let glcm = Tensor::from_fn(&[1, 4, 4], |_| rng.random_range(0.0..1.0));
                Sample { image, glcm: Some(glcm), label }
            })
            .collect()
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let data = separable(80, 1);
        let (tr, te) = data.split_at(60);
        let opts = TrainConfig { epochs: 50, adam: AdamConfig { learning_rate: 1e-2, ..Default::default() }, ..Default::default() };
        let report = train(&config(2), tr, te, &opts).unwrap();
        assert_eq!(report.epochs(), 50);
        assert_eq!(report.last().unwrap().test_acc, Some(1.0));
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let data = separable(10, 2);
        let report = train(&config(2), &data, &[], &TrainConfig { epochs: 0, ..Default::default() }).unwrap();
        assert!(report.history.is_empty());
        assert_eq!(report.model, DualBranchNet::new(config(2)).unwrap());
    }

    #[test]
    fn untrained_loss_is_near_ln_k() {
        let data = separable(64, 3);
        for k in [2usize, 3, 4] {
            let net = DualBranchNet::<f32>::new(config(k)).unwrap();
            let relabeled: Vec<_> = data.iter().enumerate().map(|(i, s)| Sample { label: i % k, ..s.clone() }).collect();
            let m = evaluate(&net, &relabeled).unwrap();
            assert!((m.loss - (k as f64).ln()).abs() < 0.5, "k={k}: {} vs {}", m.loss, (k as f64).ln());
        }
    }

    #[test]
    fn training_is_deterministic_and_parallel_path_matches() {
        let data = separable(40, 4);
        let (tr, te) = data.split_at(30);
        let opts = TrainConfig { epochs: 3, batch_size: 7, ..Default::default() };
        let a = train(&config(2), tr, te, &opts).unwrap();
        let b = train(&config(2), tr, te, &opts).unwrap();
        let c = train(&config(2), tr, te, &TrainConfig { parallel: true, ..opts }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let bits = |r: &TrainReport<f32>| r.model.params().iter().flat_map(|p| p.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&c));
    }

    #[test]
    fn glcm_free_config_matches_image_only_trajectory() {
        let data = separable(30, 5);
        let zeroed: Vec<_> = data
            .iter()
            .map(|s| Sample { glcm: Some(Tensor::zeros(&[1, 4, 4])), ..s.clone() })
            .collect();
        let without: Vec<_> = data.iter().map(|s| Sample { glcm: None, ..s.clone() }).collect();
        let opts = TrainConfig { epochs: 4, ..Default::default() };
        let ablated = train(&config(2).image_only(), &zeroed[..20], &zeroed[20..], &opts).unwrap();
        let baseline = train(&config(2).image_only(), &without[..20], &without[20..], &opts).unwrap();
        assert_eq!(ablated.history, baseline.history);
        assert_eq!(ablated.model, baseline.model);
    }

    #[test]
    fn bad_labels_and_empty_sets() {
        let mut data = separable(4, 6);
        assert!(train(&config(2), &[], &data, &TrainConfig::default()).is_err());
        data[0].label = 5;
        assert!(matches!(train(&config(2), &data, &[], &TrainConfig::default()), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn non_finite_loss_reports_divergence_epoch() {
        let mut data = separable(16, 7);
        data[3].image.data_mut()[0] = f32::NAN;
        match train(&config(2), &data, &[], &TrainConfig { epochs: 3, ..Default::default() }) {
            Err(Error::Diverged { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {:?}", other.map(|r| r.history)),
        }
    }

    #[test]
    fn report_csv_layout() {
        let data = separable(10, 8);
        let report = train(&config(2), &data, &data[..4], &TrainConfig { epochs: 2, ..Default::default() }).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,test_loss,test_acc");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("2,"));
    }
}
