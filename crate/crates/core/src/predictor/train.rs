use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use super::dataset::{TrainingDataset, TrainingEntry};
use super::fdiff::{self, Shift};
use super::network::{self, Adam, Loss, Params};
use super::{EpochLog, PredictorError, PredictorModel, TrainConfig};
use crate::encode::{EncodedSequence, FeatureNormalizer};
use crate::rng;
use crate::sim::PerfMode;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

fn layer_dims(config: &TrainConfig, outputs: usize) -> Vec<usize> {
    let mut dims = config.fc_dims.clone();
    dims.push(outputs);
    dims
}

pub(crate) fn init_params(config: &TrainConfig, input: usize, outputs: usize) -> Params {
    let mut r = rng::stream(rng::derive_seed(config.seed, INIT_STREAM));
    Params::init(input, config.hidden_size, &layer_dims(config, outputs), &mut r)
}

/// Loss and parameter gradients on one batch.
fn batch_step(
    p: &Params,
    xs: Vec<Array2<f64>>,
    y: &Array2<f64>,
    masks: Vec<Option<Array2<f64>>>,
    loss: Loss,
) -> (f64, Params) {
    let cache = network::lstm_forward(p, xs);
    let head = network::head_forward(p, cache.last_hidden(), masks);
    let (l, dy) = network::loss_and_grad(loss, &head.out, y);
    let mut grads = p.zeros_like();
    let dh = network::head_backward(p, &head, &dy, &mut grads);
    network::lstm_backward(p, &cache, dh, &mut grads);
    (l, grads)
}

fn eval_loss(p: &Params, data: &TrainingDataset, idx: &[usize], loss: Loss) -> f64 {
    let hidden = p.fc.len() - 1;
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in idx.chunks(256) {
        let cache = network::lstm_forward(p, data.batch_inputs(chunk));
        let out = network::head_forward(p, cache.last_hidden(), vec![None; hidden]).out;
        let y = data.batch_targets(chunk);
        total += network::loss_only(loss, &out, &y) * y.len() as f64;
        count += y.len();
    }
    total / count as f64
}

/// Trains on the dataset's train split with Adam; evaluates the test split
/// after every epoch. Deterministic in `config.seed`.
pub fn train(
    data: &TrainingDataset,
    normalizer: &FeatureNormalizer,
    config: &TrainConfig,
) -> Result<PredictorModel, PredictorError> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    if data.entries[0].features.num_stages != normalizer.num_stages {
        return Err(PredictorError::Shape("dataset and normalizer disagree on stage count".into()));
    }
    let mut params = init_params(config, data.input_width(), data.keys.len());
    let mut adam = Adam::new(&params, config.learning_rate);
    let mut log = Vec::with_capacity(config.max_epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    for epoch in 0..config.max_epochs {
        let mut order = data.train.clone();
        order.shuffle(&mut rng::stream(rng::derive_seed_path(config.seed, &[SHUFFLE_STREAM, epoch as u64])));
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut r = rng::stream(rng::derive_seed_path(config.seed, &[DROPOUT_STREAM, epoch as u64, bi as u64]));
            let masks = network::dropout_masks(&params, chunk.len(), config.dropout, &mut r);
            let y = data.batch_targets(chunk);
            let (l, grads) = batch_step(&params, data.batch_inputs(chunk), &y, masks, config.loss);
            if !l.is_finite() {
                return Err(PredictorError::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: bi,
                });
            }
            adam.update(&mut params, &grads);
            total += l * chunk.len() as f64;
        }
        let train_loss = total / data.train.len() as f64;
        let test_loss = (!data.test.is_empty()).then(|| eval_loss(&params, data, &data.test, config.loss));
        log.push(EpochLog {
            epoch: epoch + 1,
            train_loss,
            test_loss,
        });
        if let Some(es) = config.early_stop {
            let monitored = test_loss.unwrap_or(train_loss);
            if monitored < best - es.min_delta {
                best = monitored;
                stale = 0;
            } else {
                stale += 1;
                if stale >= es.patience {
                    break;
                }
            }
        }
    }
    if !params.all_finite() {
        return Err(PredictorError::NonFiniteLoss {
            epoch: log.len(),
            batch: 0,
        });
    }
    Ok(PredictorModel {
        params,
        normalizer: normalizer.clone(),
        config: config.clone(),
        output_keys: data.keys.clone(),
        mode: data.mode,
        training_log: log,
    })
}

/// Largest finite-difference disagreement found by [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub max_relative_error: f64,
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Smallest `|pre-activation|` of any ReLU unit on the probe. Central
    /// differences are only meaningful when this exceeds the step.
    pub relu_margin: f64,
}

const FD_STEP: f64 = 1e-5;

/// Compares backpropagated gradients of a freshly initialized model with
/// central finite differences on every parameter, dropout disabled.
pub fn gradient_check(config: &TrainConfig, probe: &TrainingDataset) -> Result<GradientReport, PredictorError> {
    config.validate()?;
    let params = init_params(config, probe.input_width(), probe.keys.len());
    Ok(check_params(params, config.loss, probe))
}

fn relu_margin(p: &Params, lstm_out: &Array2<f64>) -> f64 {
    let hidden_layers = p.fc.len() - 1;
    network::head_forward(p, lstm_out, vec![None; hidden_layers])
        .pre
        .iter()
        .flat_map(|a| a.iter())
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

pub(crate) fn check_params(p: Params, loss: Loss, probe: &TrainingDataset) -> GradientReport {
    let idx: Vec<usize> = (0..probe.len()).collect();
    let y = probe.batch_targets(&idx);
    let xs = probe.batch_inputs(&idx);
    let hidden_layers = p.fc.len() - 1;
    let (_, grads) = batch_step(&p, xs.clone(), &y, vec![None; hidden_layers], loss);
    let base = fdiff::Base::new(&p, &xs);

    let mut report = GradientReport {
        max_relative_error: 0.0,
        tensor: String::new(),
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        relu_margin: relu_margin(&p, base.lstm_out()),
    };
    let names = p.tensor_names();
    for (ti, (name, g)) in names.iter().zip(grads.tensors()).enumerate() {
        for (k, &a) in g.iter().enumerate() {
            let orig = p.tensors()[ti][k];
            let shift = Shift {
                tensor: ti,
                index: k,
                orig,
                plus: orig + FD_STEP,
                minus: orig - FD_STEP,
            };
            let numeric = fdiff::loss_change(&p, &xs, &base, &y, loss, &shift) / (shift.plus - shift.minus);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.tensor = name.clone();
                report.index = k;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report
}

/// Small random dataset for gradient checks: `entries` sequences of
/// `stages` stages over `qubits` qubits with labels in `(0.1, 0.9)`.
pub fn synthetic_probe(qubits: usize, stages: usize, entries: usize, outputs: usize, seed: u64) -> TrainingDataset {
    let mut r = rng::stream(seed);
    let items = (0..entries).map(|i| random_entry(&mut r, i, qubits, stages, outputs)).collect();
    probe_from(items, outputs, seed)
}

/// Like [`synthetic_probe`], but redraws entries until every ReLU unit of the
/// model initialized from `config` sits at least `margin` away from its kink.
pub fn kink_free_probe(
    config: &TrainConfig,
    qubits: usize,
    stages: usize,
    entries: usize,
    outputs: usize,
    seed: u64,
    margin: f64,
) -> TrainingDataset {
    let p = init_params(config, qubits * crate::encode::BASE_TUPLE_WIDTH, outputs);
    kink_free_probe_for(&p, qubits, stages, entries, outputs, seed, margin)
}

pub(crate) fn kink_free_probe_for(
    p: &Params,
    qubits: usize,
    stages: usize,
    entries: usize,
    outputs: usize,
    seed: u64,
    margin: f64,
) -> TrainingDataset {
    let mut r = rng::stream(seed);
    let width = qubits * crate::encode::BASE_TUPLE_WIDTH;
    let mut items = Vec::with_capacity(entries);
    while items.len() < entries {
        let e = random_entry(&mut r, items.len(), qubits, stages, outputs);
        let xs = (0..stages)
            .map(|t| Array2::from_shape_vec((1, width), e.features.stage(t).to_vec()).expect("stage width"))
            .collect();
        let h = network::lstm_forward(p, xs);
        if relu_margin(p, h.last_hidden()) >= margin {
            items.push(e);
        }
    }
    probe_from(items, outputs, seed)
}

fn random_entry(r: &mut rand_chacha::ChaCha8Rng, i: usize, qubits: usize, stages: usize, outputs: usize) -> TrainingEntry {
    let tw = crate::encode::BASE_TUPLE_WIDTH;
    TrainingEntry {
        timestamp: i as u64,
        position: i,
        features: EncodedSequence {
            num_stages: stages,
            num_qubits: qubits,
            tuple_width: tw,
            data: (0..stages * qubits * tw).map(|_| r.random::<f64>()).collect(),
        },
        label: (0..outputs).map(|_| r.random_range(0.1..0.9)).collect(),
    }
}

fn probe_from(items: Vec<TrainingEntry>, outputs: usize, seed: u64) -> TrainingDataset {
    let keys = (0..outputs).map(|k| format!("y{k}")).collect();
    TrainingDataset::from_entries(items, keys, PerfMode::Probability, 0.0, seed).expect("probe is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_config(loss: Loss, seed: u64) -> TrainConfig {
        TrainConfig {
            loss,
            seed,
            dropout: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for loss in [Loss::Msle, Loss::Mse] {
            let cfg = check_config(loss, 7);
            let probe = kink_free_probe(&cfg, 2, 3, 4, 2, 11, 1e-4);
            let r = gradient_check(&cfg, &probe).unwrap();
            assert!(r.relu_margin > FD_STEP);
            assert!(r.max_relative_error <= 1e-5, "{loss:?}: {r:?}");
            assert_eq!(r.checked, init_params(&cfg, probe.input_width(), 2).num_params());
        }
    }

    #[test]
    fn zeroed_input_weights_still_check() {
        // Zero input weights with zero cell bias pin every hidden state at 0
        // and the whole head on its kinks, so the biases are randomized.
        let cfg = TrainConfig {
            hidden_size: 8,
            fc_dims: vec![6, 4],
            ..check_config(Loss::Msle, 3)
        };
        let mut p = init_params(&cfg, 2 * crate::encode::BASE_TUPLE_WIDTH, 1);
        p.wx.fill(0.0);
        let mut r = rng::stream(17);
        p.b.mapv_inplace(|_| r.random_range(-1.0..1.0));
        for d in &mut p.fc {
            d.b.mapv_inplace(|_| r.random_range(-0.5..0.5));
        }
        let probe = synthetic_probe(2, 3, 4, 1, 5);
        let report = check_params(p, Loss::Msle, &probe);
        assert!(report.relu_margin > 1e-4, "{report:?}");
        assert!(report.max_relative_error <= 1e-5, "{report:?}");
    }

    #[test]
    fn difference_arithmetic_matches_plain_differences() {
        let cfg = TrainConfig {
            hidden_size: 6,
            fc_dims: vec![5, 4],
            ..check_config(Loss::Mse, 5)
        };
        let probe = kink_free_probe(&cfg, 2, 3, 3, 2, 9, 1e-2);
        let p = init_params(&cfg, probe.input_width(), 2);
        let idx: Vec<usize> = (0..probe.len()).collect();
        let (xs, y) = (probe.batch_inputs(&idx), probe.batch_targets(&idx));
        let base = fdiff::Base::new(&p, &xs);
        let plain = |p: &Params, loss| {
            let c = network::lstm_forward(p, xs.clone());
            network::loss_only(loss, &network::head_forward(p, c.last_hidden(), vec![None; 2]).out, &y)
        };
        for loss in [Loss::Mse, Loss::Msle] {
            for ti in 0..p.tensors().len() {
                for k in [0, p.tensors()[ti].len() - 1] {
                    let orig = p.tensors()[ti][k];
                    let s = Shift {
                        tensor: ti,
                        index: k,
                        orig,
                        plus: orig + 1e-3,
                        minus: orig - 1e-3,
                    };
                    let mut q = p.clone();
                    q.tensors_mut()[ti][k] = s.plus;
                    let up = plain(&q, loss);
                    q.tensors_mut()[ti][k] = s.minus;
                    let expected = up - plain(&q, loss);
                    let got = fdiff::loss_change(&p, &xs, &base, &y, loss, &s);
                    assert!((got - expected).abs() <= 1e-12 + 1e-9 * expected.abs(), "{ti}/{k}: {got} vs {expected}");
                }
            }
        }
    }

    #[test]
    fn kinked_probe_is_reported() {
        let cfg = check_config(Loss::Mse, 1);
        let probe = kink_free_probe(&cfg, 2, 3, 4, 2, 3, 1e-3);
        let p = init_params(&cfg, probe.input_width(), 2);
        let idx: Vec<usize> = (0..probe.len()).collect();
        let c = network::lstm_forward(&p, probe.batch_inputs(&idx));
        assert!(relu_margin(&p, c.last_hidden()) >= 1e-3);
    }

    #[test]
    fn probe_is_deterministic() {
        assert_eq!(synthetic_probe(2, 3, 4, 1, 5), synthetic_probe(2, 3, 4, 1, 5));
    }
}
