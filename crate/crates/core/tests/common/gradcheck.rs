//! Analytic gradients against central finite differences, in f64, on a
//! 2-layer, 16-hidden, 2-head model.

use bilm::model::{
    loss_and_grads, MaskedBatch, ModelConfig, ModelParams, Objective, IGNORE_LABEL,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        hidden: 16,
        heads: 2,
        max_seq_len: 8,
        vocab_size: 11,
        ffn_multiplier: 4,
        dropout_rate: 0.0,
    }
}

/// Random parameters at a scale where every tensor gets a visible gradient.
fn random_params(cfg: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::<f64>::zeros(cfg);
    for t in p.tensors_mut() {
        let gain = t.name.ends_with(".gain");
        for x in t.data.iter_mut() {
            let r: f64 = rng.random_range(-0.4..0.4);
            *x = if gain { 1.0 + r } else { r };
        }
    }
    p
}

fn batch() -> MaskedBatch {
    let ids = ndarray::arr2(&[[2u32, 7, 4, 9, 3, 5, 6, 3], [2, 4, 10, 3, 8, 3, 0, 0]]);
    let mut mask = Array2::from_elem((2, 8), true);
    mask[[1, 6]] = false;
    mask[[1, 7]] = false;
    let mut labels = Array2::from_elem((2, 8), IGNORE_LABEL);
    labels[[0, 2]] = 8;
    labels[[0, 5]] = 5;
    labels[[1, 2]] = 1;
    labels[[1, 4]] = 6;
    MaskedBatch {
        input_ids: ids,
        attention_mask: mask,
        segment_ids: ndarray::arr2(&[[0u8, 0, 0, 0, 0, 1, 1, 1], [0, 0, 0, 0, 1, 1, 0, 0]]),
        mlm_labels: labels,
        pair_labels: Some(vec![1, 0]),
    }
}

/// Relative error with a small absolute floor so exact zeros compare cleanly.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error between analytic and central-difference gradients
/// over every parameter, and where it occurred.
pub fn worst_error(objective: Objective) -> (f64, String) {
    let cfg = config();
    let params = random_params(&cfg, 42);
    let batch = batch();
    let (_, grads) = loss_and_grads(&params, &cfg, &batch, objective).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.data.to_vec()))
        .collect();

    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    let mut probe = params.clone();
    let n_tensors = analytic.len();
    for ti in 0..n_tensors {
        let len = analytic[ti].1.len();
        for i in 0..len {
            let original = probe.tensors()[ti].data[i];
            probe.tensors_mut()[ti].data[i] = original + h;
            let (up, _) = loss_and_grads(&probe, &cfg, &batch, objective).unwrap();
            probe.tensors_mut()[ti].data[i] = original - h;
            let (down, _) = loss_and_grads(&probe, &cfg, &batch, objective).unwrap();
            probe.tensors_mut()[ti].data[i] = original;
            let numeric = (up - down) / (2.0 * h);
            let err = rel_err(analytic[ti].1[i], numeric);
            if err > worst.0 {
                worst = (err, format!("{}[{i}]: analytic {} numeric {numeric}", analytic[ti].0, analytic[ti].1[i]));
            }
        }
    }
    worst
}

