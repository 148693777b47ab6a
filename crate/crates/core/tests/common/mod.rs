//! Fixtures and independent reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use lanepred::data::{HorizonConfig, Maneuver, NeighborObservation, Sample, VehicleState, NUM_SLOTS, SAMPLE_RATE_HZ};
use lanepred::hmm::GaussianHmm;
use lanepred::math::{Matrix, Vector};
use lanepred::models::{batch_loss_and_grads, ArchConfig, LaneSrnn};
use lanepred::nn::{zeros_like, LstmCell, Parameterized};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error 1e-4 with an absolute floor of 1e-7.
pub fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= 1e-7 || diff <= 1e-4 * analytic.abs().max(numeric.abs())
}

/// Compares `analytic` with central differences of `loss` over every
/// parameter of `model`.
pub fn check_param_gradients<M: Parameterized + Clone>(model: &M, analytic: &[f64], loss: impl Fn(&M) -> f64) -> Result<usize, String> {
    let mut probe = model.clone();
    let mut idx = 0;
    for s in 0..probe.param_slices().len() {
        for j in 0..probe.param_slices()[s].len() {
            let orig = probe.param_slices()[s][j];
            probe.param_slices_mut()[s][j] = orig + FD_STEP;
            let plus = loss(&probe);
            probe.param_slices_mut()[s][j] = orig - FD_STEP;
            let minus = loss(&probe);
            probe.param_slices_mut()[s][j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            if !close(analytic[idx], numeric) {
                return Err(format!("slice {s} index {j}: analytic {} numeric {numeric}", analytic[idx]));
            }
            idx += 1;
        }
    }
    if idx != analytic.len() {
        return Err(format!("gradient has {} entries for {idx} parameters", analytic.len()));
    }
    Ok(idx)
}

/// Moves every parameter (layer-norm gains and biases included) off its
/// initial value so no path is trivially zero.
pub fn jitter<M: Parameterized>(model: &mut M, rng: &mut ChaCha8Rng, amount: f64) {
    for s in model.param_slices_mut() {
        for x in s.iter_mut() {
            *x += rng.random_range(-amount..amount);
        }
    }
}

/// Loss `Σ_k <r_k, h_k>`, linear in the hidden outputs.
pub fn probe_loss(cell: &LstmCell, inputs: &[Matrix], probes: &[Vec<f64>]) -> f64 {
    let trace = cell.forward(inputs, None).unwrap();
    (0..inputs.len())
        .map(|k| trace.hidden(k).iter().zip(&probes[k]).map(|(h, r)| h * r).sum::<f64>())
        .sum()
}

pub fn random_lstm_instance(seed: u64, layer_norm: bool) -> (LstmCell, Vec<Matrix>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rng.random_range(1..=3);
    let hidden = rng.random_range(2..=4);
    let steps = rng.random_range(1..=3);
    let batch = rng.random_range(1..=2);
    let mut cell = LstmCell::new(input, hidden, layer_norm, &mut rng);
    jitter(&mut cell, &mut rng, 0.5);
    let inputs = (0..steps)
        .map(|_| Matrix::from_vec(batch, input, (0..batch * input).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap())
        .collect();
    let probes = (0..steps)
        .map(|_| (0..batch * hidden).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    (cell, inputs, probes)
}

/// Parameter and input gradients of one random LSTM instance.
pub fn check_lstm_gradients(seed: u64, layer_norm: bool) -> Result<(), String> {
    let (cell, inputs, probes) = random_lstm_instance(seed, layer_norm);
    let trace = cell.forward(&inputs, None).map_err(|e| e.to_string())?;
    let mut grads = zeros_like(&cell);
    let dx = cell.backward(&inputs, &trace, &probes, &mut grads).map_err(|e| e.to_string())?;
    check_param_gradients(&cell, &grads.flat_params(), |c| probe_loss(c, &inputs, &probes))
        .map_err(|e| format!("lstm seed {seed} layer norm {layer_norm}: {e}"))?;
    for (k, x) in inputs.iter().enumerate() {
        for j in 0..x.as_slice().len() {
            let mut perturbed = inputs.clone();
            perturbed[k].as_mut_slice()[j] += FD_STEP;
            let plus = probe_loss(&cell, &perturbed, &probes);
            perturbed[k].as_mut_slice()[j] -= 2.0 * FD_STEP;
            let minus = probe_loss(&cell, &perturbed, &probes);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = dx[k].as_slice()[j];
            if !close(a, numeric) {
                return Err(format!("lstm seed {seed} input step {k} index {j}: analytic {a} numeric {numeric}"));
            }
        }
    }
    Ok(())
}

pub fn random_state(rng: &mut ChaCha8Rng) -> VehicleState {
    VehicleState {
        px: rng.random_range(-2.0..2.0),
        py: rng.random_range(-2.0..2.0),
        psi: rng.random_range(-1.0..1.0),
        vx: rng.random_range(-2.0..2.0),
        vy: rng.random_range(-2.0..2.0),
        psi_dot: rng.random_range(-1.0..1.0),
        n_left: rng.random_range(0..3) as f64,
        n_right: rng.random_range(0..3) as f64,
    }
}

/// A sample with `steps` random (already standardized-looking) steps and a
/// random mix of present and absent neighbors.
pub fn random_sample(rng: &mut ChaCha8Rng, steps: usize, label: Maneuver) -> Sample {
    let horizon = HorizonConfig::custom(steps as f64 / SAMPLE_RATE_HZ, 1.0).unwrap();
    let target_history = (0..steps).map(|_| random_state(rng)).collect();
    let neighbor_histories: [Vec<NeighborObservation>; NUM_SLOTS] = std::array::from_fn(|_| {
        (0..steps)
            .map(|_| {
                if rng.random_bool(0.7) {
                    NeighborObservation::present(random_state(rng))
                } else {
                    NeighborObservation::ABSENT
                }
            })
            .collect()
    });
    Sample {
        horizon,
        label,
        target_history,
        neighbor_histories,
        source_track_id: rng.random(),
        source_time: rng.random_range(0..1000),
    }
}

/// End-to-end gradient of the weighted loss through a shrunken lane SRNN
/// (hidden size 4, two steps, layer norm on, no dropout).
pub fn check_srnn_gradients(seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = LaneSrnn::new(
        ArchConfig {
            hidden_size: 4,
            layer_norm: true,
        },
        seed,
    );
    jitter(&mut model, &mut rng, 0.3);
    let batch_size = 1 + (seed % 2) as usize;
    let samples: Vec<Sample> = (0..batch_size).map(|i| random_sample(&mut rng, 2, Maneuver::ALL[(seed as usize + i) % 3])).collect();
    let batch: Vec<&Sample> = samples.iter().collect();
    let (_, grads) = batch_loss_and_grads(&model, &batch, None).map_err(|e| e.to_string())?;
    check_param_gradients(&model, &grads.flat_params(), |m| batch_loss_and_grads(m, &batch, None).unwrap().0)
        .map_err(|e| format!("srnn seed {seed}: {e}"))
}

pub fn random_hmm(rng: &mut ChaCha8Rng, num_states: usize, dim: usize) -> GaussianHmm {
    let normalize = |w: Vec<f64>| -> Vec<f64> {
        let s: f64 = w.iter().sum();
        w.iter().map(|x| (x / s).ln()).collect()
    };
    let initial = normalize((0..num_states).map(|_| rng.random_range(0.05..1.0)).collect());
    let mut transition = Matrix::zeros(num_states, num_states);
    for i in 0..num_states {
        let row = normalize((0..num_states).map(|_| rng.random_range(0.05..1.0)).collect());
        for (j, v) in row.into_iter().enumerate() {
            transition.set(i, j, v);
        }
    }
    GaussianHmm {
        num_states,
        initial_log_probs: Vector::from(initial),
        transition_log_probs: transition,
        emission_means: (0..num_states).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect(),
        emission_variances: (0..num_states).map(|_| (0..dim).map(|_| rng.random_range(0.3..2.0)).collect()).collect(),
    }
}

fn gaussian_log_density(mean: &[f64], var: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(var)
        .zip(x)
        .map(|((m, v), x)| -0.5 * ((2.0 * PI * v).ln() + (x - m) * (x - m) / v))
        .sum()
}

/// Log-likelihood by summing the probability of every state path.
pub fn brute_force_log_likelihood(hmm: &GaussianHmm, obs: &Matrix) -> f64 {
    let n = hmm.num_states;
    let steps = obs.rows();
    let mut path = vec![0usize; steps];
    let mut logs = Vec::with_capacity(n.pow(steps as u32));
    loop {
        let mut lp = hmm.initial_log_probs[path[0]];
        for t in 0..steps {
            if t > 0 {
                lp += hmm.transition_log_probs.get(path[t - 1], path[t]);
            }
            lp += gaussian_log_density(&hmm.emission_means[path[t]], &hmm.emission_variances[path[t]], obs.row(t));
        }
        logs.push(lp);
        let mut k = 0;
        while k < steps && path[k] == n - 1 {
            path[k] = 0;
            k += 1;
        }
        if k == steps {
            break;
        }
        path[k] += 1;
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Draws one observation sequence from `hmm`.
pub fn sample_hmm(hmm: &GaussianHmm, steps: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let draw = |logp: &[f64], rng: &mut ChaCha8Rng| -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, l) in logp.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                return i;
            }
        }
        logp.len() - 1
    };
    let dim = hmm.dim();
    let mut out = Matrix::zeros(steps, dim);
    let mut s = draw(&hmm.initial_log_probs, rng);
    for t in 0..steps {
        if t > 0 {
            s = draw(hmm.transition_log_probs.row(s), rng);
        }
        for d in 0..dim {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            out.set(t, d, hmm.emission_means[s][d] + hmm.emission_variances[s][d].sqrt() * z);
        }
    }
    out
}
