//! Gaussian-emission hidden Markov models, one per maneuver class, trained
//! with Baum–Welch and compared by forward-algorithm likelihood.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Maneuver, Sample, STEP_FEATURES};
use crate::error::{Error, Result};
use crate::eval::metrics::{precision_recall, ConfusionCounts};
use crate::math::{argmax, log_sum_exp, Matrix, Vector};
use crate::models::ManeuverDistribution;
use crate::seed;

/// Lower bound on stored log probabilities, keeping parameters finite.
pub const LOG_PROB_FLOOR: f64 = -700.0;

pub const DEFAULT_STATE_CANDIDATES: [usize; 7] = [2, 3, 4, 5, 6, 8, 10];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaumWelchConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub var_floor: f64,
}

impl Default for BaumWelchConfig {
    fn default() -> Self {
        BaumWelchConfig {
            max_iters: 100,
            rel_tol: 1e-4,
            var_floor: 1e-6,
        }
    }
}

/// HMM with diagonal-covariance Gaussian emissions; probabilities in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHmm {
    pub num_states: usize,
    pub initial_log_probs: Vector,
    pub transition_log_probs: Matrix,
    pub emission_means: Vec<Vector>,
    pub emission_variances: Vec<Vector>,
}

impl GaussianHmm {
    pub fn dim(&self) -> usize {
        self.emission_means.first().map_or(0, |m| m.len())
    }

    /// Log density of `x` under state `s`.
    pub fn emission_log_density(&self, s: usize, x: &[f64]) -> f64 {
        let mean = &self.emission_means[s];
        let var = &self.emission_variances[s];
        let mut acc = 0.0;
        for d in 0..x.len() {
            let diff = x[d] - mean[d];
            acc += (2.0 * PI * var[d]).ln() + diff * diff / var[d];
        }
        -0.5 * acc
    }

    fn check(&self, obs: &Matrix) -> Result<()> {
        if obs.rows() == 0 {
            return Err(Error::Empty("observation sequence"));
        }
        if obs.cols() != self.dim() {
            return Err(Error::dim("hmm observation", self.dim(), obs.cols()));
        }
        Ok(())
    }

    /// `T × S` emission log densities.
    fn emissions(&self, obs: &Matrix) -> Matrix {
        let mut e = Matrix::zeros(obs.rows(), self.num_states);
        for t in 0..obs.rows() {
            for s in 0..self.num_states {
                e.set(t, s, self.emission_log_density(s, obs.row(t)));
            }
        }
        e
    }

    /// Log forward variables `alpha[t][s]`.
    fn forward(&self, emis: &Matrix) -> Matrix {
        let n = self.num_states;
        let mut alpha = Matrix::zeros(emis.rows(), n);
        for s in 0..n {
            alpha.set(0, s, self.initial_log_probs[s] + emis.get(0, s));
        }
        let mut terms = vec![0.0; n];
        for t in 1..emis.rows() {
            for j in 0..n {
                for (i, term) in terms.iter_mut().enumerate() {
                    *term = alpha.get(t - 1, i) + self.transition_log_probs.get(i, j);
                }
                alpha.set(t, j, log_sum_exp(&terms) + emis.get(t, j));
            }
        }
        alpha
    }

    fn backward(&self, emis: &Matrix) -> Matrix {
        let n = self.num_states;
        let steps = emis.rows();
        let mut beta = Matrix::zeros(steps, n);
        let mut terms = vec![0.0; n];
        for t in (0..steps - 1).rev() {
            for i in 0..n {
                for (j, term) in terms.iter_mut().enumerate() {
                    *term = self.transition_log_probs.get(i, j) + emis.get(t + 1, j) + beta.get(t + 1, j);
                }
                beta.set(t, i, log_sum_exp(&terms));
            }
        }
        beta
    }
}

/// `log P(observations)` by the forward recursion. `observations` is `T × D`.
pub fn hmm_log_likelihood(hmm: &GaussianHmm, observations: &Matrix) -> Result<f64> {
    hmm.check(observations)?;
    let alpha = hmm.forward(&hmm.emissions(observations));
    let ll = log_sum_exp(alpha.row(alpha.rows() - 1));
    if ll.is_nan() {
        return Err(Error::NonFinite("hmm log-likelihood"));
    }
    Ok(ll)
}

fn pooled_moments(sequences: &[Matrix], floor: f64) -> (Vec<f64>, Vec<f64>) {
    let dim = sequences[0].cols();
    let mut mean = vec![0.0; dim];
    let mut n = 0usize;
    for s in sequences {
        for t in 0..s.rows() {
            for (m, x) in mean.iter_mut().zip(s.row(t)) {
                *m += x;
            }
            n += 1;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for s in sequences {
        for t in 0..s.rows() {
            for d in 0..dim {
                let c = s.get(t, d) - mean[d];
                var[d] += c * c;
            }
        }
    }
    var.iter_mut().for_each(|v| *v = (*v / n as f64).max(floor));
    (mean, var)
}

/// k-means++ seeding over all observation rows.
fn kmeans_pp(sequences: &[Matrix], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let points: Vec<&[f64]> = sequences.iter().flat_map(|s| (0..s.rows()).map(move |t| s.row(t))).collect();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next].to_vec();
        for (d, p) in dist.iter_mut().zip(&points) {
            *d = d.min(sq(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn initial_hmm(sequences: &[Matrix], num_states: usize, floor: f64, rng: &mut ChaCha8Rng) -> GaussianHmm {
    let (_, var) = pooled_moments(sequences, floor);
    let means = kmeans_pp(sequences, num_states, rng);
    let mut trans = Matrix::zeros(num_states, num_states);
    for i in 0..num_states {
        let row: Vec<f64> = (0..num_states).map(|_| 1.0 + 0.01 * rng.random::<f64>()).collect();
        let sum: f64 = row.iter().sum();
        for (j, p) in row.iter().enumerate() {
            trans.set(i, j, (p / sum).ln());
        }
    }
    GaussianHmm {
        num_states,
        initial_log_probs: Vector::filled(num_states, -(num_states as f64).ln()),
        transition_log_probs: trans,
        emission_means: means.into_iter().map(Vector::from).collect(),
        emission_variances: vec![Vector::from(var); num_states],
    }
}

/// Result of [`baum_welch`]: the model and the total training log-likelihood
/// evaluated at the start of every iteration, plus the final value.
#[derive(Debug, Clone)]
pub struct BaumWelchFit {
    pub hmm: GaussianHmm,
    pub log_likelihoods: Vec<f64>,
}

/// Expectation–maximization from a seeded k-means++ start.
pub fn baum_welch(sequences: &[Matrix], num_states: usize, seed: u64, cfg: &BaumWelchConfig) -> Result<BaumWelchFit> {
    if sequences.is_empty() {
        return Err(Error::Empty("hmm training sequences"));
    }
    if num_states == 0 {
        return Err(Error::InvalidArgument("an hmm needs at least one state".into()));
    }
    let dim = sequences[0].cols();
    if let Some(s) = sequences.iter().find(|s| s.cols() != dim) {
        return Err(Error::dim("hmm training sequence", dim, s.cols()));
    }
    if sequences.iter().any(|s| s.rows() == 0) {
        return Err(Error::Empty("hmm training sequence"));
    }
    let total_obs: usize = sequences.iter().map(|s| s.rows()).sum();
    if num_states > total_obs {
        return Err(Error::InvalidArgument(format!("{num_states} states exceed {total_obs} training observations")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hmm = initial_hmm(sequences, num_states, cfg.var_floor, &mut rng);
    let mut trace = Vec::new();
    for _ in 0..cfg.max_iters {
        let (ll, next) = em_step(&hmm, sequences, cfg.var_floor)?;
        let converged = trace.last().is_some_and(|prev: &f64| (ll - prev) / prev.abs().max(1e-300) < cfg.rel_tol);
        trace.push(ll);
        if converged {
            break;
        }
        hmm = next;
    }
    if trace.len() == cfg.max_iters {
        trace.push(total_log_likelihood(&hmm, sequences)?);
    }
    Ok(BaumWelchFit { hmm, log_likelihoods: trace })
}

pub fn total_log_likelihood(hmm: &GaussianHmm, sequences: &[Matrix]) -> Result<f64> {
    sequences.iter().map(|s| hmm_log_likelihood(hmm, s)).sum()
}

/// One E-step on `hmm` and the M-step that follows. Returns the log-likelihood
/// of `hmm` and the updated model.
fn em_step(hmm: &GaussianHmm, sequences: &[Matrix], floor: f64) -> Result<(f64, GaussianHmm)> {
    let n = hmm.num_states;
    let dim = hmm.dim();
    let mut total_ll = 0.0;
    let mut init = vec![0.0; n];
    let mut trans_num = vec![vec![0.0; n]; n];
    let mut occ = vec![0.0; n];
    let mut sum_x = vec![vec![0.0; dim]; n];
    let mut sum_xx = vec![vec![0.0; dim]; n];
    for obs in sequences {
        let emis = hmm.emissions(obs);
        let alpha = hmm.forward(&emis);
        let beta = hmm.backward(&emis);
        let steps = obs.rows();
        let ll = log_sum_exp(alpha.row(steps - 1));
        if !ll.is_finite() {
            return Err(Error::NonFinite("baum-welch log-likelihood"));
        }
        total_ll += ll;
        for t in 0..steps {
            for s in 0..n {
                let g = (alpha.get(t, s) + beta.get(t, s) - ll).exp();
                if t == 0 {
                    init[s] += g;
                }
                occ[s] += g;
                let x = obs.row(t);
                for d in 0..dim {
                    sum_x[s][d] += g * x[d];
                    sum_xx[s][d] += g * x[d] * x[d];
                }
            }
            if t + 1 < steps {
                for i in 0..n {
                    for j in 0..n {
                        let xi = alpha.get(t, i) + hmm.transition_log_probs.get(i, j) + emis.get(t + 1, j) + beta.get(t + 1, j) - ll;
                        trans_num[i][j] += xi.exp();
                    }
                }
            }
        }
    }

    let mut next = hmm.clone();
    let seqs = sequences.len() as f64;
    for s in 0..n {
        next.initial_log_probs[s] = (init[s] / seqs).ln().max(LOG_PROB_FLOOR);
    }
    for i in 0..n {
        let row_sum: f64 = trans_num[i].iter().sum();
        if row_sum > 0.0 {
            for j in 0..n {
                next.transition_log_probs.set(i, j, (trans_num[i][j] / row_sum).ln().max(LOG_PROB_FLOOR));
            }
        }
    }
    for s in 0..n {
        if occ[s] <= 1e-300 {
            continue;
        }
        for d in 0..dim {
            let mean = sum_x[s][d] / occ[s];
            let var = (sum_xx[s][d] / occ[s] - mean * mean).max(floor);
            next.emission_means[s][d] = mean;
            next.emission_variances[s][d] = var;
        }
    }
    Ok((total_ll, next))
}

/// One HMM per maneuver class, scored with uniform class priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmClassifier {
    /// In `(left, right, none)` order.
    pub hmms: Vec<GaussianHmm>,
}

/// Most likely class and the softmax of the three log-likelihoods.
pub fn hmm_classify(classifier: &HmmClassifier, observations: &Matrix) -> Result<(Maneuver, ManeuverDistribution)> {
    if classifier.hmms.len() != Maneuver::COUNT {
        return Err(Error::dim("hmm classifier models", Maneuver::COUNT, classifier.hmms.len()));
    }
    let lls = classifier
        .hmms
        .iter()
        .map(|h| hmm_log_likelihood(h, observations))
        .collect::<Result<Vec<f64>>>()?;
    let dist = ManeuverDistribution::from_logits(&lls);
    let best = Maneuver::from_index(argmax(&lls)).expect("three classes");
    Ok((best, dist))
}

pub fn sample_observations(sample: &Sample) -> Matrix {
    Matrix::from_vec(sample.len(), STEP_FEATURES, sample.features()).expect("shape by construction")
}

/// Trains one HMM per class with `num_states` states each.
pub fn train_classifier(by_class: &[Vec<Matrix>; 3], num_states: usize, seed: u64, cfg: &BaumWelchConfig) -> Result<HmmClassifier> {
    let hmms = by_class
        .iter()
        .enumerate()
        .map(|(c, seqs)| Ok(baum_welch(seqs, num_states, seed::derive_index(seed, c as u64), cfg)?.hmm))
        .collect::<Result<Vec<_>>>()?;
    Ok(HmmClassifier { hmms })
}

pub fn classify_all(classifier: &HmmClassifier, sequences: &[Matrix]) -> Result<Vec<Maneuver>> {
    sequences.iter().map(|s| Ok(hmm_classify(classifier, s)?.0)).collect()
}

/// Mean F1 over classes with a defined F1.
pub fn macro_f1(counts: &ConfusionCounts) -> f64 {
    let f1s: Vec<f64> = Maneuver::ALL
        .iter()
        .filter_map(|&m| {
            let (p, r) = precision_recall(counts, m);
            if p.is_nan() || r.is_nan() {
                None
            } else if p + r == 0.0 {
                Some(0.0)
            } else {
                Some(2.0 * p * r / (p + r))
            }
        })
        .collect();
    if f1s.is_empty() {
        f64::NAN
    } else {
        f1s.iter().sum::<f64>() / f1s.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSelection {
    /// The count applied to all three class models.
    pub num_states: usize,
    /// Validation macro F1 for every candidate, in ascending count order.
    pub scores: Vec<(usize, f64)>,
}

/// Holds out the last 20% of each class (after a seeded shuffle), trains a
/// classifier per candidate state count and keeps the count with the best
/// validation macro F1 (ties go to the smaller count).
pub fn select_num_states(by_class: &[Vec<Matrix>; 3], candidates: &[usize], seed: u64, cfg: &BaumWelchConfig) -> Result<StateSelection> {
    let mut cands: Vec<usize> = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    if cands.is_empty() {
        return Err(Error::Empty("state-count candidates"));
    }
    if cands.len() == 1 {
        return Ok(StateSelection {
            num_states: cands[0],
            scores: Vec::new(),
        });
    }
    let mut fit: [Vec<Matrix>; 3] = Default::default();
    let mut val_seqs = Vec::new();
    let mut val_truth = Vec::new();
    for (c, seqs) in by_class.iter().enumerate() {
        let mut idx: Vec<usize> = (0..seqs.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive_index(seed::derive(seed, "hmm-holdout"), c as u64)));
        let n_val = seqs.len() / 5;
        if n_val == 0 || n_val == seqs.len() {
            return Err(Error::Empty("hmm validation split"));
        }
        let (head, tail) = idx.split_at(seqs.len() - n_val);
        fit[c] = head.iter().map(|&i| seqs[i].clone()).collect();
        for &i in tail {
            val_seqs.push(seqs[i].clone());
            val_truth.push(Maneuver::ALL[c]);
        }
    }
    let mut scores = Vec::with_capacity(cands.len());
    for &k in &cands {
        let clf = train_classifier(&fit, k, seed::derive_index(seed, k as u64), cfg)?;
        let pred = classify_all(&clf, &val_seqs)?;
        let f1 = macro_f1(&ConfusionCounts::from_predictions(&val_truth, &pred)?);
        log::info!("hmm with {k} states: validation macro F1 {f1:.4}");
        scores.push((k, f1));
    }
    let mut best = scores[0];
    for &(k, f) in &scores[1..] {
        if f > best.1 || best.1.is_nan() && !f.is_nan() {
            best = (k, f);
        }
    }
    Ok(StateSelection {
        num_states: best.0,
        scores,
    })
}

/// Groups standardized samples by label as observation matrices.
pub fn sequences_by_class(samples: &[Sample]) -> [Vec<Matrix>; 3] {
    let mut out: [Vec<Matrix>; 3] = Default::default();
    for s in samples {
        out[s.label.index()].push(sample_observations(s));
    }
    out
}

/// State-count search followed by a final fit on all of `samples`.
pub fn fit_classifier(samples: &[Sample], candidates: &[usize], seed: u64, cfg: &BaumWelchConfig) -> Result<(HmmClassifier, StateSelection)> {
    let by_class = sequences_by_class(samples);
    if let Some(m) = Maneuver::ALL.iter().find(|m| by_class[m.index()].is_empty()) {
        return Err(Error::InvalidArgument(format!("no '{m}' training sequences for the hmm")));
    }
    let selection = select_num_states(&by_class, candidates, seed::derive(seed, "select"), cfg)?;
    let clf = train_classifier(&by_class, selection.num_states, seed::derive(seed, "final"), cfg)?;
    Ok((clf, selection))
}
