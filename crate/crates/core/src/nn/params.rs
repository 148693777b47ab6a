use rand::Rng;

use crate::math::Matrix;

/// Anything that owns trainable `f64` tensors.
///
/// Slice order must be stable: optimizers, clipping and checkpoint round-trips
/// all rely on it.
pub trait Parameterized {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn fill_params(&mut self, value: f64) {
        for s in self.param_slices_mut() {
            s.fill(value);
        }
    }

    fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    /// `self += other`, elementwise over matching slices.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (dst, src) in self.param_slices_mut().into_iter().zip(other.param_slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for s in self.param_slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    fn all_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

/// Zero-valued copy with the same shapes, used as a gradient accumulator.
pub fn zeros_like<P: Parameterized + Clone>(p: &P) -> P {
    let mut z = p.clone();
    z.fill_params(0.0);
    z
}

/// Glorot-uniform matrix, `limit = sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot<R: Rng>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape by construction")
}

/// Global L2 norm over all gradient slices; rescales in place when it exceeds
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }
    norm
}
