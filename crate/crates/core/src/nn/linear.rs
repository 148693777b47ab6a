use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{glorot, Parameterized};
use crate::error::{Error, Result};
use crate::math::{gemm, matvec, Matrix, Vector, View, ViewMut};

/// Fully connected output layer producing class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub w: Matrix,
    pub b: Vector,
}

impl LinearHead {
    pub fn new<R: Rng>(input: usize, classes: usize, rng: &mut R) -> Self {
        LinearHead {
            w: glorot(classes, input, input, classes, rng),
            b: Vector::zeros(classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.w.rows()
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, h: &[f64]) -> Result<Vector> {
        let mut out = matvec(&self.w, h)?;
        for (o, b) in out.iter_mut().zip(self.b.iter()) {
            *o += b;
        }
        Ok(out)
    }

    /// `hidden` is `B × input`; returns `B × classes`.
    pub(crate) fn forward_batch(&self, hidden: &[f64], batch: usize) -> Result<Matrix> {
        if hidden.len() != batch * self.input_size() {
            return Err(Error::dim("linear head input", batch * self.input_size(), hidden.len()));
        }
        let c = self.classes();
        let mut out = Matrix::zeros(batch, c);
        for r in 0..batch {
            out.row_mut(r).copy_from_slice(&self.b);
        }
        gemm(
            1.0,
            View::row_major(hidden, batch, self.input_size()),
            self.w.view().t(),
            1.0,
            ViewMut::row_major(out.as_mut_slice(), batch, c),
        );
        Ok(out)
    }

    /// Accumulates parameter gradients and returns dLoss/dhidden (`B × input`).
    pub(crate) fn backward_batch(&self, hidden: &[f64], d_logits: &Matrix, grads: &mut LinearHead) -> Vec<f64> {
        let batch = d_logits.rows();
        let c = self.classes();
        let n = self.input_size();
        gemm(
            1.0,
            d_logits.view().t(),
            View::row_major(hidden, batch, n),
            1.0,
            ViewMut::row_major(grads.w.as_mut_slice(), c, n),
        );
        for r in 0..batch {
            for (gb, d) in grads.b.iter_mut().zip(d_logits.row(r)) {
                *gb += d;
            }
        }
        let mut dh = vec![0.0; batch * n];
        gemm(1.0, d_logits.view(), self.w.view(), 0.0, ViewMut::row_major(&mut dh, batch, n));
        dh
    }
}

impl Parameterized for LinearHead {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice(), self.b.as_slice()]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), self.b.as_mut_slice()]
    }
}
