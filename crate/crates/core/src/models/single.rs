use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{head_backward, head_forward, split_masks, ArchConfig, ModelKind, SequenceModel};
use crate::data::{Maneuver, STEP_FEATURES};
use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::nn::{LinearHead, LstmCell, LstmTrace, Parameterized};

fn check_inputs(inputs: &[Matrix]) -> Result<()> {
    match inputs.iter().find(|x| x.cols() != STEP_FEATURES) {
        Some(x) => Err(Error::dim("step input", STEP_FEATURES, x.cols())),
        None => Ok(()),
    }
}

/// One LSTM over the concatenated 62-wide step vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleLstm {
    pub lstm: LstmCell,
    pub head: LinearHead,
}

impl SingleLstm {
    pub fn new(arch: ArchConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SingleLstm {
            lstm: LstmCell::new(STEP_FEATURES, arch.hidden_size, arch.layer_norm, &mut rng),
            head: LinearHead::new(arch.hidden_size, Maneuver::COUNT, &mut rng),
        }
    }
}

impl SequenceModel for SingleLstm {
    type Trace = LstmTrace;

    fn kind(&self) -> ModelKind {
        ModelKind::SingleLstm
    }

    fn hidden_size(&self) -> usize {
        self.lstm.hidden_size()
    }

    fn num_cells(&self) -> usize {
        1
    }

    fn forward_batch(&self, inputs: &[Matrix], masks: Option<Vec<Vec<f64>>>) -> Result<(Vec<Matrix>, LstmTrace)> {
        check_inputs(inputs)?;
        let mask = split_masks(masks, 1)?.pop().expect("one mask");
        let trace = self.lstm.forward(inputs, mask)?;
        Ok((head_forward(&self.head, &trace)?, trace))
    }

    fn backward_batch(&self, inputs: &[Matrix], trace: &LstmTrace, d_logits: &[Matrix], grads: &mut Self) -> Result<()> {
        let dh = head_backward(&self.head, trace, d_logits, &mut grads.head)?;
        self.lstm.backward(inputs, trace, &dh, &mut grads.lstm)?;
        Ok(())
    }
}

impl Parameterized for SingleLstm {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.lstm.param_slices();
        v.extend(self.head.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.lstm.param_slices_mut();
        v.extend(self.head.param_slices_mut());
        v
    }
}

/// A factor LSTM over the full step vector stacked under a node LSTM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleFactorSrnn {
    pub lstm_factor: LstmCell,
    pub lstm_node: LstmCell,
    pub head: LinearHead,
}

pub struct StackedTrace {
    factor: LstmTrace,
    node_inputs: Vec<Matrix>,
    node: LstmTrace,
}

impl SingleFactorSrnn {
    pub fn new(arch: ArchConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = arch.hidden_size;
        SingleFactorSrnn {
            lstm_factor: LstmCell::new(STEP_FEATURES, h, arch.layer_norm, &mut rng),
            lstm_node: LstmCell::new(h, h, arch.layer_norm, &mut rng),
            head: LinearHead::new(h, Maneuver::COUNT, &mut rng),
        }
    }
}

impl SequenceModel for SingleFactorSrnn {
    type Trace = StackedTrace;

    fn kind(&self) -> ModelKind {
        ModelKind::SingleFactorSrnn
    }

    fn hidden_size(&self) -> usize {
        self.lstm_node.hidden_size()
    }

    fn num_cells(&self) -> usize {
        2
    }

    fn forward_batch(&self, inputs: &[Matrix], masks: Option<Vec<Vec<f64>>>) -> Result<(Vec<Matrix>, StackedTrace)> {
        check_inputs(inputs)?;
        let mut masks = split_masks(masks, 2)?.into_iter();
        let factor = self.lstm_factor.forward(inputs, masks.next().expect("two masks"))?;
        let h = self.lstm_factor.hidden_size();
        let node_inputs = (0..factor.len())
            .map(|k| Matrix::from_vec(factor.batch(), h, factor.hidden(k).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let node = self.lstm_node.forward(&node_inputs, masks.next().expect("two masks"))?;
        let logits = head_forward(&self.head, &node)?;
        Ok((logits, StackedTrace { factor, node_inputs, node }))
    }

    fn backward_batch(&self, inputs: &[Matrix], trace: &StackedTrace, d_logits: &[Matrix], grads: &mut Self) -> Result<()> {
        let dh = head_backward(&self.head, &trace.node, d_logits, &mut grads.head)?;
        let dx = self.lstm_node.backward(&trace.node_inputs, &trace.node, &dh, &mut grads.lstm_node)?;
        let dh_factor: Vec<Vec<f64>> = dx.into_iter().map(|m| m.as_slice().to_vec()).collect();
        self.lstm_factor.backward(inputs, &trace.factor, &dh_factor, &mut grads.lstm_factor)?;
        Ok(())
    }
}

impl Parameterized for SingleFactorSrnn {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.lstm_factor.param_slices();
        v.extend(self.lstm_node.param_slices());
        v.extend(self.head.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.lstm_factor.param_slices_mut();
        v.extend(self.lstm_node.param_slices_mut());
        v.extend(self.head.param_slices_mut());
        v
    }
}
