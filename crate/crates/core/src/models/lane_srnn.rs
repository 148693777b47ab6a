use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{head_backward, head_forward, split_masks, ArchConfig, ModelKind, SequenceModel};
use crate::data::{Maneuver, NEIGHBOR_DIM, NUM_SLOTS, STATE_DIM, STEP_FEATURES};
use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::nn::{LinearHead, LstmCell, LstmTrace, Parameterized};

/// Width of one lane factor input: ahead neighbor, behind neighbor, target.
pub const LANE_INPUT: usize = 2 * NEIGHBOR_DIM + STATE_DIM;
const TARGET_OFFSET: usize = NUM_SLOTS * NEIGHBOR_DIM;

/// Three lane factor LSTMs (left, same, right) feeding one node LSTM and a
/// softmax head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSrnn {
    pub lstm_left: LstmCell,
    pub lstm_same: LstmCell,
    pub lstm_right: LstmCell,
    pub lstm_node: LstmCell,
    pub head: LinearHead,
}

pub struct LaneSrnnTrace {
    lanes: [Vec<Matrix>; 3],
    lane_traces: [LstmTrace; 3],
    node_inputs: Vec<Matrix>,
    node_trace: LstmTrace,
}

impl LaneSrnn {
    pub fn new(arch: ArchConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = arch.hidden_size;
        LaneSrnn {
            lstm_left: LstmCell::new(LANE_INPUT, h, arch.layer_norm, &mut rng),
            lstm_same: LstmCell::new(LANE_INPUT, h, arch.layer_norm, &mut rng),
            lstm_right: LstmCell::new(LANE_INPUT, h, arch.layer_norm, &mut rng),
            lstm_node: LstmCell::new(3 * h, h, arch.layer_norm, &mut rng),
            head: LinearHead::new(h, Maneuver::COUNT, &mut rng),
        }
    }

    fn factors(&self) -> [&LstmCell; 3] {
        [&self.lstm_left, &self.lstm_same, &self.lstm_right]
    }
}

/// Columns `[v_{2l}, v_{2l+1}, v_q]` of every step.
fn lane_inputs(inputs: &[Matrix], lane: usize) -> Vec<Matrix> {
    let start = 2 * lane * NEIGHBOR_DIM;
    inputs
        .iter()
        .map(|x| {
            let mut m = Matrix::zeros(x.rows(), LANE_INPUT);
            for r in 0..x.rows() {
                let (src, dst) = (x.row(r), m.row_mut(r));
                dst[..2 * NEIGHBOR_DIM].copy_from_slice(&src[start..start + 2 * NEIGHBOR_DIM]);
                dst[2 * NEIGHBOR_DIM..].copy_from_slice(&src[TARGET_OFFSET..STEP_FEATURES]);
            }
            m
        })
        .collect()
}

impl SequenceModel for LaneSrnn {
    type Trace = LaneSrnnTrace;

    fn kind(&self) -> ModelKind {
        ModelKind::LaneSrnn
    }

    fn hidden_size(&self) -> usize {
        self.lstm_node.hidden_size()
    }

    fn num_cells(&self) -> usize {
        4
    }

    fn forward_batch(&self, inputs: &[Matrix], masks: Option<Vec<Vec<f64>>>) -> Result<(Vec<Matrix>, LaneSrnnTrace)> {
        if let Some(x) = inputs.iter().find(|x| x.cols() != STEP_FEATURES) {
            return Err(Error::dim("lane srnn step input", STEP_FEATURES, x.cols()));
        }
        let mut masks = split_masks(masks, 4)?.into_iter();
        let lanes: [Vec<Matrix>; 3] = std::array::from_fn(|l| lane_inputs(inputs, l));
        let cells = self.factors();
        let mut traces = Vec::with_capacity(3);
        for (cell, x) in cells.iter().zip(&lanes) {
            traces.push(cell.forward(x, masks.next().expect("four masks"))?);
        }
        let lane_traces: [LstmTrace; 3] = traces.try_into().map_err(|_| Error::Empty("lane traces"))?;
        let h = self.lstm_left.hidden_size();
        let batch = inputs.first().map_or(0, |m| m.rows());
        let node_inputs: Vec<Matrix> = (0..inputs.len())
            .map(|k| {
                let mut m = Matrix::zeros(batch, 3 * h);
                for r in 0..batch {
                    let dst = m.row_mut(r);
                    for (l, t) in lane_traces.iter().enumerate() {
                        dst[l * h..(l + 1) * h].copy_from_slice(&t.hidden(k)[r * h..(r + 1) * h]);
                    }
                }
                m
            })
            .collect();
        let node_trace = self.lstm_node.forward(&node_inputs, masks.next().expect("four masks"))?;
        let logits = head_forward(&self.head, &node_trace)?;
        Ok((
            logits,
            LaneSrnnTrace {
                lanes,
                lane_traces,
                node_inputs,
                node_trace,
            },
        ))
    }

    fn backward_batch(&self, _inputs: &[Matrix], trace: &LaneSrnnTrace, d_logits: &[Matrix], grads: &mut Self) -> Result<()> {
        let dh_node = head_backward(&self.head, &trace.node_trace, d_logits, &mut grads.head)?;
        let dx_node = self.lstm_node.backward(&trace.node_inputs, &trace.node_trace, &dh_node, &mut grads.lstm_node)?;
        let h = self.lstm_left.hidden_size();
        let batch = trace.node_trace.batch();
        let grad_cells = [&mut grads.lstm_left, &mut grads.lstm_same, &mut grads.lstm_right];
        for (l, (cell, g)) in self.factors().into_iter().zip(grad_cells).enumerate() {
            let dh: Vec<Vec<f64>> = dx_node
                .iter()
                .map(|dx| {
                    let mut v = Vec::with_capacity(batch * h);
                    for r in 0..batch {
                        v.extend_from_slice(&dx.row(r)[l * h..(l + 1) * h]);
                    }
                    v
                })
                .collect();
            cell.backward(&trace.lanes[l], &trace.lane_traces[l], &dh, g)?;
        }
        Ok(())
    }
}

impl Parameterized for LaneSrnn {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.lstm_left.param_slices();
        v.extend(self.lstm_same.param_slices());
        v.extend(self.lstm_right.param_slices());
        v.extend(self.lstm_node.param_slices());
        v.extend(self.head.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.lstm_left.param_slices_mut();
        v.extend(self.lstm_same.param_slices_mut());
        v.extend(self.lstm_right.param_slices_mut());
        v.extend(self.lstm_node.param_slices_mut());
        v.extend(self.head.param_slices_mut());
        v
    }
}

/// Per-lane factor hidden outputs, for inspection.
impl LaneSrnnTrace {
    pub fn lane_hidden(&self, lane: usize, step: usize) -> &[f64] {
        self.lane_traces[lane].hidden(step)
    }
}
