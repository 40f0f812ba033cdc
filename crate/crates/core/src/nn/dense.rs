use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{BlockRef, InitScheme, Params};
use super::{Activation, Mat};
use crate::{Error, Result};

/// Per-node affine map `act(X W + b)` shared across rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

pub struct DenseTape {
    input: Mat,
    pre: Vec<f64>,
}

impl Dense {
    pub fn new(weight: Mat, bias: Vec<f64>, activation: Activation) -> Self {
        assert_eq!(weight.cols, bias.len());
        Dense { weight, bias, activation }
    }

    pub fn init(inputs: usize, outputs: usize, activation: Activation, scheme: InitScheme, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            weight: scheme.matrix(rng, inputs, outputs, inputs),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols
    }

    pub fn zeros_like(&self) -> Self {
        Dense {
            weight: self.weight.zeros_like(),
            bias: vec![0.0; self.bias.len()],
            activation: self.activation,
        }
    }

    pub fn forward(&self, x: &Mat) -> Result<(Mat, DenseTape)> {
        if x.cols != self.inputs() {
            return Err(Error::Shape(format!(
                "dense layer expects width {}, got {}",
                self.inputs(),
                x.cols
            )));
        }
        let mut z = x.matmul(&self.weight);
        for i in 0..z.rows {
            for (v, b) in z.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        let y = Mat::from_vec(z.rows, z.cols, self.activation.apply_all(&z.data));
        Ok((
            y,
            DenseTape {
                input: x.clone(),
                pre: z.data,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads`; returns the input gradient.
    pub fn backward(&self, tape: DenseTape, upstream: &Mat, grads: &mut Dense) -> Mat {
        let dz = Mat::from_vec(upstream.rows, upstream.cols, self.activation.backprop(&tape.pre, &upstream.data));
        grads.weight.add_assign(&tape.input.t_matmul(&dz));
        for i in 0..dz.rows {
            for (g, d) in grads.bias.iter_mut().zip(dz.row(i)) {
                *g += d;
            }
        }
        dz.matmul_t(&self.weight)
    }
}

impl Params for Dense {
    fn blocks(&self) -> Vec<BlockRef<'_>> {
        vec![
            BlockRef {
                name: "weight".into(),
                shape: vec![self.weight.rows, self.weight.cols],
                data: &self.weight.data,
            },
            BlockRef {
                name: "bias".into(),
                shape: vec![self.bias.len()],
                data: &self.bias,
            },
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![("weight".into(), &mut self.weight.data), ("bias".into(), &mut self.bias)]
    }
}
