use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{BlockRef, InitScheme, Params};
use super::{Activation, Mat};
use crate::mesh::EdgeAdjacency;
use crate::{Error, Result};

/// How the four neighbour features enter the five kernel slots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborMode {
    /// `[x0, x1 + x3, |x1 - x3|, x2 + x4, |x2 - x4|]`: invariant to swapping
    /// the two incident faces.
    #[default]
    Symmetric,
    /// `[x0, x1, x2, x3, x4]` in canonical adjacency order.
    Ordered,
}

/// Edge convolution with one weight matrix per kernel slot:
/// `act(sum_k G_k mu_k)` where `G_k` are the slot features of each edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshConv {
    pub kernels: [Mat; 5],
    pub activation: Activation,
    pub mode: NeighborMode,
}

pub struct MeshConvTape {
    input: Mat,
    slots: [Mat; 5],
    pre: Vec<f64>,
}

impl NeighborMode {
    /// Mean second moment of the five slots relative to independent
    /// zero-mean inputs: sums and absolute differences both double it.
    pub fn slot_variance_factor(self) -> f64 {
        match self {
            NeighborMode::Symmetric => 9.0 / 5.0,
            NeighborMode::Ordered => 1.0,
        }
    }
}

/// Builds the five slot matrices for every edge.
pub fn gather_slots(x: &Mat, adjacency: &EdgeAdjacency, mode: NeighborMode) -> [Mat; 5] {
    let (rows, cols) = x.shape();
    let mut slots: [Mat; 5] = std::array::from_fn(|_| Mat::zeros(rows, cols));
    for (e, &[n1, n2, n3, n4]) in adjacency.as_slice().iter().enumerate() {
        let (x0, x1, x2, x3, x4) = (x.row(e), x.row(n1), x.row(n2), x.row(n3), x.row(n4));
        for c in 0..cols {
            let vals = match mode {
                NeighborMode::Symmetric => [
                    x0[c],
                    x1[c] + x3[c],
                    (x1[c] - x3[c]).abs(),
                    x2[c] + x4[c],
                    (x2[c] - x4[c]).abs(),
                ],
                NeighborMode::Ordered => [x0[c], x1[c], x2[c], x3[c], x4[c]],
            };
            for (s, v) in slots.iter_mut().zip(vals) {
                s.data[e * cols + c] = v;
            }
        }
    }
    slots
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl MeshConv {
    pub fn init(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        mode: NeighborMode,
        scheme: InitScheme,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        // fan-in covers all five slots
        let fan_in = 5 * inputs;
        MeshConv {
            kernels: std::array::from_fn(|_| scheme.matrix(rng, inputs, outputs, fan_in)),
            activation,
            mode,
        }
    }

    pub fn inputs(&self) -> usize {
        self.kernels[0].rows
    }

    pub fn outputs(&self) -> usize {
        self.kernels[0].cols
    }

    pub fn zeros_like(&self) -> Self {
        MeshConv {
            kernels: std::array::from_fn(|k| self.kernels[k].zeros_like()),
            activation: self.activation,
            mode: self.mode,
        }
    }

    pub fn forward(&self, x: &Mat, adjacency: &EdgeAdjacency) -> Result<(Mat, MeshConvTape)> {
        if x.rows != adjacency.len() {
            return Err(Error::Shape(format!(
                "mesh conv input has {} rows for {} edges",
                x.rows,
                adjacency.len()
            )));
        }
        if x.cols != self.inputs() {
            return Err(Error::Shape(format!(
                "mesh conv expects width {}, got {}",
                self.inputs(),
                x.cols
            )));
        }
        let slots = gather_slots(x, adjacency, self.mode);
        let mut z = Mat::zeros(x.rows, self.outputs());
        for (s, k) in slots.iter().zip(&self.kernels) {
            z.add_assign(&s.matmul(k));
        }
        let y = Mat::from_vec(z.rows, z.cols, self.activation.apply_all(&z.data));
        Ok((
            y,
            MeshConvTape {
                input: x.clone(),
                slots,
                pre: z.data,
            },
        ))
    }

    /// Absolute values use subgradient 0 at ties.
    pub fn backward(&self, tape: MeshConvTape, upstream: &Mat, adjacency: &EdgeAdjacency, grads: &mut MeshConv) -> Mat {
        let dz = Mat::from_vec(upstream.rows, upstream.cols, self.activation.backprop(&tape.pre, &upstream.data));
        let mut d_slots = Vec::with_capacity(5);
        for k in 0..5 {
            grads.kernels[k].add_assign(&tape.slots[k].t_matmul(&dz));
            d_slots.push(dz.matmul_t(&self.kernels[k]));
        }
        let x = &tape.input;
        let cols = x.cols;
        let mut dx = x.zeros_like();
        for (e, &[n1, n2, n3, n4]) in adjacency.as_slice().iter().enumerate() {
            for c in 0..cols {
                let g: [f64; 5] = std::array::from_fn(|k| d_slots[k].data[e * cols + c]);
                dx.data[e * cols + c] += g[0];
                match self.mode {
                    NeighborMode::Symmetric => {
                        let s13 = sign(x.data[n1 * cols + c] - x.data[n3 * cols + c]);
                        let s24 = sign(x.data[n2 * cols + c] - x.data[n4 * cols + c]);
                        dx.data[n1 * cols + c] += g[1] + g[2] * s13;
                        dx.data[n3 * cols + c] += g[1] - g[2] * s13;
                        dx.data[n2 * cols + c] += g[3] + g[4] * s24;
                        dx.data[n4 * cols + c] += g[3] - g[4] * s24;
                    }
                    NeighborMode::Ordered => {
                        dx.data[n1 * cols + c] += g[1];
                        dx.data[n2 * cols + c] += g[2];
                        dx.data[n3 * cols + c] += g[3];
                        dx.data[n4 * cols + c] += g[4];
                    }
                }
            }
        }
        dx
    }
}

impl Params for MeshConv {
    fn blocks(&self) -> Vec<BlockRef<'_>> {
        self.kernels
            .iter()
            .enumerate()
            .map(|(k, m)| BlockRef {
                name: format!("mu{k}"),
                shape: vec![m.rows, m.cols],
                data: &m.data,
            })
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.kernels
            .iter_mut()
            .enumerate()
            .map(|(k, m)| (format!("mu{k}"), m.data.as_mut_slice()))
            .collect()
    }
}
