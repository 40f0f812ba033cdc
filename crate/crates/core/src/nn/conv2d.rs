use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{BlockRef, InitScheme, Params};
use super::{Activation, Mat};
use crate::{Error, Result};

/// Height x width x channels grid, channel-interleaved (`HWC`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Grid {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn at_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    /// Rows are pixels, columns are channels.
    pub fn as_mat(&self) -> Mat {
        Mat::from_vec(self.height * self.width, self.channels, self.data.clone())
    }
}

pub const KERNEL: usize = 3;

/// 3x3 convolution with zero padding 1 and a configurable stride.
///
/// The weight is stored as a `(9 * in) x out` matrix whose row index is
/// `(ky * 3 + kx) * in + c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub activation: Activation,
}

pub struct Conv2dTape {
    columns: Mat,
    in_shape: (usize, usize, usize),
    pre: Vec<f64>,
}

impl Conv2d {
    pub fn init(
        inputs: usize,
        outputs: usize,
        stride: usize,
        activation: Activation,
        scheme: InitScheme,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = KERNEL * KERNEL * inputs;
        Conv2d {
            weight: scheme.matrix(rng, fan_in, outputs, fan_in),
            bias: vec![0.0; outputs],
            stride,
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows / (KERNEL * KERNEL)
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols
    }

    pub fn zeros_like(&self) -> Self {
        Conv2d {
            weight: self.weight.zeros_like(),
            bias: vec![0.0; self.bias.len()],
            stride: self.stride,
            activation: self.activation,
        }
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        ((height - 1) / self.stride + 1, (width - 1) / self.stride + 1)
    }

    fn im2col(&self, x: &Grid) -> Mat {
        let (oh, ow) = self.output_size(x.height, x.width);
        let c = x.channels;
        let mut cols = Mat::zeros(oh * ow, KERNEL * KERNEL * c);
        for oy in 0..oh {
            for ox in 0..ow {
                let row = cols.row_mut(oy * ow + ox);
                for ky in 0..KERNEL {
                    let iy = (oy * self.stride + ky) as isize - 1;
                    if iy < 0 || iy >= x.height as isize {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let ix = (ox * self.stride + kx) as isize - 1;
                        if ix < 0 || ix >= x.width as isize {
                            continue;
                        }
                        let o = (ky * KERNEL + kx) * c;
                        row[o..o + c].copy_from_slice(x.at(iy as usize, ix as usize));
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, d_cols: &Mat, (h, w, c): (usize, usize, usize)) -> Grid {
        let (oh, ow) = self.output_size(h, w);
        let mut out = Grid::zeros(h, w, c);
        for oy in 0..oh {
            for ox in 0..ow {
                let row = d_cols.row(oy * ow + ox);
                for ky in 0..KERNEL {
                    let iy = (oy * self.stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let ix = (ox * self.stride + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let o = (ky * KERNEL + kx) * c;
                        for (d, g) in out.at_mut(iy as usize, ix as usize).iter_mut().zip(&row[o..o + c]) {
                            *d += g;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Grid) -> Result<(Grid, Conv2dTape)> {
        if x.channels != self.inputs() {
            return Err(Error::Shape(format!(
                "conv expects {} channels, got {}",
                self.inputs(),
                x.channels
            )));
        }
        let (oh, ow) = self.output_size(x.height, x.width);
        let columns = self.im2col(x);
        let mut z = columns.matmul(&self.weight);
        for i in 0..z.rows {
            for (v, b) in z.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        let y = Grid {
            height: oh,
            width: ow,
            channels: self.outputs(),
            data: self.activation.apply_all(&z.data),
        };
        Ok((
            y,
            Conv2dTape {
                columns,
                in_shape: (x.height, x.width, x.channels),
                pre: z.data,
            },
        ))
    }

    pub fn backward(&self, tape: Conv2dTape, upstream: &Grid, grads: &mut Conv2d) -> Grid {
        let rows = upstream.height * upstream.width;
        let dz = Mat::from_vec(rows, upstream.channels, self.activation.backprop(&tape.pre, &upstream.data));
        grads.weight.add_assign(&tape.columns.t_matmul(&dz));
        for i in 0..dz.rows {
            for (g, d) in grads.bias.iter_mut().zip(dz.row(i)) {
                *g += d;
            }
        }
        let d_cols = dz.matmul_t(&self.weight);
        self.col2im(&d_cols, tape.in_shape)
    }
}

impl Params for Conv2d {
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
