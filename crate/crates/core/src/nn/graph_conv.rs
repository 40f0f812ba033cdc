use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{BlockRef, InitScheme, Params};
use super::{Activation, Mat};
use crate::mesh::VertexAdjacency;
use crate::{Error, Result};

/// Vertex graph convolution `act(A H W)` with a row-stochastic `A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConv {
    pub weight: Mat,
    pub activation: Activation,
}

pub struct GraphConvTape {
    averaged: Mat,
    pre: Vec<f64>,
}

impl GraphConv {
    pub fn init(inputs: usize, outputs: usize, activation: Activation, scheme: InitScheme, rng: &mut ChaCha8Rng) -> Self {
        GraphConv {
            weight: scheme.matrix(rng, inputs, outputs, inputs),
            activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        GraphConv {
            weight: self.weight.zeros_like(),
            activation: self.activation,
        }
    }

    pub fn forward(&self, h: &Mat, adjacency: &VertexAdjacency) -> Result<(Mat, GraphConvTape)> {
        if h.rows != adjacency.num_rows() {
            return Err(Error::Shape(format!(
                "graph conv input has {} rows for {} vertices",
                h.rows,
                adjacency.num_rows()
            )));
        }
        if h.cols != self.weight.rows {
            return Err(Error::Shape(format!(
                "graph conv expects width {}, got {}",
                self.weight.rows, h.cols
            )));
        }
        let averaged = Mat::from_vec(h.rows, h.cols, adjacency.apply(&h.data, h.cols));
        let z = averaged.matmul(&self.weight);
        let y = Mat::from_vec(z.rows, z.cols, self.activation.apply_all(&z.data));
        Ok((y, GraphConvTape { averaged, pre: z.data }))
    }

    pub fn backward(&self, tape: GraphConvTape, upstream: &Mat, adjacency: &VertexAdjacency, grads: &mut GraphConv) -> Mat {
        let dz = Mat::from_vec(upstream.rows, upstream.cols, self.activation.backprop(&tape.pre, &upstream.data));
        grads.weight.add_assign(&tape.averaged.t_matmul(&dz));
        let d_avg = dz.matmul_t(&self.weight);
        Mat::from_vec(d_avg.rows, d_avg.cols, adjacency.apply_transpose(&d_avg.data, d_avg.cols))
    }
}

impl Params for GraphConv {
    fn blocks(&self) -> Vec<BlockRef<'_>> {
        vec![BlockRef {
            name: "weight".into(),
            shape: vec![self.weight.rows, self.weight.cols],
            data: &self.weight.data,
        }]
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![("weight".into(), &mut self.weight.data)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_vertex_adjacency, make_icosphere, MeshGraph, MeshRole};
    use crate::nn::gradcheck::{check_layer, GradCheckOptions};
    use crate::Vec3;
    use rand::SeedableRng;

    fn k3() -> VertexAdjacency {
        let tri = MeshGraph::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]], MeshRole::Body).unwrap();
        build_vertex_adjacency(&tri)
    }

    #[test]
    fn identity_on_k3_averages_one_hot_rows() {
        let g = GraphConv {
            weight: Mat::identity(3),
            activation: Activation::Linear,
        };
        let (y, _) = g.forward(&Mat::identity(3), &k3()).unwrap();
        assert!(y.data.iter().all(|&v| v == 1.0 / 3.0));
    }

    #[test]
    fn zero_weight_gives_zero() {
        let g = GraphConv {
            weight: Mat::zeros(2, 4),
            activation: Activation::leaky(),
        };
        let (y, _) = g.forward(&Mat::from_vec(3, 2, vec![1.0; 6]), &k3()).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_field_is_fixed_point() {
        let adj = build_vertex_adjacency(&make_icosphere(1).unwrap());
        let g = GraphConv {
            weight: Mat::identity(2),
            activation: Activation::Linear,
        };
        let h = Mat::from_vec(42, 2, [0.7, -1.3].repeat(42));
        let (y, _) = g.forward(&h, &adj).unwrap();
        for (a, b) in y.data.iter().zip(&h.data) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_wrong_row_count() {
        let g = GraphConv {
            weight: Mat::identity(2),
            activation: Activation::Linear,
        };
        assert!(g.forward(&Mat::zeros(4, 2), &k3()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let adj = build_vertex_adjacency(&make_icosphere(0).unwrap());
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layer = GraphConv::init(4, 3, Activation::leaky(), InitScheme::default(), &mut rng);
            let x = InitScheme::default().matrix(&mut rng, 12, 4, 1);
            let report = check_layer(
                &layer,
                &x,
                seed,
                |l, x| l.forward(x, &adj),
                |l, t, dy, g| l.backward(t, dy, &adj, g),
                GraphConv::zeros_like,
                GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.passed(), "{report}");
        }
    }
}
