use serde::{Deserialize, Serialize};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    LeakyRelu(f64),
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu(LEAKY_SLOPE)
    }

    /// Weight-init gain that keeps the activation second moment constant
    /// through a layer of this type.
    pub fn init_gain(self) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::LeakyRelu(a) => (2.0 / (1.0 + a * a)).sqrt(),
        }
    }

    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::LeakyRelu(a) => {
                if z > 0.0 {
                    z
                } else {
                    a * z
                }
            }
        }
    }

    /// Derivative at pre-activation `z`; the leaky kink takes the left slope.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::LeakyRelu(a) => {
                if z > 0.0 {
                    1.0
                } else {
                    a
                }
            }
        }
    }

    pub fn apply_all(self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.apply(v)).collect()
    }

    /// `upstream * f'(z)` elementwise.
    pub fn backprop(self, z: &[f64], upstream: &[f64]) -> Vec<f64> {
        z.iter().zip(upstream).map(|(&z, &g)| g * self.derivative(z)).collect()
    }
}
