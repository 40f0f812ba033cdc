//! Central finite-difference gradient checking.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{InitScheme, Params};
use super::Mat;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Larger blocks are checked on an evenly strided subset of this size.
    pub max_per_block: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            max_per_block: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockError {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error <= self.tolerance)
    }

    pub fn merge(mut self, prefix: &str, other: GradCheckReport) -> Self {
        self.blocks.extend(other.blocks.into_iter().map(|b| BlockError {
            name: format!("{prefix}.{}", b.name),
            ..b
        }));
        self
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            let mark = if b.max_rel_error <= self.tolerance { "ok  " } else { "FAIL" };
            writeln!(f, "{mark} {:<40} {:>6} checked  max rel err {:.3e}", b.name, b.checked, b.max_rel_error)?;
        }
        Ok(())
    }
}

fn indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|k| k * len / max).collect()
    }
}

/// Compares `analytic` against central differences of `f`.
///
/// `f` receives the full parameter list with one entry perturbed. The relative
/// error of an element is `|analytic - numeric| / max(|numeric|, floor)`, where
/// `floor` is `1e-3` of the block's largest numeric entry or the rounding noise
/// level `1e-6 * max(1, |f|)`, whichever is larger.
pub fn grad_check<F>(
    params: &[(String, Vec<f64>)],
    analytic: &[Vec<f64>],
    mut f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let mut values: Vec<Vec<f64>> = params.iter().map(|(_, v)| v.clone()).collect();
    let f0 = f(&values);
    if !f0.is_finite() {
        return Err(Error::NonFinite("objective at the unperturbed point".into()));
    }
    let noise_floor = 1e-6 * f0.abs().max(1.0);
    let h = opts.step;
    let mut blocks = Vec::with_capacity(params.len());
    for (b, (name, _)) in params.iter().enumerate() {
        assert_eq!(values[b].len(), analytic[b].len(), "block {name}");
        let idx = indices(values[b].len(), opts.max_per_block);
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = values[b][i];
            values[b][i] = orig + h;
            let fp = f(&values);
            values[b][i] = orig - h;
            let fm = f(&values);
            values[b][i] = orig;
            if !(fp.is_finite() && fm.is_finite()) {
                return Err(Error::NonFinite(format!("objective while perturbing {name}[{i}]")));
            }
            numeric.push((fp - fm) / (2.0 * h));
        }
        let block_max = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (1e-3 * block_max).max(noise_floor);
        let max_rel_error = idx
            .iter()
            .zip(&numeric)
            .map(|(&i, &n)| (analytic[b][i] - n).abs() / n.abs().max(floor))
            .fold(0.0, f64::max);
        blocks.push(BlockError {
            name: name.clone(),
            max_rel_error,
            checked: idx.len(),
        });
    }
    Ok(GradCheckReport {
        blocks,
        tolerance: opts.tolerance,
    })
}

pub(crate) fn write_blocks<P: Params>(target: &mut P, values: &[Vec<f64>]) {
    for ((_, dst), src) in target.blocks_mut().into_iter().zip(values) {
        dst.copy_from_slice(src);
    }
}

pub(crate) fn read_blocks<P: Params>(p: &P) -> Vec<(String, Vec<f64>)> {
    p.blocks().into_iter().map(|b| (b.name, b.data.to_vec())).collect()
}

/// Checks a layer's parameter and input gradients on the scalar objective
/// `sum(R * forward(x))` with a fixed random `R`.
pub fn check_layer<L, T>(
    layer: &L,
    x: &Mat,
    seed: u64,
    forward: impl Fn(&L, &Mat) -> Result<(Mat, T)>,
    backward: impl Fn(&L, T, &Mat, &mut L) -> Mat,
    zeros_like: impl Fn(&L) -> L,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    L: Params + Clone,
{
    let (y, tape) = forward(layer, x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = InitScheme::UniformFanIn { gain: 1.0 }.matrix(&mut rng, y.rows, y.cols, 1);
    let mut grads = zeros_like(layer);
    let dx = backward(layer, tape, &r, &mut grads);

    let mut params = read_blocks(layer);
    params.push(("input".into(), x.data.clone()));
    let mut analytic: Vec<Vec<f64>> = read_blocks(&grads).into_iter().map(|(_, v)| v).collect();
    analytic.push(dx.data);

    let n_layer = params.len() - 1;
    let mut scratch = layer.clone();
    grad_check(
        &params,
        &analytic,
        |vals| {
            write_blocks(&mut scratch, &vals[..n_layer]);
            let xin = Mat::from_vec(x.rows, x.cols, vals[n_layer].clone());
            match forward(&scratch, &xin) {
                Ok((y, _)) => y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum(),
                Err(_) => f64::NAN,
            }
        },
        opts,
    )
}
