#![allow(dead_code)]

use kmat_core::prompt_space::init_prompt_bank;
use kmat_core::{PromptBank, PromptConfig};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut a = gaussian(rng, rows, cols);
    for mut r in a.rows_mut() {
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        r.mapv_inplace(|x| x / n);
    }
    a
}

pub fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    unit_rows(rng, 1, dim).row(0).to_owned()
}

/// Random orthogonal matrix from Gram-Schmidt on Gaussian columns.
pub fn orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> Array2<f64> {
    let g = gaussian(rng, dim, dim);
    let mut q = Array2::<f64>::zeros((dim, dim));
    for j in 0..dim {
        let mut v = g.column(j).to_owned();
        for k in 0..j {
            let p: f64 = (0..dim).map(|i| v[i] * q[[i, k]]).sum();
            for i in 0..dim {
                v[i] -= p * q[[i, k]];
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..dim {
            q[[i, j]] = v[i] / n;
        }
    }
    q
}

/// Central differences of `f` at `x`, one entry at a time.
pub fn fd_gradient(x: &Array2<f64>, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + FD_STEP;
        let up = f(&probe);
        probe[idx] = orig - FD_STEP;
        let down = f(&probe);
        probe[idx] = orig;
        g[idx] = (up - down) / (2.0 * FD_STEP);
    }
    g
}

/// `||a - b|| / ||b||`, Frobenius norms.
pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// A bank whose context tokens are rescaled to unit variance so the encoded
/// rows are far from degenerate.
pub fn random_bank(seed: u64, config: &PromptConfig) -> PromptBank {
    let bank = init_prompt_bank(config, seed).unwrap();
    let context = bank.context_tokens() * 50.0;
    let class_tokens = bank.class_tokens() * 50.0;
    PromptBank::from_parts(config.clone(), context, class_tokens).unwrap()
}

pub fn with_context(bank: &PromptBank, context: &Array2<f64>) -> PromptBank {
    PromptBank::from_parts(
        bank.config().clone(),
        context.clone(),
        bank.class_tokens().clone(),
    )
    .unwrap()
}

pub fn prompt_config(n_classes: usize, csc: bool, msc: bool) -> PromptConfig {
    PromptConfig {
        n_classes,
        context_len: 2,
        token_dim: 6,
        class_specific: csc,
        modality_specific: msc,
    }
}
