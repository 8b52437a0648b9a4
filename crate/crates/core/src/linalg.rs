//! Small dense helpers shared by the numeric modules.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Norms below this are treated as degenerate when normalizing.
pub const DEGENERATE_NORM: f64 = 1e-12;

pub fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub fn normalized(v: ArrayView1<'_, f64>, what: &str) -> Result<(Array1<f64>, f64)> {
    let n = norm(v);
    if !n.is_finite() {
        return Err(Error::Numeric(format!("{what}: non-finite norm")));
    }
    if n < DEGENERATE_NORM {
        return Err(Error::Numeric(format!(
            "{what}: cannot normalize vector with norm {n:e}"
        )));
    }
    Ok((v.mapv(|x| x / n), n))
}

/// Largest deviation of any row norm from 1.
pub fn max_row_norm_error(m: ArrayView2<'_, f64>) -> f64 {
    m.rows()
        .into_iter()
        .map(|r| (norm(r) - 1.0).abs())
        .fold(0.0, f64::max)
}

pub fn log_sum_exp<I: Iterator<Item = f64> + Clone>(xs: I) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}
