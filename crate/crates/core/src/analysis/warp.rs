use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::training::LearningCurve;

pub const GRID_MIN: f64 = 1.0;
pub const GRID_MAX: f64 = 16.0;
pub const GRID_POINTS: usize = 64;

/// Minimum number of records in each curve.
const MIN_EPOCHS: usize = 10;

/// Best compression factor `c` such that `native(c * e)` tracks `score(e)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpFit {
    pub factor: f64,
    /// Mean squared gap at `factor`.
    pub residual: f64,
    /// `(factor, residual)` for every candidate with enough overlap.
    pub grid: Vec<(f64, f64)>,
}

/// Log-spaced candidate factors over `[GRID_MIN, GRID_MAX]`.
pub fn warp_grid() -> Vec<f64> {
    let (lo, hi) = (GRID_MIN.ln(), GRID_MAX.ln());
    (0..GRID_POINTS).map(|i| (lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).exp()).collect()
}

/// Piecewise-linear interpolation of `(xs, ys)` at `x`; `None` outside
/// `[xs[0], xs[last]]`. `xs` must be increasing.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let last = *xs.last()?;
    if x < xs[0] || x > last {
        return None;
    }
    let j = xs.partition_point(|&v| v <= x);
    if j == xs.len() {
        return Some(ys[xs.len() - 1]);
    }
    let i = j - 1;
    let t = (x - xs[i]) / (xs[j] - xs[i]);
    Some(ys[i] + t * (ys[j] - ys[i]))
}

/// Grid search for the time-warp factor between two sampled curves.
///
/// For each candidate `c`, the native curve is read at `c * e` for every
/// score epoch `e` inside the native domain; candidates with fewer than two
/// such points are skipped.
pub fn time_warp_fit_series(native_epochs: &[f64], native: &[f64], score_epochs: &[f64], score: &[f64]) -> Result<WarpFit> {
    if native.len() < MIN_EPOCHS || score.len() < MIN_EPOCHS {
        return Err(invalid("time_warp_fit", format!("curves need at least {MIN_EPOCHS} epochs, got {} and {}", native.len(), score.len())));
    }
    if native_epochs.len() != native.len() || score_epochs.len() != score.len() {
        return Err(invalid("time_warp_fit", "epoch axis and values differ in length"));
    }
    if native_epochs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("time_warp_fit", "native epochs must increase"));
    }
    let mut grid = Vec::with_capacity(GRID_POINTS);
    for c in warp_grid() {
        let gaps: Vec<f64> = score_epochs
            .iter()
            .zip(score)
            .filter_map(|(&e, &s)| interpolate(native_epochs, native, c * e).map(|n| (n - s).powi(2)))
            .collect();
        if gaps.len() >= 2 {
            grid.push((c, gaps.iter().sum::<f64>() / gaps.len() as f64));
        }
    }
    let &(factor, residual) = grid
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| invalid("time_warp_fit", "curves do not overlap for any candidate factor"))?;
    Ok(WarpFit { factor, residual, grid })
}

/// Fits on the validation series of two curves of the same metric.
pub fn time_warp_fit(native: &LearningCurve, score: &LearningCurve) -> Result<WarpFit> {
    if native.metric != score.metric {
        return Err(invalid("time_warp_fit", format!("metrics differ: {} vs {}", native.metric, score.metric)));
    }
    let axis = |c: &LearningCurve| c.epochs.iter().map(|&e| e as f64).collect::<Vec<_>>();
    time_warp_fit_series(&axis(native), &native.val, &axis(score), &score.val)
}
