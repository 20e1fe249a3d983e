//! Autoregressive feature extraction.
//!
//! An AR(m) model predicts each sample from its m predecessors. The n-m
//! one-step equations are stacked into a regression system `S = H w + e`
//! whose least-squares solution gives the coefficients; the residual vector
//! is the damage-sensitive feature. Model order comes from the BIC curve,
//! averaged across signals and channels, with the minimum as the optimum.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rank tolerance for the least-squares solve, relative to the largest
/// column norm of the regression matrix.
const RANK_RTOL: f64 = 1e-10;

/// Frozen AR model for one channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArModel {
    pub order: usize,
    /// Coefficients in regression-column order `(a_m, ..., a_1)`: entry `j`
    /// multiplies the sample `m - j` steps before the predicted one... the
    /// first column of `H` holds the oldest lag.
    pub coefficients: Vec<f64>,
    pub channel_id: String,
    /// Number of passages the model was trained on.
    pub trained_on: usize,
    /// True when the regression matrix was rank deficient and the minimum-norm
    /// solution was taken.
    #[serde(default)]
    pub rank_deficient: bool,
}

impl ArModel {
    /// Coefficients in recurrence order `(a_1, ..., a_m)`: `a_i` multiplies
    /// the sample `i` steps back.
    pub fn params(&self) -> Vec<f64> {
        self.coefficients.iter().rev().copied().collect()
    }
}

/// Fit output: model, residual vector, and its mean square.
#[derive(Debug, Clone)]
pub struct ArFitResult {
    pub model: ArModel,
    /// Length `n - m` (summed over passages for stacked fits).
    pub residuals: DVector<f64>,
    pub mse: f64,
}

/// BIC values over a candidate order grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BicCurve {
    pub orders: Vec<usize>,
    pub values: Vec<f64>,
    /// Order attaining the minimum value; ties break toward the smaller order.
    pub optimum: usize,
}

impl BicCurve {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "order,bic")?;
        for (o, v) in self.orders.iter().zip(&self.values) {
            writeln!(w, "{o},{v}")?;
        }
        Ok(())
    }
}

/// Build the AR regression system for one signal.
///
/// Row `j` of `H` is `(x_j, ..., x_{j+m-1})` and the target is `x_{j+m}`,
/// so the column order pairs with coefficients `(a_m, ..., a_1)`.
pub fn build_regression(x: &[f64], m: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = x.len();
    if m == 0 {
        return Err(Error::invalid("AR order must be at least 1".to_string()));
    }
    if n <= m {
        return Err(Error::invalid(format!(
            "signal length {n} must exceed AR order {m}"
        )));
    }
    let rows = n - m;
    let mut h = DMatrix::zeros(rows, m);
    let mut s = DVector::zeros(rows);
    for j in 0..rows {
        for i in 0..m {
            h[(j, i)] = x[j + i];
        }
        s[j] = x[j + m];
    }
    Ok((h, s))
}

/// Least-squares AR fit on one signal. Requires `n >= 2m + 1` so the system
/// is at least determined.
pub fn fit_ar(x: &[f64], m: usize) -> Result<ArFitResult> {
    fit_ar_stacked(&[x], m)
}

/// Least-squares AR fit on several signals of one channel.
///
/// The regression system is built per signal and stacked, so no residual row
/// crosses a passage boundary.
pub fn fit_ar_stacked(signals: &[&[f64]], m: usize) -> Result<ArFitResult> {
    if signals.is_empty() {
        return Err(Error::invalid("no signals to fit".to_string()));
    }
    let mut total_rows = 0usize;
    for x in signals {
        if x.len() < 2 * m + 1 {
            return Err(Error::invalid(format!(
                "signal length {} below 2m+1 = {} for order {m}",
                x.len(),
                2 * m + 1
            )));
        }
        total_rows += x.len() - m;
    }
    let mut h = DMatrix::zeros(total_rows, m);
    let mut s = DVector::zeros(total_rows);
    let mut at = 0usize;
    for x in signals {
        let (hi, si) = build_regression(x, m)?;
        let rows = hi.nrows();
        h.rows_mut(at, rows).copy_from(&hi);
        s.rows_mut(at, rows).copy_from(&si);
        at += rows;
    }

    let max_col_norm = (0..m).map(|j| h.column(j).norm()).fold(0.0_f64, f64::max);
    let eps = RANK_RTOL * max_col_norm;

    let svd = h.clone().svd(true, true);
    let rank = svd.rank(eps.max(f64::MIN_POSITIVE));
    let w = svd
        .solve(&s, eps.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(format!("least-squares solve failed: {e}")))?;
    let w = DVector::from_iterator(m, w.iter().copied());

    let residuals = &s - &h * &w;
    let mse = residuals.norm_squared() / residuals.len() as f64;
    Ok(ArFitResult {
        model: ArModel {
            order: m,
            coefficients: w.iter().copied().collect(),
            channel_id: String::new(),
            trained_on: signals.len(),
            rank_deficient: rank < m,
        },
        residuals,
        mse,
    })
}

/// Apply a frozen model to a signal: residuals `S - H w` and the
/// reconstruction `H w`.
pub fn predict_residuals(x: &[f64], model: &ArModel) -> Result<(DVector<f64>, DVector<f64>)> {
    let (h, s) = build_regression(x, model.order)?;
    let w = DVector::from_column_slice(&model.coefficients);
    let recon = h * w;
    let residuals = &s - &recon;
    Ok((residuals, recon))
}

/// BIC from a mean squared residual: `n ln(mse) + m ln(n)`.
///
/// A zero mse (noise-free synthetic data) returns negative infinity, the
/// degenerate-fit sentinel.
pub fn bic(mse: f64, m: usize, n_effective: usize) -> f64 {
    if mse <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let n = n_effective as f64;
    n * mse.ln() + (m as f64) * n.ln()
}

/// BIC of a residual vector, with `n_effective` its length.
pub fn bic_from_residuals(residuals: &[f64], m: usize) -> f64 {
    let n = residuals.len();
    if n == 0 {
        return f64::NEG_INFINITY;
    }
    let mse = residuals.iter().map(|e| e * e).sum::<f64>() / n as f64;
    bic(mse, m, n)
}

/// Average per-signal BIC curves; the summation is permutation invariant, so
/// reordering the input signals cannot move the optimum.
fn average_curves(orders: &[usize], per_signal: &[Vec<f64>]) -> BicCurve {
    let count = per_signal.len() as f64;
    let values: Vec<f64> = (0..orders.len())
        .map(|oi| {
            let mut column: Vec<f64> = per_signal.iter().map(|c| c[oi]).collect();
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / count
        })
        .collect();
    let mut best = 0usize;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    BicCurve {
        orders: orders.to_vec(),
        values,
        optimum: orders[best],
    }
}

/// Fit every candidate order on every signal, average the BIC curves, and
/// return the averaged curve with its optimum.
pub fn select_order(signals: &[&[f64]], orders: &[usize]) -> Result<BicCurve> {
    if signals.is_empty() {
        return Err(Error::invalid("select_order needs at least one signal".to_string()));
    }
    if orders.is_empty() {
        return Err(Error::invalid("select_order needs a candidate order grid".to_string()));
    }
    let mut per_signal = Vec::with_capacity(signals.len());
    for x in signals {
        let mut curve = Vec::with_capacity(orders.len());
        for &m in orders {
            let fit = fit_ar(x, m)?;
            curve.push(bic(fit.mse, m, fit.residuals.len()));
        }
        per_signal.push(curve);
    }
    Ok(average_curves(orders, &per_signal))
}
