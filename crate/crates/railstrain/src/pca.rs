//! Principal-component fitting and removal.
//!
//! The baseline passage matrix is column-mean centered and decomposed with an
//! economy SVD of the data matrix; eigenvalues of the passage covariance are
//! the squared singular values divided by `k - 1`. Operational variation
//! (train weight, track irregularity) concentrates in the leading components,
//! which are removed from baseline and test data alike using the frozen
//! baseline basis. Local damage has to survive in the residual subspace.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::PassageMatrix;

/// Relative singular-value cutoff for the economy rank of the centered matrix.
const RANK_RTOL: f64 = 1e-10;

/// Negative eigenvalues above this magnitude are an error; smaller ones are
/// numerical noise and clamp to zero.
const EIGEN_CLAMP: f64 = 1e-12;

/// Orthonormal baseline transformation, frozen at fit time.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    /// `n x r` economy basis; columns are orthonormal principal directions.
    pub transform: DMatrix<f64>,
    /// Descending nonnegative eigenvalue spectrum, length `min(k, n)`.
    pub eigenvalues: Vec<f64>,
    /// Number of leading components removed by [`remove_components`].
    pub retained_p: usize,
    /// Column means of the fit matrix, subtracted before any projection.
    pub column_means: DVector<f64>,
    /// Number of baseline passages the basis was fit on.
    pub source_k: usize,
}

impl PcaBasis {
    /// Economy rank of the basis.
    pub fn rank(&self) -> usize {
        self.transform.ncols()
    }

    pub fn n(&self) -> usize {
        self.column_means.len()
    }

    /// The first `retained_p` columns.
    fn retained(&self) -> DMatrix<f64> {
        self.transform.columns(0, self.retained_p).into_owned()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rank();
        if self.retained_p > r {
            return Err(Error::invalid(format!(
                "retained_p {} exceeds rank {r}",
                self.retained_p
            )));
        }
        for w in self.eigenvalues.windows(2) {
            if w[1] > w[0] {
                return Err(Error::invalid("eigenvalues not descending".to_string()));
            }
        }
        if self.eigenvalues.iter().any(|&l| l < 0.0) {
            return Err(Error::invalid("negative eigenvalue after clamping".to_string()));
        }
        // Orthonormality of the stored columns.
        let g = self.transform.transpose() * &self.transform;
        for i in 0..r {
            for j in 0..r {
                let want = if i == j { 1.0 } else { 0.0 };
                if (g[(i, j)] - want).abs() > 1e-10 {
                    return Err(Error::invalid(format!(
                        "basis columns not orthonormal: g[{i},{j}] = {}",
                        g[(i, j)]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Fit the baseline basis on a passage matrix.
///
/// Centers by column means, takes the economy SVD of the centered matrix, and
/// keeps `retained_p` components by the cumulative-variance rule at
/// `threshold` (0.80 unless configured otherwise).
pub fn fit_pca(x: &PassageMatrix, threshold: f64) -> Result<PcaBasis> {
    fit_pca_data(&x.data, threshold)
}

pub fn fit_pca_data(data: &DMatrix<f64>, threshold: f64) -> Result<PcaBasis> {
    let k = data.nrows();
    let n = data.ncols();
    if k < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 passages, got {k}")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("PCA input contains non-finite entries".to_string()));
    }

    let column_means = DVector::from_iterator(n, (0..n).map(|j| data.column(j).mean()));
    let mut centered = data.clone();
    for i in 0..k {
        for j in 0..n {
            centered[(i, j)] -= column_means[j];
        }
    }

    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::invalid("SVD failed to produce right singular vectors".to_string()))?;
    let sv = svd.singular_values;

    // Singular values arrive descending; eigenvalues of the covariance.
    let denom = (k - 1) as f64;
    let mut eigenvalues: Vec<f64> = sv.iter().map(|s| s * s / denom).collect();
    for l in &mut eigenvalues {
        if *l < 0.0 {
            if *l < -EIGEN_CLAMP {
                return Err(Error::invalid(format!("eigenvalue {l} below clamp tolerance")));
            }
            *l = 0.0;
        }
    }

    let smax = sv.iter().fold(0.0_f64, |m, &s| m.max(s));
    let rank = sv.iter().filter(|&&s| s > RANK_RTOL * smax && s > 0.0).count();

    // Economy basis: rows of V^T become columns of the transform.
    let transform = v_t.rows(0, rank).transpose();

    let retained_p = select_p(&eigenvalues, threshold).min(rank);

    let basis = PcaBasis {
        transform,
        eigenvalues,
        retained_p,
        column_means,
        source_k: k,
    };
    basis.validate()?;
    Ok(basis)
}

/// Smallest `p` whose leading eigenvalues reach the cumulative-variance
/// threshold. Reads "reaches" inclusively; an all-zero spectrum yields 0.
pub fn select_p(eigenvalues: &[f64], threshold: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut cum = 0.0;
    for (i, l) in eigenvalues.iter().enumerate() {
        cum += l;
        if cum / total >= threshold {
            return i + 1;
        }
    }
    eigenvalues.len()
}

/// Remove the retained components from a matrix of passages (rows).
///
/// Computes `(X - means) - (X - means) T̂ T̂ᵀ`. The same baseline basis is
/// applied to damaged data, so test rows are centered by the *baseline* means.
pub fn remove_components(x: &PassageMatrix, basis: &PcaBasis) -> Result<PassageMatrix> {
    let data = remove_components_data(&x.data, basis)?;
    Ok(PassageMatrix {
        channel_id: x.channel_id.clone(),
        speed_bin: x.speed_bin.clone(),
        passage_ids: x.passage_ids.clone(),
        data,
    })
}

pub fn remove_components_data(data: &DMatrix<f64>, basis: &PcaBasis) -> Result<DMatrix<f64>> {
    if data.ncols() != basis.n() {
        return Err(Error::Dimension(format!(
            "matrix has {} columns, basis expects {}",
            data.ncols(),
            basis.n()
        )));
    }
    let k = data.nrows();
    let mut centered = data.clone();
    for i in 0..k {
        for j in 0..data.ncols() {
            centered[(i, j)] -= basis.column_means[j];
        }
    }
    if basis.retained_p == 0 {
        return Ok(centered);
    }
    let t_hat = basis.retained();
    let scores = &centered * &t_hat; // k x p
    Ok(&centered - scores * t_hat.transpose())
}

/// Remove the retained components from a single passage vector.
pub fn remove_components_vector(x: &[f64], basis: &PcaBasis) -> Result<DVector<f64>> {
    if x.len() != basis.n() {
        return Err(Error::Dimension(format!(
            "vector has {} samples, basis expects {}",
            x.len(),
            basis.n()
        )));
    }
    let mut centered = DVector::from_column_slice(x);
    centered -= &basis.column_means;
    if basis.retained_p == 0 {
        return Ok(centered);
    }
    let t_hat = basis.retained();
    let scores = t_hat.transpose() * &centered; // p x 1
    Ok(&centered - t_hat * scores)
}

/// Serialized form of a basis: means, spectrum, and the retained components
/// (the full economy basis only when explicitly requested).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaBasisBundle {
    pub column_means: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub retained_p: usize,
    pub source_k: usize,
    /// Row `i` is retained component `i`, length `n`.
    pub components: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_components: Option<Vec<Vec<f64>>>,
}

impl PcaBasis {
    pub fn to_bundle(&self, include_full: bool) -> PcaBasisBundle {
        let comp_rows = |count: usize| -> Vec<Vec<f64>> {
            (0..count)
                .map(|j| self.transform.column(j).iter().copied().collect())
                .collect()
        };
        PcaBasisBundle {
            column_means: self.column_means.iter().copied().collect(),
            eigenvalues: self.eigenvalues.clone(),
            retained_p: self.retained_p,
            source_k: self.source_k,
            components: comp_rows(self.retained_p),
            full_components: include_full.then(|| comp_rows(self.rank())),
        }
    }

    pub fn from_bundle(bundle: &PcaBasisBundle) -> Result<PcaBasis> {
        let n = bundle.column_means.len();
        let rows = bundle.full_components.as_ref().unwrap_or(&bundle.components);
        if bundle.full_components.is_none() && bundle.components.len() != bundle.retained_p {
            return Err(Error::invalid(format!(
                "bundle stores {} components but retained_p = {}",
                bundle.components.len(),
                bundle.retained_p
            )));
        }
        let r = rows.len();
        let mut transform = DMatrix::zeros(n, r);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!(
                    "component {j} has length {}, expected {n}",
                    row.len()
                )));
            }
            for (i, v) in row.iter().enumerate() {
                transform[(i, j)] = *v;
            }
        }
        let basis = PcaBasis {
            transform,
            eigenvalues: bundle.eigenvalues.clone(),
            retained_p: bundle.retained_p,
            column_means: DVector::from_column_slice(&bundle.column_means),
            source_k: bundle.source_k,
        };
        basis.validate()?;
        Ok(basis)
    }
}
