//! Two-component PCA of feature rows, exported as CSV for plotting.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{invalid, shape, Result};
use crate::persist;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection2d {
    /// `n x 2` coordinates of the centred rows.
    pub coords: Array2<f64>,
    /// `2 x d` principal directions, unit norm, first non-zero loading positive.
    pub components: Array2<f64>,
    pub mean: Array1<f64>,
    pub variances: [f64; 2],
}

impl Projection2d {
    /// `mean + coords * components`, the rank-2 approximation of the input.
    pub fn reconstruct(&self) -> Array2<f64> {
        self.coords.dot(&self.components) + &self.mean
    }
}

/// Eigenvectors of a symmetric matrix as columns, eigenvalues descending.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// PCA to two components. Small-`n` inputs are decomposed through the Gram
/// matrix, otherwise through the covariance.
pub fn pca_2d<T: Scalar>(features: ArrayView2<'_, T>) -> Result<Projection2d> {
    let (n, d) = features.dim();
    if n < 3 {
        return Err(invalid(format!("projection needs at least 3 samples, got {n}")));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(invalid("projection input has non-finite values"));
    }
    let x = features.mapv(|v| v.to_f64_lossy());
    let mean = x.mean_axis(ndarray::Axis(0)).expect("n >= 3");
    let centred = &x - &mean;
    let xm = DMatrix::from_fn(n, d, |r, c| centred[[r, c]]);
    let scale = xm.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = scale * scale * 1e-12 * n.max(d) as f64;

    let mut components = Array2::<f64>::zeros((2, d));
    let mut variances = [0.0; 2];
    let (vals, dirs) = if n <= d {
        let (vals, u) = sorted_eigen(&xm * xm.transpose());
        let mut dirs = DMatrix::zeros(d, 2);
        for j in 0..2.min(vals.len()) {
            if vals[j] > tol {
                let v = xm.transpose() * u.column(j) / vals[j].sqrt();
                dirs.set_column(j, &v);
            }
        }
        (vals, dirs)
    } else {
        let (vals, v) = sorted_eigen(xm.transpose() * &xm);
        let mut dirs = DMatrix::zeros(d, 2);
        for j in 0..2.min(vals.len()) {
            if vals[j] > tol {
                dirs.set_column(j, &v.column(j));
            }
        }
        (vals, dirs)
    };
    if vals.first().is_none_or(|&v| v <= tol) {
        return Err(invalid("projection input has rank 0"));
    }
    for j in 0..2 {
        let mut col: Vec<f64> = dirs.column(j).iter().copied().collect();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        col.iter_mut().for_each(|v| *v /= norm);
        let lead = col.iter().copied().find(|v| v.abs() > 1e-12 * col.iter().fold(0.0f64, |m, c| m.max(c.abs())));
        if lead.is_some_and(|v| v < 0.0) {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        components.row_mut(j).assign(&Array1::from(col));
        variances[j] = vals.get(j).copied().unwrap_or(0.0).max(0.0) / (n - 1) as f64;
    }
    let coords = centred.dot(&components.t());
    Ok(Projection2d { coords, components, mean, variances })
}

/// One CSV row per sample: `sample_id,x,y,label,id_or_ood`.
pub fn projection_csv<S: AsRef<str>>(
    sample_ids: &[S],
    coords: ArrayView2<'_, f64>,
    labels: &[S],
    is_ood: &[bool],
) -> Result<String> {
    let n = coords.nrows();
    if sample_ids.len() != n || labels.len() != n || is_ood.len() != n || coords.ncols() != 2 {
        return Err(shape("projection rows, ids, labels and flags must align"));
    }
    let mut out = String::from("sample_id,x,y,label,id_or_ood\n");
    for i in 0..n {
        let flag = if is_ood[i] { "ood" } else { "id" };
        let _ = writeln!(
            out,
            "{},{},{},{},{flag}",
            sample_ids[i].as_ref(),
            coords[[i, 0]],
            coords[[i, 1]],
            labels[i].as_ref()
        );
    }
    Ok(out)
}

pub fn export_projection<T: Scalar, S: AsRef<str>>(
    features: ArrayView2<'_, T>,
    sample_ids: &[S],
    labels: &[S],
    is_ood: &[bool],
    path: impl AsRef<Path>,
) -> Result<Projection2d> {
    let proj = pca_2d(features)?;
    let csv = projection_csv(sample_ids, proj.coords.view(), labels, is_ood)?;
    persist::write_atomic(path, csv.as_bytes())?;
    Ok(proj)
}
