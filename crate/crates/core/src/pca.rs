//! Two-component PCA for embedding export.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit principal axes, largest eigenvalue first.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the population covariance, matching `components`.
    pub variances: Vec<f64>,
}

impl Pca {
    /// Fits the top `k` components of the rows of `x` (`[n, d]`).
    ///
    /// Each axis is signed so that its largest-magnitude coordinate is
    /// positive (first such coordinate on ties), which makes the output
    /// independent of the eigensolver's sign conventions.
    pub fn fit(x: &Tensor, k: usize) -> Result<Self> {
        if x.dims().len() != 2 {
            return Err(Error::Shape(format!("PCA input must be a matrix, got {:?}", x.dims())));
        }
        let (n, d) = (x.rows(), x.cols());
        if n == 0 {
            return Err(Error::Argument("PCA needs at least one row".into()));
        }
        if k == 0 || k > d {
            return Err(Error::Argument(format!("cannot take {k} components of width {d}")));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            mean.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v / n as f64);
        }
        let centered = DMatrix::from_fn(n, d, |i, j| x.row(i)[j] - mean[j]);
        let cov = (centered.transpose() * &centered) / n as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = Vec::with_capacity(k);
        let mut variances = Vec::with_capacity(k);
        for &c in order.iter().take(k) {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let lead = v.iter().enumerate().fold(0, |best, (j, a)| if a.abs() > v[best].abs() { j } else { best });
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|a| *a = -*a);
            }
            components.push(v);
            variances.push(eig.eigenvalues[c].max(0.0));
        }
        Ok(Pca { mean, components, variances })
    }

    /// `[n, k]` coordinates of `x` along the fitted axes.
    pub fn project(&self, x: &Tensor) -> Result<Tensor> {
        if x.dims().len() != 2 || x.cols() != self.mean.len() {
            return Err(Error::Shape(format!("expected [n, {}], got {:?}", self.mean.len(), x.dims())));
        }
        let k = self.components.len();
        let mut out = Vec::with_capacity(x.rows() * k);
        for i in 0..x.rows() {
            for c in &self.components {
                out.push(x.row(i).iter().zip(&self.mean).zip(c).map(|((v, m), a)| (v - m) * a).sum());
            }
        }
        Tensor::new(vec![x.rows(), k], out)
    }
}

/// `domain,label,pc1,pc2` rows for the given 2-D coordinates.
pub fn embeddings_csv(domains: &[usize], labels: &[usize], coords: &Tensor) -> Result<String> {
    if coords.dims() != [domains.len(), 2] || labels.len() != domains.len() {
        return Err(Error::Shape(format!(
            "{} domains, {} labels, coordinates {:?}",
            domains.len(),
            labels.len(),
            coords.dims()
        )));
    }
    let mut s = String::from("domain,label,pc1,pc2\n");
    for i in 0..domains.len() {
        let r = coords.row(i);
        s.push_str(&format!("{},{},{},{}\n", domains[i], labels[i], r[0], r[1]));
    }
    Ok(s)
}
