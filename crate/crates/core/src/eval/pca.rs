use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Result};
use crate::numcore::Tensor;

/// Principal axes of mean-centered data, strongest first.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `[k, d]`, orthonormal rows; each row's largest-magnitude entry is positive.
    pub components: Tensor,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

impl Pca {
    /// `(x − mean) Cᵀ`, shape `[n, k]`.
    pub fn project(&self, x: &Tensor) -> Result<Tensor> {
        let (k, d) = (self.components.rows(), self.components.cols());
        if x.cols() != d {
            return Err(invalid(format!("PCA expects {d} columns, got {}", x.cols())));
        }
        let mut out = Vec::with_capacity(x.rows() * k);
        for i in 0..x.rows() {
            let r = x.row(i);
            for c in 0..k {
                let comp = self.components.row(c);
                out.push((0..d).map(|j| (r[j] - self.mean[j]) * comp[j]).sum());
            }
        }
        Tensor::matrix(x.rows(), k, out)
    }

    /// Back to centered input coordinates: `P C`.
    pub fn back_project(&self, projected: &Tensor) -> Result<Tensor> {
        let (k, d) = (self.components.rows(), self.components.cols());
        if projected.cols() != k {
            return Err(invalid("projection width differs from the component count"));
        }
        let mut out = vec![0.0; projected.rows() * d];
        for i in 0..projected.rows() {
            for c in 0..k {
                let w = projected.row(i)[c];
                for (o, v) in out[i * d..(i + 1) * d].iter_mut().zip(self.components.row(c)) {
                    *o += w * v;
                }
            }
        }
        Tensor::matrix(projected.rows(), d, out)
    }

    pub fn explained_ratio(&self) -> Vec<f64> {
        self.explained_variance.iter().map(|v| v / self.total_variance).collect()
    }
}

pub fn pca_features(x: &Tensor, k: usize) -> Result<Pca> {
    let (n, d) = (x.rows(), x.cols());
    if k == 0 || k > d {
        return Err(invalid(format!("component count {k} outside 1..={d}")));
    }
    if n < 2 {
        return Err(invalid("PCA needs at least two rows"));
    }
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x.row(i)[j]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| x.row(i)[j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut comps = Vec::with_capacity(k * d);
    let mut explained = Vec::with_capacity(k);
    for &c in order.iter().take(k) {
        let v = eig.eigenvectors.column(c);
        let lead = v.iter().copied().fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        comps.extend(v.iter().map(|a| a * sign));
        explained.push(eig.eigenvalues[c].max(0.0));
    }
    Ok(Pca {
        mean,
        components: Tensor::matrix(k, d, comps)?,
        explained_variance: explained,
        total_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RngStream;

    fn data(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = RngStream::from_seed(seed);
        let v: Vec<f64> = (0..n * d).map(|k| rng.normal() * (1.0 + (k % d) as f64)).collect();
        Tensor::matrix(n, d, v).unwrap()
    }

    #[test]
    fn full_rank_round_trip_is_lossless() {
        let x = data(50, 4, 1);
        let p = pca_features(&x, 4).unwrap();
        let back = p.back_project(&p.project(&x).unwrap()).unwrap();
        for i in 0..50 {
            for j in 0..4 {
                assert!((back.row(i)[j] - (x.row(i)[j] - p.mean[j])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn components_are_orthonormal_with_sign_convention() {
        let p = pca_features(&data(80, 5, 2), 3).unwrap();
        for a in 0..3 {
            let ra = p.components.row(a);
            let lead = ra.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(lead > 0.0);
            for b in 0..3 {
                let dot: f64 = ra.iter().zip(p.components.row(b)).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dominant_axis_explains_ninety_percent() {
        // Four points with variance 9 on the first axis and 1 on the second.
        let x = Tensor::from_rows(&[vec![3.0, 1.0], vec![-3.0, 1.0], vec![3.0, -1.0], vec![-3.0, -1.0]]).unwrap();
        let p = pca_features(&x, 1).unwrap();
        assert!((p.explained_ratio()[0] - 0.9).abs() < 1e-12);
        assert!((p.components.row(0)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_k() {
        let x = data(10, 3, 3);
        assert!(pca_features(&x, 0).is_err());
        assert!(pca_features(&x, 4).is_err());
    }
}
