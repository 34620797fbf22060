//! Affinity-graph uncertainty measures over sampled responses.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues below this count toward the eccentricity embedding dimension.
pub const ECC_EIGEN_THRESHOLD: f64 = 0.9;
const CLAMP_TOLERANCE: f64 = 1e-9;

/// Symmetric pairwise similarity matrix with unit diagonal, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl AffinityMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::contract("affinity matrix must be square"));
        }
        let m = Self {
            n,
            entries: rows.iter().flatten().copied().collect(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.entries.len() != self.n * self.n {
            return Err(Error::contract("affinity matrix shape mismatch"));
        }
        for i in 0..self.n {
            if (self.get(i, i) - 1.0).abs() > 1e-12 {
                return Err(Error::contract(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..self.n {
                let w = self.get(i, j);
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::contract(format!(
                        "entry ({i},{j}) = {w} outside [0,1]"
                    )));
                }
                if (w - self.get(j, i)).abs() > 1e-12 {
                    return Err(Error::contract(format!("entry ({i},{j}) breaks symmetry")));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.entries)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).sum())
            .collect()
    }
}

/// Builds `W` with `w_ij = (e(i,j) + e(j,i)) / 2` and unit diagonal.
pub fn affinity_matrix<T>(
    samples: &[T],
    affinity: impl Fn(&T, &T) -> f64,
) -> Result<AffinityMatrix> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::contract(
            "affinity matrix needs at least two samples",
        ));
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        entries[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let a = affinity(&samples[i], &samples[j]);
            let b = affinity(&samples[j], &samples[i]);
            for v in [a, b] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::contract(format!("affinity {v} outside [0,1]")));
                }
            }
            let w = (a + b) / 2.0;
            entries[i * n + j] = w;
            entries[j * n + i] = w;
        }
    }
    Ok(AffinityMatrix { n, entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMeasures {
    pub eigv: f64,
    pub degree: f64,
    pub ecc: f64,
    /// Normalized-Laplacian spectrum, ascending.
    pub eigenvalues: Vec<f64>,
}

/// `L = I - D^{-1/2} W D^{-1/2}`.
pub fn normalized_laplacian(w: &AffinityMatrix) -> Result<DMatrix<f64>> {
    let sums = w.row_sums();
    if let Some(i) = sums.iter().position(|s| *s <= 0.0) {
        return Err(Error::contract(format!("row {i} has zero degree")));
    }
    let inv_sqrt: Vec<f64> = sums.iter().map(|s| 1.0 / s.sqrt()).collect();
    let n = w.n();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt[i] * w.get(i, j) * inv_sqrt[j]
    }))
}

/// Eigenvalue sum, degree and eccentricity measures.
///
/// Eccentricity embeds each sample as its row in the eigenvectors of the `k`
/// smallest Laplacian eigenvalues (`k` = eigenvalues below
/// [`ECC_EIGEN_THRESHOLD`]), centers the embeddings and returns the Euclidean
/// norm of all offsets together.
pub fn spectral_measures(w: &AffinityMatrix) -> Result<SpectralMeasures> {
    w.validate()?;
    let n = w.n();
    let lap = normalized_laplacian(w)?;
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let eigv = eigenvalues
        .iter()
        .map(|l| {
            let v = 1.0 - l;
            if v > CLAMP_TOLERANCE {
                v
            } else {
                0.0
            }
        })
        .sum();

    let trace: f64 = w.row_sums().iter().sum();
    let degree = 1.0 - trace / (n * n) as f64;

    let k = eigenvalues
        .iter()
        .filter(|l| **l < ECC_EIGEN_THRESHOLD)
        .count();
    let mut ecc_sq = 0.0;
    if k > 0 {
        let cols = &order[..k];
        let mean: Vec<f64> = cols
            .iter()
            .map(|&c| (0..n).map(|r| eig.eigenvectors[(r, c)]).sum::<f64>() / n as f64)
            .collect();
        for r in 0..n {
            for (x, &c) in cols.iter().enumerate() {
                let d = eig.eigenvectors[(r, c)] - mean[x];
                ecc_sq += d * d;
            }
        }
    }

    Ok(SpectralMeasures {
        eigv,
        degree,
        ecc: ecc_sq.sqrt(),
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Cyclic Jacobi eigenvalue iteration, independent of nalgebra.
    #[allow(clippy::needless_range_loop)]
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-22 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    fn block_matrix(labels: &[usize]) -> AffinityMatrix {
        affinity_matrix(labels, |a, b| if a == b { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn all_ones() {
        let m = spectral_measures(&block_matrix(&[0; 5])).unwrap();
        assert!(m.degree.abs() < 1e-12);
        assert!((m.eigv - 1.0).abs() < 1e-9);
        assert!(m.eigenvalues[0].abs() < 1e-9);
        assert!(m.eigenvalues[1..].iter().all(|l| (l - 1.0).abs() < 1e-9));
        assert!(m.ecc.abs() < 1e-9);
    }

    #[test]
    fn identity() {
        let m = spectral_measures(&block_matrix(&[0, 1, 2, 3, 4])).unwrap();
        assert!((m.degree - 0.8).abs() < 1e-12);
        assert!((m.eigv - 5.0).abs() < 1e-9);
        // Orthonormal basis of R^5, centered: sqrt(N - 1).
        assert!((m.ecc - 2.0).abs() < 1e-9);
    }

    #[test]
    fn two_blocks() {
        let w = block_matrix(&[0, 0, 0, 1, 1]);
        let m = spectral_measures(&w).unwrap();
        assert!((m.eigv - 2.0).abs() < 1e-9);
        let oracle = jacobi_eigenvalues(normalized_laplacian_oracle(&w));
        for (a, b) in m.eigenvalues.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    fn normalized_laplacian_oracle(w: &AffinityMatrix) -> Vec<Vec<f64>> {
        let n = w.n();
        let d: Vec<f64> = (0..n).map(|i| (0..n).map(|j| w.get(i, j)).sum()).collect();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| f64::from(u8::from(i == j)) - w.get(i, j) / (d[i] * d[j]).sqrt())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn mean_rule_for_asymmetric_affinity() {
        let w = affinity_matrix(&[0usize, 1], |a, b| if a < b { 0.4 } else { 0.6 }).unwrap();
        assert!((w.get(0, 1) - 0.5).abs() < 1e-12);
        assert!((w.get(1, 0) - 0.5).abs() < 1e-12);
        assert_eq!(w.get(0, 0), 1.0);
    }

    #[test]
    fn contract_errors() {
        assert!(affinity_matrix(&[0usize], |_, _| 1.0).is_err());
        assert!(affinity_matrix(&[0usize, 1], |_, _| 1.5).is_err());
        assert!(AffinityMatrix::from_rows(&[vec![1.0, 0.2], vec![0.3, 1.0]]).is_err());
        assert!(AffinityMatrix::from_rows(&[vec![0.5]]).is_err());
    }

    proptest! {
        #[test]
        fn block_count_and_degree(labels in prop::collection::vec(0usize..4, 2..7)) {
            let w = block_matrix(&labels);
            let m = spectral_measures(&w).unwrap();
            let mut blocks = labels.clone();
            blocks.sort();
            blocks.dedup();
            prop_assert!((m.eigv - blocks.len() as f64).abs() < 1e-6);
            let n = labels.len();
            let trace: usize = labels.iter().map(|l| labels.iter().filter(|x| *x == l).count()).sum();
            prop_assert_eq!(m.degree, 1.0 - trace as f64 / (n * n) as f64);
            prop_assert!(m.degree >= 0.0 && m.degree <= 1.0 - 1.0 / n as f64 + 1e-12);
            let oracle = jacobi_eigenvalues(normalized_laplacian_oracle(&w));
            for (a, b) in m.eigenvalues.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}
