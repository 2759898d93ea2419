use serde::{Deserialize, Serialize};

use super::HsiCube;
use crate::error::{Error, Result};

/// Spectrally reduced cube with the projection that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedCube {
    pub cube: HsiCube,
    pub projection: Projection,
}

/// Mean-centering and component matrix, enough to reapply the reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// Per-band means of the source cube.
    pub means: Vec<f64>,
    /// `B × T`, row-major; column `t` is the `t`-th principal direction.
    pub components: Vec<f64>,
    pub source_bands: usize,
    pub kept: usize,
    /// All `B` covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// `Σ top-T eigenvalues / Σ all`; 1 when the cube has no variance.
    pub retained_variance: f64,
}

impl Projection {
    pub fn component(&self, t: usize) -> Vec<f64> {
        (0..self.source_bands)
            .map(|b| self.components[b * self.kept + t])
            .collect()
    }

    /// Applies the centering and projection to a cube with `source_bands` bands.
    pub fn apply(&self, cube: &HsiCube) -> Result<HsiCube> {
        if cube.bands() != self.source_bands {
            return Err(Error::ShapeMismatch(format!(
                "projection expects {} bands, cube has {}",
                self.source_bands,
                cube.bands()
            )));
        }
        let n = cube.pixels();
        let mut out = vec![0f64; self.kept * n];
        for b in 0..self.source_bands {
            let band = cube.band(b);
            let mean = self.means[b];
            for t in 0..self.kept {
                let c = self.components[b * self.kept + t];
                if c == 0.0 {
                    continue;
                }
                let dst = &mut out[t * n..(t + 1) * n];
                for (d, &v) in dst.iter_mut().zip(band) {
                    *d += (v as f64 - mean) * c;
                }
            }
        }
        HsiCube::new(
            cube.height(),
            cube.width(),
            self.kept,
            out.into_iter().map(|v| v as f32).collect(),
        )
    }
}

/// Eigen-decomposition of a symmetric `n × n` row-major matrix by cyclic
/// Jacobi rotations. Returns eigenvalues (descending; equal values keep
/// their diagonal order) and the matching eigenvectors as columns of an
/// `n × n` row-major matrix.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * 1e-3 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[p * n + p], a[q * n + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + col] = v[row * n + src];
        }
    }
    (values, vectors)
}

/// Projects every pixel's `B`-band spectrum onto the top `t` principal
/// components of the pixel covariance (mean-centered, unscaled bands,
/// `n − 1` normalization).
///
/// Each component is signed so that its largest-magnitude entry (lowest
/// band index on ties) is positive.
pub fn pca_reduce(cube: &HsiCube, t: usize) -> Result<ReducedCube> {
    let bands = cube.bands();
    let n = cube.pixels();
    if t == 0 || t > bands {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {t} components of a {bands}-band cube"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "PCA needs at least two pixels".into(),
        ));
    }
    let means: Vec<f64> = (0..bands)
        .map(|b| cube.band(b).iter().map(|&v| v as f64).sum::<f64>() / n as f64)
        .collect();
    let centered: Vec<Vec<f64>> = (0..bands)
        .map(|b| cube.band(b).iter().map(|&v| v as f64 - means[b]).collect())
        .collect();
    let mut cov = vec![0.0; bands * bands];
    for i in 0..bands {
        for j in i..bands {
            let s: f64 = centered[i]
                .iter()
                .zip(&centered[j])
                .map(|(a, b)| a * b)
                .sum();
            let c = s / (n - 1) as f64;
            cov[i * bands + j] = c;
            cov[j * bands + i] = c;
        }
    }
    let (eigenvalues, vectors) = jacobi_eigen(&cov, bands);
    let mut components = vec![0.0; bands * t];
    for col in 0..t {
        let mut pivot = 0;
        for b in 0..bands {
            if vectors[b * bands + col].abs() > vectors[pivot * bands + col].abs() {
                pivot = b;
            }
        }
        let sign = if vectors[pivot * bands + col] < 0.0 {
            -1.0
        } else {
            1.0
        };
        for b in 0..bands {
            components[b * t + col] = sign * vectors[b * bands + col];
        }
    }
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let kept: f64 = eigenvalues[..t].iter().map(|v| v.max(0.0)).sum();
    let retained_variance = if total > 0.0 {
        (kept / total).min(1.0)
    } else {
        1.0
    };
    let projection = Projection {
        means,
        components,
        source_bands: bands,
        kept: t,
        eigenvalues,
        retained_variance,
    };
    Ok(ReducedCube {
        cube: projection.apply(cube)?,
        projection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use approx::assert_abs_diff_eq;

    fn cube_from_pixels(pixels: &[Vec<f32>]) -> HsiCube {
        let bands = pixels[0].len();
        let values = (0..bands)
            .flat_map(|b| pixels.iter().map(move |p| p[b]))
            .collect();
        HsiCube::new(1, pixels.len(), bands, values).unwrap()
    }

    #[test]
    fn diagonal_pair_example() {
        let cube = cube_from_pixels(&[
            vec![1.0, 1.0],
            vec![-1.0, -1.0],
            vec![2.0, 2.0],
            vec![-2.0, -2.0],
        ]);
        let r = pca_reduce(&cube, 2).unwrap();
        let c0 = r.projection.component(0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(c0[0], h, epsilon = 1e-12);
        assert_abs_diff_eq!(c0[1], h, epsilon = 1e-12);
        assert_abs_diff_eq!(r.projection.eigenvalues[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.projection.retained_variance, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn axis_aligned_variance() {
        let pixels: Vec<Vec<f32>> = (0..6).map(|i| vec![i as f32, 3.0, 3.0]).collect();
        let r = pca_reduce(&cube_from_pixels(&pixels), 1).unwrap();
        assert_eq!(r.projection.component(0), vec![1.0, 0.0, 0.0]);
        for (i, &v) in r.cube.band(0).iter().enumerate() {
            assert_abs_diff_eq!(v as f64, i as f64 - 2.5, epsilon = 1e-6);
        }
    }

    #[test]
    fn constant_cube_is_allowed() {
        let r = pca_reduce(&HsiCube::new(2, 2, 3, vec![1.5; 12]).unwrap(), 2).unwrap();
        assert_eq!(r.projection.retained_variance, 1.0);
        assert!(r.cube.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_requests() {
        let cube = HsiCube::new(2, 2, 3, vec![0.0; 12]).unwrap();
        assert!(pca_reduce(&cube, 4).is_err());
        assert!(pca_reduce(&cube, 0).is_err());
        assert!(pca_reduce(&HsiCube::new(1, 1, 3, vec![0.0; 3]).unwrap(), 1).is_err());
    }

    #[test]
    fn components_orthonormal_and_variance_ordered() {
        let mut rng = Rng::new(3);
        let pixels: Vec<Vec<f32>> = (0..50)
            .map(|_| {
                let z = rng.normal();
                (0..6)
                    .map(|b| (z * b as f64 + rng.normal()) as f32)
                    .collect()
            })
            .collect();
        let r = pca_reduce(&cube_from_pixels(&pixels), 6).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let d: f64 = r
                    .projection
                    .component(i)
                    .iter()
                    .zip(r.projection.component(j))
                    .map(|(a, b)| a * b)
                    .sum();
                assert_abs_diff_eq!(d, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-10);
            }
        }
        assert!(r.projection.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }
}
