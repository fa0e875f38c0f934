//! Symmetric eigendecomposition (cyclic Jacobi), PSD matrix square root,
//! and the Fréchet distance between Gaussians.

use super::{FrechetStats, MetricsError};

/// Off-diagonal Frobenius norm squared.
fn off_diag_sq(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s
}

/// Cyclic Jacobi rotations on a symmetric matrix. Returns (eigenvalues,
/// row-major V whose COLUMNS are the eigenvectors): `A = V diag(w) V^T`.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = matrix.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    let tol = 1e-28 * scale;
    for _sweep in 0..100 {
        if off_diag_sq(&a, n) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q.
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let w = (0..n).map(|i| a[i * n + i]).collect();
    (w, v)
}

fn check_symmetric(a: &[f64], n: usize) -> Result<(), MetricsError> {
    let scale = a.iter().fold(0.0f64, |m, &x| m.max(x.abs())).max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[i * n + j] - a[j * n + i]).abs() > 1e-8 * scale {
                return Err(MetricsError::NotSymmetric);
            }
        }
    }
    Ok(())
}

/// Principal square root of a symmetric PSD matrix via eigendecomposition.
/// Eigenvalues in `[-1e-8, 0)` are clamped to zero; anything more negative
/// is an error.
pub fn matrix_sqrt_psd(matrix: &[f64], n: usize) -> Result<Vec<f64>, MetricsError> {
    if matrix.len() != n * n {
        return Err(MetricsError::ShapeMismatch(format!(
            "expected {n}x{n} buffer, got {} values",
            matrix.len()
        )));
    }
    check_symmetric(matrix, n)?;
    let (w, v) = jacobi_eigen(matrix, n);
    let scale = w.iter().fold(0.0f64, |m, &x| m.max(x.abs())).max(1.0);
    let mut roots = Vec::with_capacity(n);
    for &lambda in &w {
        if lambda < -1e-8 * scale {
            return Err(MetricsError::NegativeEigenvalue(lambda));
        }
        roots.push(lambda.max(0.0).sqrt());
    }
    // S = V diag(sqrt(w)) V^T, then exact symmetrization.
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += v[i * n + k] * roots[k] * v[j * n + k];
            }
            s[i * n + j] = acc;
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let m = (s[i * n + j] + s[j * n + i]) / 2.0;
            s[i * n + j] = m;
            s[j * n + i] = m;
        }
    }
    Ok(s)
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

fn trace(a: &[f64], n: usize) -> f64 {
    (0..n).map(|i| a[i * n + i]).sum()
}

/// Fréchet distance between two Gaussians:
/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, with the cross
/// term computed as `tr((S_a^(1/2) S_b S_a^(1/2))^(1/2))` to stay on
/// symmetric PSD ground. Small negative numerical residue clamps to zero.
pub fn fid(a: &FrechetStats, b: &FrechetStats) -> Result<f64, MetricsError> {
    let n = a.dim();
    if n != b.dim() {
        return Err(MetricsError::DimensionMismatch {
            left: n,
            right: b.dim(),
        });
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    let sqrt_a = matrix_sqrt_psd(&a.cov, n)?;
    let inner = matmul(&sqrt_a, &matmul(&b.cov, &sqrt_a, n), n);
    let cross = matrix_sqrt_psd(&inner, n)?;
    let value = mean_term + trace(&a.cov, n) + trace(&b.cov, n) - 2.0 * trace(&cross, n);
    Ok(value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_psd(rng: &mut StdRng, n: usize) -> Vec<f64> {
        let b: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // A = B^T B is symmetric PSD.
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += b[k * n + i] * b[k * n + j];
                }
                a[i * n + j] = acc;
            }
        }
        a
    }

    #[test]
    fn sqrt_of_identity_is_identity() {
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let s = matrix_sqrt_psd(&eye, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((s[i * 3 + j] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sqrt_of_diagonal() {
        let a = vec![4.0, 0.0, 0.0, 9.0];
        let s = matrix_sqrt_psd(&a, 2).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-10);
        assert!((s[3] - 3.0).abs() < 1e-10);
        assert!(s[1].abs() < 1e-10 && s[2].abs() < 1e-10);
    }

    #[test]
    fn sqrt_reconstructs_random_psd_matrices() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_psd(&mut rng, 8);
            let s = matrix_sqrt_psd(&a, 8).unwrap();
            let ss = matmul(&s, &s, 8);
            let max_err = ss
                .iter()
                .zip(&a)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            assert!(max_err <= 1e-8, "reconstruction error {max_err}");
        }
    }

    #[test]
    fn sqrt_rejects_asymmetric_and_negative() {
        let asym = vec![1.0, 2.0, 0.0, 1.0];
        assert!(matches!(
            matrix_sqrt_psd(&asym, 2),
            Err(MetricsError::NotSymmetric)
        ));
        let neg = vec![-1.0, 0.0, 0.0, 1.0];
        assert!(matches!(
            matrix_sqrt_psd(&neg, 2),
            Err(MetricsError::NegativeEigenvalue(_))
        ));
    }

    fn stats(mean: Vec<f64>, cov: Vec<f64>) -> FrechetStats {
        FrechetStats {
            mean,
            cov,
            count: 10,
        }
    }

    #[test]
    fn fid_of_identical_stats_is_zero() {
        let mut rng = StdRng::seed_from_u64(6);
        let a = stats(vec![0.3, -0.2, 0.9], random_psd(&mut rng, 3));
        let d = fid(&a, &a).unwrap();
        assert!(d.abs() < 1e-6, "fid(a,a) = {d}");
    }

    #[test]
    fn fid_mean_shift_with_identity_covariance() {
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let a = stats(vec![0.0, 0.0], eye.clone());
        let b = stats(vec![3.0, 0.0], eye);
        let d = fid(&a, &b).unwrap();
        assert!((d - 9.0).abs() < 1e-6, "fid = {d}");
    }

    #[test]
    fn fid_commuting_diagonal_closed_form() {
        // Per dim: 1 + 4 - 2*2 = 1; two dims -> 2.
        let a = stats(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        let b = stats(vec![0.0, 0.0], vec![4.0, 0.0, 0.0, 4.0]);
        let d = fid(&a, &b).unwrap();
        assert!((d - 2.0).abs() < 1e-6, "fid = {d}");
    }

    #[test]
    fn fid_is_symmetric() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..5 {
            let a = stats(
                (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                random_psd(&mut rng, 6),
            );
            let b = stats(
                (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                random_psd(&mut rng, 6),
            );
            let ab = fid(&a, &b).unwrap();
            let ba = fid(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-8, "{ab} vs {ba}");
            assert!(ab >= 0.0);
        }
    }

    #[test]
    fn fid_rejects_dimension_mismatch() {
        let a = stats(vec![0.0; 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = stats(vec![0.0; 3], vec![0.0; 9]);
        assert!(matches!(
            fid(&a, &b),
            Err(MetricsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sqrt_output_is_symmetric_psd() {
        let mut rng = StdRng::seed_from_u64(8);
        let a = random_psd(&mut rng, 6);
        let s = matrix_sqrt_psd(&a, 6).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(s[i * 6 + j], s[j * 6 + i]);
            }
        }
        let (w, _) = jacobi_eigen(&s, 6);
        assert!(w.iter().all(|&x| x >= -1e-10));
    }
}
