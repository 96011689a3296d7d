//! Fréchet distance between Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector};

use crate::error::{bail, Result};

/// Diagonal loading used when a side has no more samples than dimensions.
pub const SHRINKAGE: f64 = 1e-6;

fn moments(feats: &[Vec<f64>], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = feats.len();
    let mut mu = DVector::zeros(d);
    for f in feats {
        mu += DVector::from_column_slice(f);
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    if n > 1 {
        for f in feats {
            let c = DVector::from_column_slice(f) - &mu;
            cov.ger(1.0, &c, &c, 1.0);
        }
        cov /= (n - 1) as f64;
    }
    if n <= d {
        for i in 0..d {
            cov[(i, i)] += SHRINKAGE;
        }
    }
    (mu, cov)
}

/// Symmetric PSD square root with negative eigenvalues clamped at zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})`.
///
/// The trace of `(Σ_a Σ_b)^{1/2}` is taken from the symmetric product
/// `Σ_a^{1/2} Σ_b Σ_a^{1/2}`, which has the same eigenvalues.
pub fn frechet_distance(feats_a: &[Vec<f64>], feats_b: &[Vec<f64>]) -> Result<f64> {
    if feats_a.is_empty() || feats_b.is_empty() {
        bail!(Contract, "Fréchet distance needs non-empty feature sets ({} vs {})", feats_a.len(), feats_b.len());
    }
    let d = feats_a[0].len();
    if d == 0 || feats_a.iter().chain(feats_b).any(|f| f.len() != d) {
        bail!(Dimension, "feature vectors must share one non-zero dimension");
    }
    let (mu_a, cov_a) = moments(feats_a, d);
    let (mu_b, cov_b) = moments(feats_b, d);
    let mean_term = (&mu_a - &mu_b).norm_squared();
    let ra = sqrt_psd(&cov_a);
    let inner = &ra * &cov_b * &ra;
    let cross = inner.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum::<f64>();
    let dist = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    // Rounding can leave a tiny negative value for identical sets.
    Ok(dist.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn gaussian(n: usize, d: usize, shift: f64, scale: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| shift + scale * rng.normal()).collect()).collect()
    }

    /// Closed form for 1-D Gaussians: `(μa − μb)² + (σa − σb)²`.
    fn analytic_1d(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let stats = |s: &[Vec<f64>]| {
            let n = s.len() as f64;
            let m = s.iter().map(|v| v[0]).sum::<f64>() / n;
            let var = s.iter().map(|v| (v[0] - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, var.sqrt())
        };
        let ((ma, sa), (mb, sb)) = (stats(a), stats(b));
        (ma - mb).powi(2) + (sa - sb).powi(2)
    }

    #[test]
    fn unit_shift_of_unit_gaussians_is_one() {
        // Sample sets with mean exactly 0 and 1 and unbiased variance exactly 1.
        let h = 0.5f64.sqrt();
        let a = vec![vec![-h], vec![h]];
        let b = vec![vec![1.0 - h], vec![1.0 + h]];
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn one_dimensional_closed_form() {
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let a = gaussian(40, 1, 0.0, 1.0 + rng.uniform(), &mut rng);
            let b = gaussian(30, 1, rng.uniform_in(-2.0, 2.0), 0.5 + rng.uniform(), &mut rng);
            let got = frechet_distance(&a, &b).unwrap();
            assert!((got - analytic_1d(&a, &b)).abs() < 1e-6);
        }
    }

    #[test]
    fn diagonal_closed_form() {
        // Independent coordinates: the distance separates per coordinate.
        let mut rng = Rng::new(8);
        let a = gaussian(200, 3, 0.0, 1.0, &mut rng);
        let b = gaussian(150, 3, 0.5, 2.0, &mut rng);
        let per: f64 = (0..3)
            .map(|k| {
                let col = |s: &[Vec<f64>]| s.iter().map(|v| vec![v[k]]).collect::<Vec<_>>();
                analytic_1d(&col(&a), &col(&b))
            })
            .sum();
        let got = frechet_distance(&a, &b).unwrap();
        // Sample cross-covariances are not exactly zero.
        assert!((got - per).abs() < 0.1 * per, "{got} vs {per}");
    }

    #[test]
    fn identical_sets_give_zero() {
        let mut rng = Rng::new(1);
        for (n, d) in [(50, 4), (5, 8), (1, 3)] {
            let a = gaussian(n, d, 0.3, 1.0, &mut rng);
            assert!(frechet_distance(&a, &a).unwrap() < 1e-6);
        }
    }

    #[test]
    fn contract_errors() {
        let a = vec![vec![1.0, 2.0]];
        assert!(matches!(frechet_distance(&a, &[]), Err(crate::Error::Contract(_))));
        assert!(matches!(frechet_distance(&[], &a), Err(crate::Error::Contract(_))));
        assert!(matches!(frechet_distance(&a, &[vec![1.0]]), Err(crate::Error::Dimension(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn nonnegative_and_symmetric(seed in 0u64..10_000, na in 2usize..30, nb in 2usize..30, d in 1usize..6) {
            let mut rng = Rng::new(seed);
            let a = gaussian(na, d, 0.0, 1.0, &mut rng);
            let b = gaussian(nb, d, rng.uniform(), 1.5, &mut rng);
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-6 * ab.max(1.0), "{ab} vs {ba}");
        }
    }
}
