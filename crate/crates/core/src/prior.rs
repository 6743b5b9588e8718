use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::settings::{check_psd, PriorSpec};

/// `R×K` matrix of draws from `N(mean, covariance)`.
///
/// The factor is the Cholesky factor when it exists and `V·sqrt(Λ)` from the
/// symmetric eigendecomposition otherwise, so singular PSD covariances work.
/// The normal stream is seeded with `seed + draw_seed_offset`.
pub fn draw_priors(prior: &PriorSpec, seed: u64) -> Result<DMatrix<f64>> {
    let k = prior.k();
    let cov = prior.covariance_matrix();
    check_psd(&cov).map_err(Error::InvalidInput)?;
    if prior.n_draws == 0 {
        return Err(Error::InvalidInput(
            "number of draws must be at least 1".into(),
        ));
    }
    let factor = match cov.clone().cholesky() {
        Some(chol) => chol.unpack(),
        None => {
            let eigen = cov.symmetric_eigen();
            let roots = eigen.eigenvalues.map(|v| v.max(0.0).sqrt());
            &eigen.eigenvectors * DMatrix::from_diagonal(&roots)
        }
    };
    let mean = DVector::from_column_slice(&prior.mean);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(prior.draw_seed_offset));
    let mut draws = DMatrix::zeros(prior.n_draws, k);
    let mut z = DVector::zeros(k);
    for r in 0..prior.n_draws {
        z.iter_mut()
            .for_each(|v| *v = StandardNormal.sample(&mut rng));
        let x = &mean + &factor * &z;
        draws.row_mut(r).copy_from(&x.transpose());
    }
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_covariance_reproduces_mean() {
        let mut prior = PriorSpec::with_mean(vec![0.5, -1.0, 2.0]);
        prior.covariance = Some(vec![vec![0.0; 3]; 3]);
        prior.n_draws = 7;
        let draws = draw_priors(&prior, 3).unwrap();
        for r in 0..7 {
            assert_eq!(draws.row(r).iter().copied().collect::<Vec<_>>(), prior.mean);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let prior = PriorSpec::zero(4);
        assert_eq!(
            draw_priors(&prior, 11).unwrap(),
            draw_priors(&prior, 11).unwrap()
        );
        assert_ne!(
            draw_priors(&prior, 11).unwrap(),
            draw_priors(&prior, 12).unwrap()
        );
        let mut shifted = prior.clone();
        shifted.draw_seed_offset = 1;
        assert_eq!(
            draw_priors(&shifted, 11).unwrap(),
            draw_priors(&prior, 12).unwrap()
        );
    }

    #[test]
    fn standard_normal_sample_means() {
        let mut prior = PriorSpec::zero(3);
        prior.n_draws = 10_000;
        let draws = draw_priors(&prior, 2024).unwrap();
        for c in 0..3 {
            let mean = draws.column(c).mean();
            // 3σ/√R = 0.03, asserted at the looser 0.05
            assert!(mean.abs() < 0.05, "column {c} mean {mean}");
        }
    }

    #[test]
    fn singular_psd_covariance_uses_eigen_factor() {
        let mut prior = PriorSpec::zero(2);
        prior.covariance = Some(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        prior.n_draws = 50;
        let draws = draw_priors(&prior, 5).unwrap();
        for r in 0..50 {
            assert!((draws[(r, 0)] - draws[(r, 1)]).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let mut prior = PriorSpec::zero(2);
        prior.covariance = Some(vec![vec![1.0, 3.0], vec![3.0, 1.0]]);
        assert!(matches!(
            draw_priors(&prior, 1),
            Err(Error::InvalidInput(_))
        ));
    }
}
