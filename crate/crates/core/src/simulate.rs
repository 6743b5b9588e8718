use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::{CodedDesign, Coefficients};
use crate::error::{Error, Result};
use crate::estimation::{ResponseDataset, ResponseRow};
use crate::mnl::choice_probabilities;

/// Task id for a respondent (0-based index) answering set `set` (1-based).
pub fn task_gid(respondent_index: u64, n_sets: usize, set: usize) -> u64 {
    respondent_index * n_sets as u64 + set as u64
}

/// Draws one index from a probability vector given a uniform `u ∈ [0, 1)`.
pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Synthetic respondents answering every set of the design under the MNL
/// model with coefficients `true_beta`. Respondents are numbered from 1.
pub fn simulate_choices(
    design: &CodedDesign,
    true_beta: &Coefficients,
    n_respondents: usize,
    seed: u64,
) -> Result<ResponseDataset> {
    if n_respondents == 0 {
        return Err(Error::InvalidInput(
            "n_respondents must be at least 1".into(),
        ));
    }
    if true_beta.len() != design.n_params() {
        return Err(Error::InvalidInput(format!(
            "design has {} coded columns but beta has {} entries",
            design.n_params(),
            true_beta.len()
        )));
    }
    let probs: Vec<Vec<f64>> = design
        .sets()
        .map(|set| {
            let xs: Vec<&[f64]> = set.iter().map(|r| r.x.as_slice()).collect();
            choice_probabilities(&xs, &true_beta.beta)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = ResponseDataset::new(design.column_names.clone());
    data.rows.reserve(n_respondents * design.rows.len());
    for r in 0..n_respondents as u64 {
        for (set, p) in design.sets().zip(&probs) {
            let chosen = sample_index(p, rng.random::<f64>());
            let gid = task_gid(r, design.n_sets, set[0].set);
            data.rows
                .extend(set.iter().enumerate().map(|(j, row)| ResponseRow {
                    gid,
                    respondent: r + 1,
                    alt: row.alt,
                    choice: u8::from(j == chosen),
                    covariates: row.x.clone(),
                }));
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::Coding;

    fn design() -> CodedDesign {
        let coding = Coding::new(
            vec!["a".into(), "b".into()],
            vec![
                vec!["0".into(), "1".into()],
                vec!["0".into(), "1".into(), "2".into()],
            ],
        )
        .unwrap();
        CodedDesign::from_levels(
            &coding,
            &[vec![vec![1, 0], vec![0, 2]], vec![vec![0, 1], vec![1, 2]]],
            false,
        )
    }

    #[test]
    fn saturated_coefficient_dominates() {
        let d = design();
        let beta = Coefficients::from_values(vec![50.0, 0.0, 0.0]);
        let data = simulate_choices(&d, &beta, 200, 1).unwrap();
        let chosen_with_level = data
            .rows
            .iter()
            .filter(|r| r.choice == 1)
            .filter(|r| r.covariates[0] == 1.0)
            .count();
        assert!(chosen_with_level as f64 > 0.99 * 400.0);
    }

    #[test]
    fn zero_beta_is_balanced() {
        let d = design();
        let data = simulate_choices(&d, &Coefficients::zeros(3), 1000, 9).unwrap();
        for set in 1..=2u64 {
            let first = data
                .rows
                .iter()
                .filter(|r| (r.gid - 1) % 2 + 1 == set && r.alt == 1 && r.choice == 1)
                .count();
            let share = first as f64 / 1000.0;
            assert!(share > 0.45 && share < 0.55, "set {set}: {share}");
        }
    }

    #[test]
    fn deterministic_and_valid() {
        let d = design();
        let beta = Coefficients::from_values(vec![0.3, -0.2, 0.4]);
        let a = simulate_choices(&d, &beta, 25, 7).unwrap();
        assert_eq!(a, simulate_choices(&d, &beta, 25, 7).unwrap());
        a.validate().unwrap();
        assert_eq!(a.n_tasks(), 50);
        assert!(simulate_choices(&d, &beta, 0, 7).is_err());
    }

    #[test]
    fn sample_index_edges() {
        assert_eq!(sample_index(&[0.5, 0.5], 0.0), 0);
        assert_eq!(sample_index(&[0.5, 0.5], 0.5), 1);
        assert_eq!(sample_index(&[0.5, 0.5], 0.999_999_999), 1);
    }
}
