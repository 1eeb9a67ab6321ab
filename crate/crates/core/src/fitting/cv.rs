use rand::seq::SliceRandom;
use rand::Rng;

use super::{mse, Sample};
use crate::{Error, QuadraticModel, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport<T> {
    pub best: T,
    pub best_index: usize,
    /// Held-out MSE per candidate per fold; `inf` where the fit failed.
    pub fold_mse: Vec<Vec<f64>>,
    pub mean_mse: Vec<f64>,
}

/// Fold index for each sample: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

/// Picks the candidate with the lowest mean held-out squared error. Ties go
/// to the earlier candidate.
pub fn cross_validate<T, F>(
    samples: &[Sample],
    candidates: &[T],
    folds: usize,
    rng: &mut impl Rng,
    mut fit: F,
) -> Result<CvReport<T>>
where
    T: Clone,
    F: FnMut(&[Sample], &T) -> Result<QuadraticModel>,
{
    if candidates.is_empty() {
        return Err(Error::Empty("candidates"));
    }
    if folds < 2 {
        return Err(Error::invalid("folds", "must be at least 2"));
    }
    if samples.len() < folds {
        return Err(Error::invalid(
            "samples",
            format!("need at least {folds} samples for {folds} folds"),
        ));
    }
    let assignment = fold_assignment(samples.len(), folds, rng);
    let split = |k: usize| -> (Vec<Sample>, Vec<Sample>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (s, &f) in samples.iter().zip(&assignment) {
            if f == k {
                test.push(s.clone());
            } else {
                train.push(s.clone());
            }
        }
        (train, test)
    };
    let splits: Vec<_> = (0..folds).map(split).collect();

    let mut fold_mse = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let per_fold = splits
            .iter()
            .map(|(train, test)| match fit(train, cand) {
                Ok(model) => mse(&model, test).unwrap_or(f64::INFINITY),
                Err(_) => f64::INFINITY,
            })
            .collect::<Vec<_>>();
        fold_mse.push(per_fold);
    }
    let mean_mse: Vec<f64> = fold_mse
        .iter()
        .map(|f| f.iter().sum::<f64>() / folds as f64)
        .collect();
    let mut best_index = 0;
    for (i, &m) in mean_mse.iter().enumerate() {
        if m < mean_mse[best_index] {
            best_index = i;
        }
    }
    if !mean_mse[best_index].is_finite() {
        return Err(Error::invalid("candidates", "every candidate failed to fit"));
    }
    Ok(CvReport {
        best: candidates[best_index].clone(),
        best_index,
        fold_mse,
        mean_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::fit_ridge;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(rng: &mut impl Rng, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let t = DVector::from_fn(1, |_, _| rng.random_range(-1.0..1.0));
                let c = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
                let r = -t[0] * t[0] + 2.0 * c[0] * c[1] + rng.random_range(-0.1..0.1);
                Sample::new(t, c, r)
            })
            .collect()
    }

    #[test]
    fn single_candidate_wins() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let s = data(&mut rng, 30);
        let r = cross_validate(&s, &[0.5], 3, &mut rng, |tr, &l| fit_ridge(tr, l)).unwrap();
        assert_eq!(r.best, 0.5);
    }

    #[test]
    fn empty_candidates_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let s = data(&mut rng, 30);
        let none: [f64; 0] = [];
        assert!(matches!(
            cross_validate(&s, &none, 3, &mut rng, |tr, &l| fit_ridge(tr, l)),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn reproducible_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let s = data(&mut rng, 40);
        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            cross_validate(&s, &[1e-4, 1.0, 100.0], 5, &mut r, |tr, &l| fit_ridge(tr, l)).unwrap()
        };
        let a = run(9);
        let b = run(9);
        for (x, y) in a.fold_mse.iter().flatten().zip(b.fold_mse.iter().flatten()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(a.best, 1e-4);
    }

    #[test]
    fn folds_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let f = fold_assignment(23, 5, &mut rng);
        for k in 0..5 {
            let count = f.iter().filter(|&&x| x == k).count();
            assert!(count == 4 || count == 5);
        }
    }
}
