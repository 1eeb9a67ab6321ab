use nalgebra::DMatrix;

use crate::linalg::{self, from_eigen};
use crate::{Error, Result};

/// Singular value soft-thresholding `U max(Σ - t, 0) Vᵀ`, the proximal
/// operator of `t‖·‖*`.
pub fn svt(m: &DMatrix<f64>, threshold: f64) -> Result<DMatrix<f64>> {
    if !(threshold >= 0.0) {
        return Err(Error::invalid("threshold", "must be non-negative"));
    }
    if threshold == 0.0 || m.is_empty() {
        return Ok(m.clone());
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut scaled = u;
    for (mut col, &s) in scaled.column_iter_mut().zip(svd.singular_values.iter()) {
        col *= (s - threshold).max(0.0);
    }
    Ok(scaled * v_t)
}

/// SVT specialised to symmetric input: singular values are `|λ|`, so
/// shrinking magnitudes of the eigenvalues is equivalent and cheaper.
pub(crate) fn svt_symmetric(m: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    let eig = m.clone().symmetric_eigen();
    let shrunk = eig
        .eigenvalues
        .map(|l| l.signum() * (l.abs() - threshold).max(0.0));
    from_eigen(&eig.eigenvectors, &shrunk)
}

/// Projects a symmetric matrix onto `{X : λ_max(X) ≤ -floor}` by clipping
/// eigenvalues.
pub fn project_nsd(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    if !(floor >= 0.0) {
        return Err(Error::invalid("floor", "must be non-negative"));
    }
    if !linalg::is_symmetric(m, 1e-9) {
        return Err(Error::NotSymmetric {
            what: "matrix to project",
            asymmetry: linalg::max_asymmetry(m),
        });
    }
    Ok(project_nsd_unchecked(&linalg::symmetrize(m), floor))
}

pub(crate) fn project_nsd_unchecked(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l <= -floor) {
        return m.clone();
    }
    let clipped = eig.eigenvalues.map(|l| l.min(-floor));
    from_eigen(&eig.eigenvectors, &clipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn svt_diagonal() {
        let out = svt(&diag(&[3.0, 1.0]), 1.0).unwrap();
        assert!((out - diag(&[2.0, 0.0])).amax() < 1e-12);
    }

    #[test]
    fn svt_zero_threshold_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        assert!((svt(&m, 0.0).unwrap() - &m).amax() < 1e-12);
    }

    #[test]
    fn svt_large_threshold_annihilates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let smax = m.clone().singular_values().amax();
        assert_eq!(svt(&m, smax * 1.01).unwrap().amax(), 0.0);
    }

    #[test]
    fn symmetric_svt_agrees_with_general() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let r = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let s = linalg::symmetrize(&r);
            let t = rng.random_range(0.0..1.0);
            let a = svt(&s, t).unwrap();
            let b = svt_symmetric(&s, t);
            let diff = (a - &b).amax();
            assert!(diff < 1e-8, "{diff}");
            assert_eq!(linalg::max_asymmetry(&b), 0.0);
        }
    }

    #[test]
    fn nsd_examples() {
        let out = project_nsd(&diag(&[1.0, -1.0]), 0.0).unwrap();
        assert!((out - diag(&[0.0, -1.0])).amax() < 1e-12);

        let nd = DMatrix::from_row_slice(2, 2, &[-2.0, 0.5, 0.5, -1.0]);
        assert!((project_nsd(&nd, 0.0).unwrap() - &nd).amax() < 1e-12);

        let out = project_nsd(&DMatrix::identity(3, 3), 1e-9).unwrap();
        assert!((out + DMatrix::identity(3, 3) * 1e-9).amax() < 1e-15);
    }

    #[test]
    fn nsd_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(project_nsd(&m, 0.0), Err(Error::NotSymmetric { .. })));
    }
}
