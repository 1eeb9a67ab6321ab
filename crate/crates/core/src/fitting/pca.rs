use nalgebra::{DMatrix, DVector};

use super::{fit_ridge, Sample};
use crate::linalg::{check_dim, stack_rows};
use crate::{Error, QuadraticModel, Result};

/// Linear projection `z = W (c - mean)` onto the top principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    mean: DVector<f64>,
    /// `dz × dc`, orthonormal rows in descending variance order.
    w: DMatrix<f64>,
    /// Variance captured by each retained direction.
    variances: DVector<f64>,
    total_variance: f64,
}

impl PcaProjection {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn dim_reduced(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim_context(&self) -> usize {
        self.w.ncols()
    }

    /// Fraction of the sample variance captured by the retained directions.
    pub fn captured_variance(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.variances.sum() / self.total_variance
        } else {
            0.0
        }
    }

    pub fn transform(&self, context: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("context", self.dim_context(), context.len())?;
        Ok(&self.w * (context - &self.mean))
    }

    /// Keeps the leading `dz` directions of an existing fit.
    pub fn truncate(&self, dz: usize) -> Result<Self> {
        if dz == 0 || dz > self.dim_reduced() {
            return Err(Error::invalid(
                "dz",
                format!("must be in 1..={}", self.dim_reduced()),
            ));
        }
        Ok(Self {
            mean: self.mean.clone(),
            w: self.w.rows(0, dz).into_owned(),
            variances: self.variances.rows(0, dz).into_owned(),
            total_variance: self.total_variance,
        })
    }
}

pub fn pca_fit(contexts: &[DVector<f64>], dz: usize) -> Result<PcaProjection> {
    let first = contexts.first().ok_or(Error::Empty("contexts"))?;
    let dc = first.len();
    if dz == 0 || dz >= dc {
        return Err(Error::invalid("dz", format!("must satisfy 0 < dz < dc = {dc}")));
    }
    if contexts.len() < dz + 1 {
        return Err(Error::invalid(
            "contexts",
            format!("need at least dz + 1 = {}, got {}", dz + 1, contexts.len()),
        ));
    }
    for c in contexts {
        check_dim("context", dc, c.len())?;
    }
    if !contexts.iter().all(|c| c.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("contexts".into()));
    }

    let n = contexts.len();
    let nf = n as f64;
    let mut x = stack_rows(contexts, dc);
    let mean = DVector::from_fn(dc, |j, _| x.column(j).sum() / nf);
    for mut row in x.row_iter_mut() {
        row -= mean.transpose();
    }

    // Eigendecompose whichever of the covariance and Gram matrices is smaller.
    let (values, vectors) = if n >= dc {
        let cov = x.tr_mul(&x) / nf;
        let eig = cov.symmetric_eigen();
        (eig.eigenvalues, eig.eigenvectors)
    } else {
        let gram = &x * x.transpose() / nf;
        let eig = gram.symmetric_eigen();
        let mut dirs = x.tr_mul(&eig.eigenvectors);
        for mut col in dirs.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
        (eig.eigenvalues, dirs)
    };

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    if order.len() < dz || values[order[dz - 1]] <= 0.0 {
        return Err(Error::invalid(
            "dz",
            "contexts do not span enough directions",
        ));
    }

    let mut w = DMatrix::zeros(dz, dc);
    for (row, &i) in order.iter().take(dz).enumerate() {
        let mut v = vectors.column(i).into_owned();
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v = -v;
        }
        w.row_mut(row).copy_from(&v.transpose());
    }
    let variances = DVector::from_iterator(dz, order.iter().take(dz).map(|&i| values[i].max(0.0)));
    let total_variance = x.norm_squared() / nf;
    Ok(PcaProjection {
        mean,
        w,
        variances,
        total_variance,
    })
}

/// Maps a model over reduced contexts `z = W(c - mean)` back to the full
/// context space. The result has `rank(B) ≤ dz`.
pub fn lift_reduced_model(reduced: &QuadraticModel, pca: &PcaProjection) -> Result<QuadraticModel> {
    check_dim("reduced model context", pca.dim_reduced(), reduced.dim_context())?;
    let w = &pca.w;
    let mu = &pca.mean;
    let b = w.tr_mul(&(reduced.b() * w));
    let d = reduced.d() * w;
    let wr2 = w.tr_mul(reduced.r2());
    let b_mu = &b * mu;
    let r1 = reduced.r1() - (&d * mu) * 2.0;
    let r2 = &wr2 - &b_mu * 2.0;
    let r0 = reduced.r0() + mu.dot(&b_mu) - mu.dot(&wr2);
    QuadraticModel::new(reduced.a().clone(), b, d, r1, r2, r0)
}

/// Ridge fit on PCA-reduced contexts, lifted back to the full context space.
pub fn fit_ridge_pca(samples: &[Sample], pca: &PcaProjection, lambda: f64) -> Result<QuadraticModel> {
    let reduced = samples
        .iter()
        .map(|s| Ok(Sample::new(s.theta.clone(), pca.transform(&s.context)?, s.reward)))
        .collect::<Result<Vec<_>>>()?;
    let model = fit_ridge(&reduced, lambda)?;
    lift_reduced_model(&model, pca)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn recovers_line_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let dir = DVector::from_vec(vec![1.0, 2.0, -2.0]).normalize();
        let offset = DVector::from_vec(vec![3.0, -1.0, 0.5]);
        let pts: Vec<_> = (0..50)
            .map(|_| &offset + &dir * rng.random_range(-5.0..5.0))
            .collect();
        let p = pca_fit(&pts, 1).unwrap();
        let cos = p.components().row(0).transpose().dot(&dir).abs();
        assert!(cos > 1.0 - 1e-8, "{cos}");
    }

    #[test]
    fn isotropic_variance_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let dc = 10;
        let pts: Vec<_> = (0..10_000)
            .map(|_| DVector::from_fn(dc, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let p = pca_fit(&pts, 2).unwrap();
        let frac = p.captured_variance();
        assert!((frac - 0.2).abs() < 0.05 * 0.2 + 0.01, "{frac}");
    }

    #[test]
    fn rows_are_orthonormal_for_both_routes() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for n in [8usize, 40] {
            let pts: Vec<_> = (0..n)
                .map(|_| DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let p = pca_fit(&pts, 5).unwrap();
            let gram = p.components() * p.components().transpose();
            assert!((gram - DMatrix::identity(5, 5)).amax() < 1e-10);
        }
    }

    #[test]
    fn transform_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let pts: Vec<_> = (0..30)
            .map(|_| DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let p = pca_fit(&pts, 3).unwrap();
        assert!(p.transform(p.mean()).unwrap().amax() == 0.0);
        let a = DVector::from_fn(6, |_, _| rng.random_range(-3.0..3.0));
        let b = DVector::from_fn(6, |_, _| rng.random_range(-3.0..3.0));
        let t = |v: &DVector<f64>| p.transform(v).unwrap();
        let affine = t(&(&a + &b)) - t(&a) - t(&b) + t(&DVector::zeros(6));
        assert!(affine.amax() < 1e-12);
        assert!(t(&a).norm() <= (&a - p.mean()).norm() + 1e-10);
        assert!(p.transform(&DVector::zeros(5)).is_err());
    }

    #[test]
    fn rejects_bad_dims() {
        let pts = vec![DVector::zeros(3); 10];
        assert!(pca_fit(&pts, 3).is_err());
        assert!(pca_fit(&pts[..2], 2).is_err());
    }

    #[test]
    fn lifted_model_predicts_like_reduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let pts: Vec<_> = (0..30)
            .map(|_| DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let p = pca_fit(&pts, 2).unwrap();
        let mut m = |r: usize, k: usize| DMatrix::from_fn(r, k, |_, _| rng.random_range(-1.0..1.0));
        let reduced = QuadraticModel::new(
            m(3, 3),
            m(2, 2),
            m(3, 2),
            m(3, 1).column(0).into_owned(),
            m(2, 1).column(0).into_owned(),
            0.7,
        )
        .unwrap();
        let full = lift_reduced_model(&reduced, &p).unwrap();
        for c in &pts[..5] {
            let theta = DVector::from_fn(3, |i, _| i as f64 - 1.0);
            let z = p.transform(c).unwrap();
            let a = reduced.predict(&theta, &z).unwrap();
            let b = full.predict(&theta, c).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        assert!(crate::effective_rank(full.b(), 1e-6) <= 2);
    }
}
