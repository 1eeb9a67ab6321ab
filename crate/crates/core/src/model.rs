//! Quadratic reward surrogate.
//!
//! The surrogate is
//! `R̂(θ, c) = θᵀAθ + cᵀBc + 2θᵀDc + θᵀr1 + cᵀr2 + r0`
//! with symmetric `A` and `B`. Equivalently `R̂ = xᵀHx` for `x = [θ; c; 1]`
//! and the packed symmetric matrix
//!
//! ```text
//!     | A      D      r1/2 |
//! H = | Dᵀ     B      r2/2 |
//!     | r1ᵀ/2  r2ᵀ/2  r0   |
//! ```

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, check_dim};
use crate::{Error, Result};

/// Relative threshold used when reporting the rank of a learned matrix.
pub const DEFAULT_RANK_TOL: f64 = 1e-6;

/// Eigenvalue ceiling `-δ` applied to `A` after fitting.
pub const DEFAULT_NSD_FLOOR: f64 = 1e-9;

/// Relative asymmetry above which a packed matrix is rejected.
pub const PACKED_SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    d: DMatrix<f64>,
    r1: DVector<f64>,
    r2: DVector<f64>,
    r0: f64,
}

impl QuadraticModel {
    /// Builds a model from its blocks. `A` and `B` are replaced by their
    /// symmetric parts.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        d: DMatrix<f64>,
        r1: DVector<f64>,
        r2: DVector<f64>,
        r0: f64,
    ) -> Result<Self> {
        let dt = r1.len();
        let dc = r2.len();
        check_dim("A rows", dt, a.nrows())?;
        check_dim("A cols", dt, a.ncols())?;
        check_dim("B rows", dc, b.nrows())?;
        check_dim("B cols", dc, b.ncols())?;
        check_dim("D rows", dt, d.nrows())?;
        check_dim("D cols", dc, d.ncols())?;
        let finite = linalg::all_finite(a.iter())
            && linalg::all_finite(b.iter())
            && linalg::all_finite(d.iter())
            && linalg::all_finite(r1.iter())
            && linalg::all_finite(r2.iter())
            && r0.is_finite();
        if !finite {
            return Err(Error::NonFinite("quadratic model".into()));
        }
        Ok(Self {
            a: linalg::symmetrize(&a),
            b: linalg::symmetrize(&b),
            d,
            r1,
            r2,
            r0,
        })
    }

    pub fn zeros(dim_theta: usize, dim_context: usize) -> Self {
        Self {
            a: DMatrix::zeros(dim_theta, dim_theta),
            b: DMatrix::zeros(dim_context, dim_context),
            d: DMatrix::zeros(dim_theta, dim_context),
            r1: DVector::zeros(dim_theta),
            r2: DVector::zeros(dim_context),
            r0: 0.0,
        }
    }

    pub fn dim_theta(&self) -> usize {
        self.r1.len()
    }

    pub fn dim_context(&self) -> usize {
        self.r2.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn r1(&self) -> &DVector<f64> {
        &self.r1
    }

    pub fn r2(&self) -> &DVector<f64> {
        &self.r2
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    /// Same model with a different constant term.
    pub fn with_r0(mut self, r0: f64) -> Self {
        self.r0 = r0;
        self
    }

    pub fn predict(&self, theta: &DVector<f64>, context: &DVector<f64>) -> Result<f64> {
        check_dim("theta", self.dim_theta(), theta.len())?;
        check_dim("context", self.dim_context(), context.len())?;
        Ok(self.predict_unchecked(theta, context))
    }

    pub(crate) fn predict_unchecked(&self, theta: &DVector<f64>, context: &DVector<f64>) -> f64 {
        let dc = &self.d * context;
        theta.dot(&(&self.a * theta))
            + context.dot(&(&self.b * context))
            + 2.0 * theta.dot(&dc)
            + theta.dot(&self.r1)
            + context.dot(&self.r2)
            + self.r0
    }

    pub fn pack(&self) -> PackedModelMatrix {
        pack_h(self)
    }
}

/// Packed symmetric form `H` of a [`QuadraticModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct PackedModelMatrix {
    h: DMatrix<f64>,
}

impl PackedModelMatrix {
    /// Wraps a matrix, rejecting it if it is not square or visibly asymmetric.
    /// The stored matrix is the exact symmetric part of the input.
    pub fn from_matrix(h: DMatrix<f64>) -> Result<Self> {
        if !h.is_square() {
            return Err(Error::DimensionMismatch {
                what: "packed matrix columns",
                expected: h.nrows(),
                got: h.ncols(),
            });
        }
        if !linalg::all_finite(h.iter()) {
            return Err(Error::NonFinite("packed matrix".into()));
        }
        if !linalg::is_symmetric(&h, PACKED_SYMMETRY_TOL) {
            return Err(Error::NotSymmetric {
                what: "packed model matrix",
                asymmetry: linalg::max_asymmetry(&h),
            });
        }
        Ok(Self {
            h: linalg::symmetrize(&h),
        })
    }

    pub fn zeros(dim_theta: usize, dim_context: usize) -> Self {
        let n = dim_theta + dim_context + 1;
        Self {
            h: DMatrix::zeros(n, n),
        }
    }

    pub(crate) fn from_symmetric_unchecked(h: DMatrix<f64>) -> Self {
        Self { h }
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// `xᵀ H x` with `x = [θ; c; 1]`.
    pub fn quad_form(&self, theta: &DVector<f64>, context: &DVector<f64>) -> Result<f64> {
        check_dim(
            "theta and context",
            self.dim() - 1,
            theta.len() + context.len(),
        )?;
        let x = DVector::from_iterator(
            self.dim(),
            theta.iter().chain(context.iter()).copied().chain([1.0]),
        );
        Ok(x.dot(&(&self.h * &x)))
    }

    pub fn unpack(&self, dim_theta: usize, dim_context: usize) -> Result<QuadraticModel> {
        check_dim("packed matrix size", dim_theta + dim_context + 1, self.dim())?;
        let (t, c) = (dim_theta, dim_context);
        let h = &self.h;
        let last = t + c;
        Ok(QuadraticModel {
            a: h.view((0, 0), (t, t)).into_owned(),
            b: h.view((t, t), (c, c)).into_owned(),
            d: h.view((0, t), (t, c)).into_owned(),
            r1: h.view((0, last), (t, 1)).column(0).into_owned() * 2.0,
            r2: h.view((t, last), (c, 1)).column(0).into_owned() * 2.0,
            r0: h[(last, last)],
        })
    }
}

pub fn pack_h(model: &QuadraticModel) -> PackedModelMatrix {
    let t = model.dim_theta();
    let c = model.dim_context();
    let n = t + c + 1;
    let last = t + c;
    let mut h = DMatrix::zeros(n, n);
    h.view_mut((0, 0), (t, t)).copy_from(&model.a);
    h.view_mut((t, t), (c, c)).copy_from(&model.b);
    h.view_mut((0, t), (t, c)).copy_from(&model.d);
    h.view_mut((t, 0), (c, t)).copy_from(&model.d.transpose());
    for i in 0..t {
        h[(i, last)] = 0.5 * model.r1[i];
        h[(last, i)] = 0.5 * model.r1[i];
    }
    for j in 0..c {
        h[(t + j, last)] = 0.5 * model.r2[j];
        h[(last, t + j)] = 0.5 * model.r2[j];
    }
    h[(last, last)] = model.r0;
    PackedModelMatrix { h }
}

/// Inverse of [`pack_h`] for a raw matrix; asymmetric input is an error.
pub fn unpack_h(h: &DMatrix<f64>, dim_theta: usize, dim_context: usize) -> Result<QuadraticModel> {
    PackedModelMatrix::from_matrix(h.clone())?.unpack(dim_theta, dim_context)
}

/// Number of singular values above `rel_tol · σ_max`. A zero matrix has rank 0.
pub fn effective_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = if m.is_square() && linalg::max_asymmetry(m) == 0.0 {
        m.clone().symmetric_eigenvalues().map(f64::abs)
    } else {
        m.clone().singular_values()
    };
    let smax = sv.amax();
    if smax == 0.0 || !smax.is_finite() {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_model(rng: &mut impl Rng, t: usize, c: usize) -> QuadraticModel {
        let mut m = |r: usize, k: usize| DMatrix::from_fn(r, k, |_, _| rng.random_range(-1.0..1.0));
        let a = m(t, t);
        let b = m(c, c);
        let d = m(t, c);
        let r1 = m(t, 1).column(0).into_owned();
        let r2 = m(c, 1).column(0).into_owned();
        QuadraticModel::new(a, b, d, r1, r2, 0.37).unwrap()
    }

    #[test]
    fn predict_at_origin_is_r0() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(&mut rng, 3, 2);
        let v = m.predict(&DVector::zeros(3), &DVector::zeros(2)).unwrap();
        assert_eq!(v, m.r0());
    }

    #[test]
    fn predict_scalar_case() {
        let m = QuadraticModel::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DVector::zeros(1),
            5.0,
        )
        .unwrap();
        let v = m
            .predict(&DVector::from_element(1, 2.0), &DVector::zeros(1))
            .unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn predict_rejects_wrong_dims() {
        let m = QuadraticModel::zeros(2, 3);
        let err = m.predict(&DVector::zeros(3), &DVector::zeros(3)).unwrap_err();
        assert!(err.to_string().contains("theta"), "{err}");
        let err = m.predict(&DVector::zeros(2), &DVector::zeros(4)).unwrap_err();
        assert!(err.to_string().contains("context"), "{err}");
    }

    #[test]
    fn constructor_symmetrizes() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let m = QuadraticModel::new(
            a,
            DMatrix::zeros(1, 1),
            DMatrix::zeros(2, 1),
            DVector::zeros(2),
            DVector::zeros(1),
            0.0,
        )
        .unwrap();
        assert_eq!(m.a()[(0, 1)], 1.0);
        assert_eq!(m.a()[(1, 0)], 1.0);
    }

    #[test]
    fn pack_zero_and_constant_models() {
        let z = pack_h(&QuadraticModel::zeros(2, 3));
        assert_eq!(z.dim(), 6);
        assert!(z.as_matrix().iter().all(|&v| v == 0.0));

        let m = QuadraticModel::zeros(2, 3).with_r0(3.0);
        let h = pack_h(&m);
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i == 5 && j == 5 { 3.0 } else { 0.0 };
                assert_eq!(h.as_matrix()[(i, j)], expect);
            }
        }
    }

    #[test]
    fn unpack_identity() {
        let m = unpack_h(&DMatrix::identity(3, 3), 1, 1).unwrap();
        assert_eq!(m.a()[(0, 0)], 1.0);
        assert_eq!(m.b()[(0, 0)], 1.0);
        assert_eq!(m.d()[(0, 0)], 0.0);
        assert_eq!(m.r1()[0], 0.0);
        assert_eq!(m.r2()[0], 0.0);
        assert_eq!(m.r0(), 1.0);
    }

    #[test]
    fn unpack_rejects_asymmetric() {
        let mut h = DMatrix::identity(3, 3);
        h[(0, 1)] = 1e-3;
        assert!(matches!(
            unpack_h(&h, 1, 1),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(effective_rank(&DMatrix::zeros(4, 4), DEFAULT_RANK_TOL), 0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 3.0, 1e-12]));
        assert_eq!(effective_rank(&d, 1e-6), 2);
        let rect = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert_eq!(effective_rank(&rect, 1e-6), 1);
    }

    proptest! {
        #[test]
        fn packed_form_matches_predict(seed in any::<u64>(), t in 1usize..5, c in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_model(&mut rng, t, c);
            let theta = DVector::from_fn(t, |_, _| rng.random_range(-3.0..3.0));
            let ctx = DVector::from_fn(c, |_, _| rng.random_range(-3.0..3.0));
            let direct = m.predict(&theta, &ctx).unwrap();
            let packed = pack_h(&m).quad_form(&theta, &ctx).unwrap();
            prop_assert!((direct - packed).abs() <= 1e-12 * direct.abs().max(1.0));
        }

        #[test]
        fn pack_unpack_round_trip(seed in any::<u64>(), t in 1usize..5, c in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_model(&mut rng, t, c);
            let back = unpack_h(pack_h(&m).as_matrix(), t, c).unwrap();
            prop_assert_eq!(back.a(), m.a());
            prop_assert_eq!(back.b(), m.b());
            prop_assert_eq!(back.d(), m.d());
            prop_assert_eq!(back.r1(), m.r1());
            prop_assert_eq!(back.r2(), m.r2());
            prop_assert_eq!(back.r0(), m.r0());
        }
    }
}
