//! Contextual REPS: reweight samples by `exp((R − vᵀφ(c)) / η)` under a KL
//! bound, then refit the Gaussian by weighted maximum likelihood.

use nalgebra::{DMatrix, DVector};

use crate::fitting::{weighted_ridge_multi, PcaProjection};
use crate::linalg::check_dim;
use crate::{Error, GaussianLinearPolicy, Result, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct CrepsConfig {
    pub epsilon: f64,
    /// Ridge weight of the weighted regression for `b` and `K`.
    pub ridge: f64,
    /// Added to the diagonal of the fitted covariance.
    pub jitter: f64,
    /// Minimum effective sample size `(Σw)² / Σw²`.
    pub min_ess: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for CrepsConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.9,
            ridge: 1e-6,
            jitter: 1e-6,
            min_ess: 3.0,
            max_iters: 500,
            grad_tol: 1e-9,
        }
    }
}

impl CrepsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", "must be finite and > 0"));
        }
        if !(self.ridge >= 0.0 && self.jitter > 0.0) {
            return Err(Error::invalid("jitter", "ridge must be >= 0 and jitter > 0"));
        }
        if !(self.min_ess >= 1.0) {
            return Err(Error::invalid("min_ess", "must be >= 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CrepsUpdate {
    pub policy: GaussianLinearPolicy,
    pub eta: f64,
    pub v: DVector<f64>,
    pub dual_value: f64,
    /// Normalized sample weights.
    pub weights: DVector<f64>,
    pub ess: f64,
    /// `KL(w ‖ uniform)` of the normalized weights.
    pub weight_kl: f64,
}

/// `φ(c) = [1; z]` with `z` the PCA projection of `c` (or `c` itself).
pub fn features(context: &DVector<f64>, pca: Option<&PcaProjection>) -> Result<DVector<f64>> {
    let z = match pca {
        Some(p) => p.transform(context)?,
        None => context.clone(),
    };
    let mut phi = DVector::zeros(z.len() + 1);
    phi[0] = 1.0;
    phi.rows_mut(1, z.len()).copy_from(&z);
    Ok(phi)
}

/// `g(η, v) = ηε + η log((1/N) Σ exp((Rₙ − vᵀφₙ)/η)) + mean(vᵀφₙ)`, with
/// `φₙ` the rows of `phi`.
pub fn creps_dual(eta: f64, v: &DVector<f64>, phi: &DMatrix<f64>, rewards: &DVector<f64>, epsilon: f64) -> f64 {
    dual_and_gradient(eta, v, phi, rewards, epsilon).0
}

/// Dual value, `∂g/∂η` and `∂g/∂v`.
fn dual_and_gradient(
    eta: f64,
    v: &DVector<f64>,
    phi: &DMatrix<f64>,
    rewards: &DVector<f64>,
    epsilon: f64,
) -> (f64, f64, DVector<f64>) {
    let n = rewards.len() as f64;
    let baseline = phi * v;
    let adv = rewards - &baseline;
    let scaled = &adv / eta;
    let top = scaled.max();
    let exps = scaled.map(|s| (s - top).exp());
    let total = exps.sum();
    let lme = top + (total / n).ln();
    let g = eta * epsilon + eta * lme + baseline.sum() / n;
    let p = exps / total;
    let mean_phi = phi.row_sum().transpose() / n;
    let grad_v = mean_phi - phi.tr_mul(&p);
    let grad_eta = epsilon + lme - p.dot(&scaled);
    (g, grad_eta, grad_v)
}

/// Minimizes the dual and refits the policy by weighted maximum likelihood.
pub fn creps_update(
    samples: &[Sample],
    pca: Option<&PcaProjection>,
    cfg: &CrepsConfig,
) -> Result<CrepsUpdate> {
    cfg.validate()?;
    let first = samples.first().ok_or(Error::Empty("samples"))?;
    let dt = first.theta.len();
    let dc = first.context.len();
    let phis = samples
        .iter()
        .map(|s| {
            check_dim("sample theta", dt, s.theta.len())?;
            check_dim("sample context", dc, s.context.len())?;
            if !s.is_finite() {
                return Err(Error::NonFinite("sample".into()));
            }
            features(&s.context, pca)
        })
        .collect::<Result<Vec<_>>>()?;
    let p = phis[0].len();
    if samples.len() < dt + p + 1 {
        return Err(Error::invalid(
            "samples",
            format!("need at least {} samples, got {}", dt + p + 1, samples.len()),
        ));
    }
    let n = samples.len();
    let phi = DMatrix::from_fn(n, p, |i, j| phis[i][j]);
    let rewards = DVector::from_fn(n, |i, _| samples[i].reward);

    // Rewards are shifted and scaled before optimizing; the weights are
    // invariant to both once η and v are mapped back.
    // Everything below depends on the rewards only through `r - top`, so a
    // shift that keeps those differences exact leaves the weights bit-identical.
    let top = rewards.max();
    let gaps = rewards.map(|r| r - top);
    let mean = gaps.mean();
    let spread = (gaps.map(|g| (g - mean).powi(2)).sum() / n as f64).sqrt();
    let scale = if spread > 0.0 { spread } else { 1.0 };
    let normed = gaps / scale;

    // Constant rewards carry no preference: the dual's infimum is at η → 0,
    // v = (R, 0, …) with uniform weights.
    let (weights, eta_n, v_n) = if spread > 0.0 {
        let objective = |x: &DVector<f64>| {
            let eta = x[0].exp();
            let v = x.rows(1, p).into_owned();
            let (g, ge, gv) = dual_and_gradient(eta, &v, &phi, &normed, cfg.epsilon);
            let mut grad = DVector::zeros(p + 1);
            grad[0] = ge * eta;
            grad.rows_mut(1, p).copy_from(&gv);
            (g, grad)
        };
        let x = bfgs(objective, DVector::zeros(p + 1), cfg.max_iters, cfg.grad_tol);
        let eta_n = x[0].exp();
        let v_n = x.rows(1, p).into_owned();
        let scaled = (&normed - &phi * &v_n) / eta_n;
        let top_s = scaled.max();
        let raw = scaled.map(|s| (s - top_s).exp());
        (&raw / raw.sum(), eta_n, v_n)
    } else {
        (DVector::from_element(n, 1.0 / n as f64), 0.0, DVector::zeros(p))
    };
    let ess = 1.0 / weights.norm_squared();
    if !(ess >= cfg.min_ess) {
        return Err(Error::WeightDegeneracy {
            ess,
            floor: cfg.min_ess,
        });
    }
    let weight_kl = weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| w * (w * n as f64).ln())
        .sum();

    let theta = DMatrix::from_fn(n, dt, |i, j| samples[i].theta[j]);
    let coef = weighted_ridge_multi(&phi, &theta, &weights, cfg.ridge)?;
    let resid = &theta - &phi * &coef;
    let mut cov = DMatrix::identity(dt, dt) * cfg.jitter;
    for (i, row) in resid.row_iter().enumerate() {
        cov += row.transpose() * row * weights[i];
    }
    crate::linalg::mirror_upper(&mut cov);

    // coef is p × dθ: row 0 is the bias, rows 1.. the gain on φ's context part.
    let b_z = coef.row(0).transpose();
    let k_z = coef.rows(1, p - 1).transpose();
    let (b, k) = match pca {
        Some(proj) => {
            let k = &k_z * proj.components();
            let b = b_z - &k * proj.mean();
            (b, k)
        }
        None => (b_z, k_z),
    };
    let policy = GaussianLinearPolicy::new(b, k, cov)?;
    let v = &v_n * scale;
    let mut v_out = v;
    v_out[0] += top;
    let eta = eta_n * scale;
    let dual_value = if eta > 0.0 {
        creps_dual(eta, &v_out, &phi, &rewards, cfg.epsilon)
    } else {
        top
    };
    Ok(CrepsUpdate {
        policy,
        eta,
        v: v_out,
        dual_value,
        weights,
        ess,
        weight_kl,
    })
}

/// Plain BFGS with Armijo backtracking.
fn bfgs<F>(mut f: F, x0: DVector<f64>, max_iters: usize, grad_tol: f64) -> DVector<f64>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut gx) = f(&x);
    let mut h = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_iters {
        if gx.amax() < grad_tol {
            break;
        }
        let mut d = -(&h * &gx);
        let mut slope = gx.dot(&d);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            d = -gx.clone();
            slope = gx.dot(&d);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &d * alpha;
            let (fc, gc) = f(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * alpha * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            break;
        };
        let s = &xn - &x;
        let y = &gn - &gx;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * (1.0 + rho * yhy))
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        let done = (fx - fnew).abs() <= 1e-15 * fx.abs().max(1.0) && gn.amax() < grad_tol.sqrt();
        x = xn;
        fx = fnew;
        gx = gn;
        if done {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(rng: &mut impl Rng, n: usize, dt: usize, dc: usize) -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let t = DVector::from_fn(dt, |_, _| rng.random_range(-1.0..1.0));
                let c = DVector::from_fn(dc, |_, _| rng.random_range(-1.0..1.0));
                let target: DVector<f64> = DVector::from_fn(dt, |i, _| if i < dc { c[i] } else { 0.0 });
                let r: f64 = -(&t - target).norm_squared();
                Sample::new(t, c, r)
            })
            .collect()
    }

    fn matrices(samples: &[Sample]) -> (DMatrix<f64>, DVector<f64>) {
        let phi = DMatrix::from_fn(samples.len(), samples[0].context.len() + 1, |i, j| {
            if j == 0 { 1.0 } else { samples[i].context[j - 1] }
        });
        let r = DVector::from_fn(samples.len(), |i, _| samples[i].reward);
        (phi, r)
    }

    #[test]
    fn constant_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let mut s = data(&mut rng, 20, 2, 2);
        for x in &mut s {
            x.reward = -3.5;
        }
        let (phi, r) = matrices(&s);
        let g = creps_dual(2.0, &DVector::zeros(3), &phi, &r, 0.4);
        assert!((g - (0.8 - 3.5)).abs() < 1e-12);
    }

    #[test]
    fn large_eta_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let s = data(&mut rng, 50, 2, 2);
        let (phi, r) = matrices(&s);
        let v = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let eta = 1e6;
        let g = creps_dual(eta, &v, &phi, &r, 0.5);
        let want = eta * 0.5 + r.mean();
        assert!((g - want).abs() < 1e-5, "{g} vs {want}");
    }

    #[test]
    fn stable_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let s = data(&mut rng, 30, 2, 3);
        let (phi, r) = matrices(&s);
        let v = DVector::from_vec(vec![0.1, 0.2, -0.3, 0.05]);
        let eta = 0.7;
        let base = &phi * &v;
        let naive = eta * 0.3
            + eta * ((0..30).map(|i| ((r[i] - base[i]) / eta).exp()).sum::<f64>() / 30.0).ln()
            + base.mean();
        let g = creps_dual(eta, &v, &phi, &r, 0.3);
        assert!((g - naive).abs() < 1e-10 * naive.abs().max(1.0));
    }

    #[test]
    fn uniform_rewards_give_plain_ml_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(84);
        let mut s = data(&mut rng, 40, 2, 2);
        for x in &mut s {
            x.reward = 1.0;
        }
        let up = creps_update(&s, None, &CrepsConfig::default()).unwrap();
        assert!(up.weights.iter().all(|w| (w - 1.0 / 40.0).abs() < 1e-12));
        let mean_theta = s.iter().fold(DVector::zeros(2), |a, x| a + &x.theta) / 40.0;
        let mean_c = s.iter().fold(DVector::zeros(2), |a, x| a + &x.context) / 40.0;
        let at_mean = up.policy.mean_at(&mean_c).unwrap();
        assert!((at_mean - mean_theta).amax() < 1e-6);
    }

    #[test]
    fn shift_invariance_of_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(85);
        let s = data(&mut rng, 60, 2, 3);
        let shifted: Vec<_> = s.iter().map(|x| Sample::new(x.theta.clone(), x.context.clone(), x.reward + 1e3)).collect();
        let a = creps_update(&s, None, &CrepsConfig::default()).unwrap();
        let b = creps_update(&shifted, None, &CrepsConfig::default()).unwrap();
        assert!((a.weights - b.weights).amax() < 1e-9);
    }

    #[test]
    fn kl_of_weights_hits_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(86);
        let s = data(&mut rng, 1000, 3, 4);
        let cfg = CrepsConfig::default();
        let up = creps_update(&s, None, &cfg).unwrap();
        assert!((up.weight_kl - cfg.epsilon).abs() < 0.1 * cfg.epsilon, "{}", up.weight_kl);
    }

    #[test]
    fn dominating_sample_sets_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(87);
        let mut s = data(&mut rng, 30, 2, 2);
        s[7].reward = 1e6;
        let cfg = CrepsConfig {
            epsilon: 50.0,
            min_ess: 1.0,
            ..CrepsConfig::default()
        };
        let up = creps_update(&s, None, &cfg).unwrap();
        let m = up.policy.mean_at(&s[7].context).unwrap();
        assert!((m - &s[7].theta).amax() < 1e-3);
        let strict = CrepsConfig {
            epsilon: 50.0,
            ..CrepsConfig::default()
        };
        assert!(matches!(creps_update(&s, None, &strict), Err(Error::WeightDegeneracy { .. })));
    }

    #[test]
    fn dual_is_convex_along_lines() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let s = data(&mut rng, 40, 2, 2);
        let (phi, r) = matrices(&s);
        for _ in 0..30 {
            let x0 = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let d = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            // The dual is convex in (η, v); probe it on straight lines in that space.
            let gl = |t: f64| {
                let eta = 1.0 + 0.5 * t;
                let v = x0.rows(1, 3) + d.rows(1, 3) * t;
                creps_dual(eta, &v.into_owned(), &phi, &r, 0.5)
            };
            let h = 1e-2;
            for t in [-0.5, 0.0, 0.5] {
                let second = gl(t + h) - 2.0 * gl(t) + gl(t - h);
                assert!(second >= -1e-10, "{second}");
            }
        }
    }
}
