//! Gaussian-process regression with an ARD Matérn-5/2 kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Fixed observation noise on the standardized targets.
pub const NOISE: f64 = 1e-6;

const SQRT5: f64 = 2.236_067_977_499_79;
const LOG_LENGTH: (f64, f64) = (-4.6, 2.3); // lengthscales in [0.01, 10] on the unit cube
const LOG_SIGNAL: (f64, f64) = (-3.0, 3.0);

#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r = a.iter().zip(b).zip(&self.lengthscales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum::<f64>().sqrt();
        self.signal_variance * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * (-SQRT5 * r).exp()
    }

    fn gram(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let n = xs.len();
        DMatrix::from_fn(n, n, |i, j| self.eval(&xs[i], &xs[j]) + if i == j { NOISE } else { 0.0 })
    }

    fn from_log(theta: &[f64]) -> Self {
        let d = theta.len() - 1;
        Kernel { lengthscales: theta[..d].iter().map(|t| t.exp()).collect(), signal_variance: theta[d].exp() }
    }
}

/// Log marginal likelihood of `y` and its gradient with respect to
/// (log lengthscales, log signal variance). `None` if the Gram matrix is
/// not positive definite.
pub fn log_marginal_likelihood(xs: &[Vec<f64>], y: &[f64], kernel: &Kernel) -> Option<(f64, Vec<f64>)> {
    let n = xs.len();
    let d = kernel.lengthscales.len();
    let chol = Cholesky::new(kernel.gram(xs))?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * yv.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // dL/dθ = ½ tr((ααᵀ − K⁻¹) ∂K/∂θ)
    let w = &alpha * alpha.transpose() - chol.inverse();
    let mut grad = vec![0.0; d + 1];
    for i in 0..n {
        for j in 0..n {
            let wij = w[(i, j)];
            let mut r2 = 0.0;
            for k in 0..d {
                r2 += ((xs[i][k] - xs[j][k]) / kernel.lengthscales[k]).powi(2);
            }
            let r = r2.sqrt();
            let e = (-SQRT5 * r).exp();
            let kij = kernel.signal_variance * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * e;
            grad[d] += 0.5 * wij * kij;
            let common = kernel.signal_variance * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e;
            for k in 0..d {
                let s = ((xs[i][k] - xs[j][k]) / kernel.lengthscales[k]).powi(2);
                grad[k] += 0.5 * wij * common * s;
            }
        }
    }
    Some((lml, grad))
}

/// Projected gradient ascent with Adam steps in log-parameter space.
fn ascend(xs: &[Vec<f64>], y: &[f64], mut theta: Vec<f64>) -> Option<(f64, Vec<f64>)> {
    const STEPS: usize = 80;
    const LR: f64 = 0.1;
    let d = theta.len() - 1;
    let clamp = |t: &mut Vec<f64>| {
        for (i, v) in t.iter_mut().enumerate() {
            let (lo, hi) = if i < d { LOG_LENGTH } else { LOG_SIGNAL };
            *v = v.clamp(lo, hi);
        }
    };
    let (mut m, mut v) = (vec![0.0; d + 1], vec![0.0; d + 1]);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for step in 1..=STEPS {
        let Some((lml, grad)) = log_marginal_likelihood(xs, y, &Kernel::from_log(&theta)) else {
            break;
        };
        if best.as_ref().is_none_or(|(b, _)| lml > *b) {
            best = Some((lml, theta.clone()));
        }
        for i in 0..=d {
            m[i] = 0.9 * m[i] + 0.1 * grad[i];
            v[i] = 0.999 * v[i] + 0.001 * grad[i] * grad[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(step as i32));
            let vh = v[i] / (1.0 - 0.999f64.powi(step as i32));
            theta[i] += LR * mh / (vh.sqrt() + 1e-8);
        }
        clamp(&mut theta);
    }
    best
}

/// A GP fitted to standardized targets.
#[derive(Clone, Debug)]
pub struct GaussianProcess {
    xs: Vec<Vec<f64>>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    kernel: Kernel,
    y_mean: f64,
    y_std: f64,
}

impl GaussianProcess {
    /// Fits kernel hyperparameters by maximizing the marginal likelihood
    /// from `restarts` starting points (the first one fixed, the rest drawn
    /// from `rng`). `None` when the data are degenerate: fewer than two
    /// points, constant targets, or no positive-definite Gram matrix.
    pub fn fit(xs: &[Vec<f64>], y: &[f64], restarts: usize, rng: &mut impl Rng) -> Option<Self> {
        let n = xs.len();
        if n < 2 || y.len() != n || y.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let d = xs[0].len();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let y_std = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if !(y_std > 1e-12) {
            return None;
        }
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();

        let mut best: Option<(f64, Vec<f64>)> = None;
        for r in 0..restarts.max(1) {
            let theta: Vec<f64> = if r == 0 {
                let mut t = vec![(0.3f64).ln(); d];
                t.push(0.0);
                t
            } else {
                let mut t: Vec<f64> = (0..d).map(|_| rng.random_range(LOG_LENGTH.0..LOG_LENGTH.1)).collect();
                t.push(rng.random_range(-1.0..1.0));
                t
            };
            if let Some((lml, th)) = ascend(xs, &ys, theta) {
                if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    best = Some((lml, th));
                }
            }
        }
        let kernel = Kernel::from_log(&best?.1);
        Self::with_kernel(xs, &ys, kernel).map(|mut gp| {
            gp.y_mean = y_mean;
            gp.y_std = y_std;
            gp
        })
    }

    /// Conditions on standardized targets with a fixed kernel.
    pub fn with_kernel(xs: &[Vec<f64>], y: &[f64], kernel: Kernel) -> Option<Self> {
        let chol = Cholesky::new(kernel.gram(xs))?;
        let alpha = chol.solve(&DVector::from_column_slice(y));
        Some(GaussianProcess { xs: xs.to_vec(), chol, alpha, kernel, y_mean: 0.0, y_std: 1.0 })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Posterior mean and standard deviation in the original target units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|xi| self.kernel.eval(xi, x)));
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).expect("Cholesky factor has a nonzero diagonal");
        let var = (self.kernel.signal_variance - v.dot(&v)).max(0.0);
        (self.y_mean + self.y_std * mean, self.y_std * var.sqrt())
    }
}

/// Expected improvement over `best` for a maximization problem.
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    let gain = mean - best;
    if std < 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / std;
    let n = Normal::standard();
    (gain * n.cdf(z) + std * n.pdf(z)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data() -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs = vec![vec![0.1, 0.2], vec![0.8, 0.3], vec![0.4, 0.9], vec![0.5, 0.5], vec![0.95, 0.95]];
        let y = xs.iter().map(|x: &Vec<f64>| (3.0 * x[0]).sin() + x[1] * x[1]).collect();
        (xs, y)
    }

    #[test]
    fn matern_closed_form() {
        let k = Kernel { lengthscales: vec![2.0, 0.5], signal_variance: 1.5 };
        // r = sqrt((1/2)² + (0.25/0.5)²) = sqrt(0.5)
        let r = 0.5f64.sqrt();
        let expect = 1.5 * (1.0 + 5f64.sqrt() * r + 5.0 / 3.0 * 0.5) * (-(5f64.sqrt()) * r).exp();
        assert_relative_eq!(k.eval(&[0.0, 0.0], &[1.0, 0.25]), expect, epsilon = 1e-14);
        assert_eq!(k.eval(&[0.3, 0.3], &[0.3, 0.3]), 1.5);
    }

    #[test]
    fn likelihood_gradient_matches_finite_differences() {
        let (xs, y) = data();
        let theta = [0.2f64.ln(), 0.7f64.ln(), 0.3];
        let (_, grad) = log_marginal_likelihood(&xs, &y, &Kernel::from_log(&theta)).unwrap();
        for i in 0..theta.len() {
            let h = 1e-5;
            let mut up = theta;
            up[i] += h;
            let mut dn = theta;
            dn[i] -= h;
            let f = |t: &[f64]| log_marginal_likelihood(&xs, &y, &Kernel::from_log(t)).unwrap().0;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert_relative_eq!(grad[i], fd, epsilon = 1e-5, max_relative = 1e-4);
        }
    }

    #[test]
    fn posterior_interpolates_observations() {
        let (xs, y) = data();
        let gp = GaussianProcess::fit(&xs, &y, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for (x, t) in xs.iter().zip(&y) {
            let (m, s) = gp.predict(x);
            assert!((m - t).abs() < 1e-6, "{m} vs {t}");
            assert!(s < 1e-2, "{s}");
        }
        let (_, far) = gp.predict(&[0.0, 1.0]);
        assert!(far > 1e-2);
    }

    #[test]
    fn fitting_improves_likelihood_over_the_start() {
        let (xs, y) = data();
        let mean = y.iter().sum::<f64>() / 5.0;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
        let ys: Vec<f64> = y.iter().map(|v| (v - mean) / sd).collect();
        let start = Kernel { lengthscales: vec![0.3, 0.3], signal_variance: 1.0 };
        let gp = GaussianProcess::fit(&xs, &y, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let l0 = log_marginal_likelihood(&xs, &ys, &start).unwrap().0;
        let l1 = log_marginal_likelihood(&xs, &ys, gp.kernel()).unwrap().0;
        assert!(l1 >= l0, "{l1} < {l0}");
    }

    #[test]
    fn degenerate_data_is_refused() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(GaussianProcess::fit(&[vec![0.5]], &[1.0], 5, &mut rng).is_none());
        assert!(GaussianProcess::fit(&[vec![0.1], vec![0.9]], &[2.0, 2.0], 5, &mut rng).is_none());
    }

    #[test]
    fn expected_improvement_oracles() {
        // at z = 0: EI = σ φ(0)
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert_relative_eq!(expected_improvement(1.0, 2.0, 1.0), 2.0 * phi0, epsilon = 1e-12);
        assert_eq!(expected_improvement(0.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(3.0, 0.0, 1.0), 2.0);
        // dominated with near certainty
        assert!(expected_improvement(-50.0, 1.0, 0.0) < 1e-300);
        for (m, s) in [(-3.0, 0.1), (0.0, 5.0), (2.0, 1e-9), (-1e3, 1e3)] {
            assert!(expected_improvement(m, s, 0.5) >= 0.0);
        }
    }
}
