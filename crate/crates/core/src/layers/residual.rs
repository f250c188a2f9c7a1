//! Residual monotone activation `s + alpha psi(s)` with a contractive inverse.

use super::ScalarBijection;
use crate::error::{Error, Result};

pub const DEFAULT_UNITS: usize = 8;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_LIPSCHITZ_CAP: f64 = 0.97;

const INVERSE_TOL: f64 = 1e-12;

/// `psi(s) = sum_j v_j tanh(w_j s + c_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualActivation {
    pub alpha: f64,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub c: Vec<f64>,
    /// Target `rho < 1` for `alpha * L`.
    pub lipschitz_cap: f64,
}

impl ResidualActivation {
    /// Identity (`v = 0`) with the given inner weights and biases.
    pub fn identity(alpha: f64, w: Vec<f64>, c: Vec<f64>, lipschitz_cap: f64) -> Result<Self> {
        let act = ResidualActivation {
            alpha,
            v: vec![0.0; w.len()],
            w,
            c,
            lipschitz_cap,
        };
        act.validate()?;
        Ok(act)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha {} must be positive", self.alpha)));
        }
        if !(self.lipschitz_cap > 0.0 && self.lipschitz_cap < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "Lipschitz cap {} must lie in (0, 1)",
                self.lipschitz_cap
            )));
        }
        let m = self.v.len();
        if m == 0 || self.w.len() != m || self.c.len() != m {
            return Err(Error::InvalidParameter("psi weight vectors must share a nonzero length".into()));
        }
        let finite = self.v.iter().chain(&self.w).chain(&self.c).all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite residual parameter".into()));
        }
        Ok(())
    }

    pub fn units(&self) -> usize {
        self.v.len()
    }

    /// `v`, then `w`, then `c`.
    pub fn num_params(&self) -> usize {
        3 * self.v.len()
    }

    pub fn params(&self) -> Vec<f64> {
        self.v.iter().chain(&self.w).chain(&self.c).copied().collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let m = self.v.len();
        self.v.copy_from_slice(&p[..m]);
        self.w.copy_from_slice(&p[m..2 * m]);
        self.c.copy_from_slice(&p[2 * m..3 * m]);
    }

    /// Upper bound `sum |v_j||w_j|` on the Lipschitz constant of `psi`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.v.iter().zip(&self.w).map(|(v, w)| v.abs() * w.abs()).sum()
    }

    /// Rescales `v` so that `alpha * L <= rho`.
    pub fn spectral_normalize(&mut self) {
        let al = self.alpha * self.lipschitz_bound();
        if al > self.lipschitz_cap {
            let scale = self.lipschitz_cap / al;
            for v in &mut self.v {
                *v *= scale;
            }
        }
    }

    pub fn psi(&self, s: f64) -> f64 {
        self.v
            .iter()
            .zip(&self.w)
            .zip(&self.c)
            .map(|((v, w), c)| v * (w * s + c).tanh())
            .sum()
    }

    /// `alpha L`, the contraction factor of the inverse iteration.
    pub fn contraction(&self) -> f64 {
        self.alpha * self.lipschitz_bound()
    }

    /// Fixed-point iterates `s_{k+1} = y - alpha psi(s_k)` from `s_0 = y`,
    /// stopping once consecutive iterates differ by at most the tolerance.
    pub fn inverse_iterates(&self, y: f64) -> Result<Vec<f64>> {
        let mut trace = vec![y];
        self.run_inverse(y, |s| trace.push(s))?;
        Ok(trace)
    }

    fn run_inverse(&self, y: f64, mut visit: impl FnMut(f64)) -> Result<f64> {
        let tol = INVERSE_TOL * y.abs().max(1.0);
        let mut s = y;
        let mut next = y - self.alpha * self.psi(s);
        visit(next);
        let first = (next - s).abs();
        if first > tol {
            // |s_{k+1} - s_k| <= rho^k |s_1 - s_0| bounds the iterations needed.
            let rho = self.contraction();
            let cap = if rho <= 0.0 {
                1
            } else if rho >= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "alpha * L = {rho} is not a contraction"
                )));
            } else {
                ((tol / first).ln() / rho.ln()).ceil() as usize + 4
            };
            let mut converged = false;
            for _ in 0..cap {
                s = next;
                next = y - self.alpha * self.psi(s);
                visit(next);
                if (next - s).abs() <= tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::InverseDidNotConverge {
                    target: y,
                    iterations: cap + 1,
                });
            }
        }
        // The stopping rule leaves up to rho / (1 - rho) * tol of error;
        // Newton steps (phi' >= 1 - alpha L > 0) take it to rounding level.
        for _ in 0..2 {
            next -= (self.eval(next) - y) / self.derivative(next);
        }
        Ok(next)
    }
}

impl ScalarBijection for ResidualActivation {
    fn eval(&self, s: f64) -> f64 {
        s + self.alpha * self.psi(s)
    }

    fn derivative(&self, s: f64) -> f64 {
        let dpsi: f64 = self
            .v
            .iter()
            .zip(&self.w)
            .zip(&self.c)
            .map(|((v, w), c)| {
                let t = (w * s + c).tanh();
                v * w * (1.0 - t * t)
            })
            .sum();
        1.0 + self.alpha * dpsi
    }

    fn invert(&self, y: f64) -> Result<f64> {
        self.run_inverse(y, |_| {})
    }

    fn num_params(&self) -> usize {
        3 * self.v.len()
    }

    fn accumulate_param_grad(&self, s: f64, coeff: f64, grad: &mut [f64]) {
        let m = self.v.len();
        let a = coeff * self.alpha;
        for j in 0..m {
            let t = (self.w[j] * s + self.c[j]).tanh();
            let sech2 = 1.0 - t * t;
            grad[j] += a * t;
            grad[m + j] += a * self.v[j] * s * sech2;
            grad[2 * m + j] += a * self.v[j] * sech2;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_residual(rng: &mut impl Rng) -> ResidualActivation {
        let m = rng.random_range(1..=8);
        let mut act = ResidualActivation {
            alpha: rng.random_range(0.1..1.0),
            v: (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
            w: (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
            c: (0..m).map(|_| rng.random_range(-1.0..1.0)).collect(),
            lipschitz_cap: DEFAULT_LIPSCHITZ_CAP,
        };
        act.spectral_normalize();
        act
    }

    fn single_tanh() -> ResidualActivation {
        ResidualActivation {
            alpha: 0.5,
            v: vec![1.0],
            w: vec![1.0],
            c: vec![0.0],
            lipschitz_cap: DEFAULT_LIPSCHITZ_CAP,
        }
    }

    #[test]
    fn zero_psi_is_identity() {
        let act = ResidualActivation::identity(0.5, vec![1.0, -2.0], vec![0.1, 0.2], 0.97).unwrap();
        for &s in &[-3.0, 0.0, 0.4, 12.0] {
            assert_eq!(act.eval(s), s);
            assert_eq!(act.inverse_iterates(s).unwrap().len(), 2);
            assert_eq!(act.invert(s).unwrap(), s);
        }
    }

    #[test]
    fn single_tanh_values() {
        let act = single_tanh();
        assert_eq!(act.eval(0.0), 0.0);
        // Oracle: bisection on s + 0.5 tanh(s) = 1.
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid + 0.5 * mid.tanh() < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = act.invert(1.0).unwrap();
        assert!((s - 0.5 * (lo + hi)).abs() < 1e-11);
        assert!((s - 0.699).abs() < 1e-3);
        let direct = 0.699 + 0.5 * 0.699f64.tanh();
        assert_eq!(act.eval(0.699), direct);
        assert!((direct - 1.0007).abs() < 1e-3);
    }

    #[test]
    fn spectral_normalize_examples() {
        let mut act = single_tanh();
        let before = act.clone();
        act.spectral_normalize();
        assert_eq!(act, before);
        act.v = vec![4.0];
        act.spectral_normalize();
        assert!((act.lipschitz_bound() - act.lipschitz_cap / act.alpha).abs() < 1e-15);
    }

    #[test]
    fn monotone_after_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let act = random_residual(&mut rng);
            assert!(act.alpha * act.lipschitz_bound() <= act.lipschitz_cap + 1e-12);
            let s = rng.random_range(-5.0..5.0);
            assert!(act.derivative(s) >= 1.0 - act.lipschitz_cap - 1e-12);
            assert!(act.eval(s) < act.eval(s + 1e-3));
        }
    }

    #[test]
    fn fixed_point_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..1000 {
            let act = random_residual(&mut rng);
            let rho = act.lipschitz_cap;
            let y = rng.random_range(-5.0..5.0);
            let trace = act.inverse_iterates(y).unwrap();
            let s_star = *trace.last().unwrap();
            assert!((act.eval(s_star) - y).abs() <= 1e-11 * y.abs().max(1.0));
            let e0 = (trace[0] - s_star).abs();
            for (k, s) in trace.iter().enumerate() {
                let ek = (s - s_star).abs();
                assert!(ek <= rho.powi(k as i32) * e0 + 1e-11);
            }
        }
    }

    #[test]
    fn non_contraction_is_reported() {
        let mut act = single_tanh();
        act.v = vec![3.0];
        assert!(act.invert(1.0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = 1e-6;
        for _ in 0..200 {
            let act = random_residual(&mut rng);
            let s = rng.random_range(-3.0..3.0);
            let mut grad = vec![0.0; act.num_params()];
            act.accumulate_param_grad(s, 1.0, &mut grad);
            let base = act.params();
            for k in 0..base.len() {
                let eval = |d: f64| {
                    let mut a = act.clone();
                    let mut p = base.clone();
                    p[k] += d;
                    a.set_params(&p);
                    a.eval(s)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!((fd - grad[k]).abs() <= 1e-5 * fd.abs().max(1e-2));
            }
            // Inverse direction: ds/dy = 1 / phi'(s).
            let y = act.eval(s);
            let fd = (act.invert(y + h).unwrap() - act.invert(y - h).unwrap()) / (2.0 * h);
            assert!((fd - 1.0 / act.derivative(s)).abs() <= 1e-5 * fd.abs());
        }
    }
}
