//! Smooth monotone piecewise-linear activation.
//!
//! Inputs are mapped onto the unit window `v = (s - mu + S) / (2S)`, where the
//! activation is `G(v) = a_1 v + sum_i (a_{i+1} - a_i) relu_eps(v - i/p)` with
//! segment slopes `a_i = p softmax(-beta)_i` (mean slope one, so `G(1) = 1`).
//! The output is `mu - S + 2S G(v)`; outside the window it extends linearly
//! with the boundary slopes.

use super::ScalarBijection;
use crate::error::{Error, Result};

/// Default segment count.
pub const DEFAULT_SEGMENTS: usize = 16;
/// Default corner half-width, in unit-window coordinates.
pub const DEFAULT_EPSILON: f64 = 1e-2;
/// Largest ratio between adjacent segment slopes.
///
/// The Hermite-blended corner has `relu_eps'` ranging over
/// `[-(sqrt2 - 1)/2, 1 + (sqrt2 - 1)/2]`, so corners stay increasing only for
/// ratios below `3 + 2 sqrt2`.
pub const MAX_SLOPE_RATIO: f64 = 4.0;
/// Bounds on `ln S`.
pub const LOG_HALF_WIDTH_RANGE: (f64, f64) = (-7.0, 7.0);

const NEWTON_ITERS: usize = 8;
const BISECTION_ITERS: usize = 200;
const INVERSE_TOL: f64 = 1e-12;

/// Cubic Hermite blend `h(t) = t^2 (3 - 2t)`.
pub fn hermite(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// `relu_eps(s) = s h((s + eps) / 2eps)` on `[-eps, eps]`, `max(0, s)` outside.
pub fn smooth_relu(s: f64, eps: f64) -> f64 {
    if s <= -eps {
        0.0
    } else if s >= eps {
        s
    } else {
        s * hermite((s + eps) / (2.0 * eps))
    }
}

pub fn smooth_relu_derivative(s: f64, eps: f64) -> f64 {
    if s <= -eps {
        0.0
    } else if s >= eps {
        1.0
    } else {
        let t = (s + eps) / (2.0 * eps);
        hermite(t) + s * 6.0 * t * (1.0 - t) / (2.0 * eps)
    }
}

/// Learnable parameters of the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothPwl {
    /// Log-slope parameters; segment `i` has slope proportional to `e^{-beta_i}`.
    pub beta: Vec<f64>,
    /// Window center `mu`.
    pub center: f64,
    /// `ln S` for window half-width `S`.
    pub log_half_width: f64,
    /// Corner half-width in unit-window coordinates; not trained.
    pub epsilon: f64,
}

impl SmoothPwl {
    /// Identity map with `segments` pieces on `[center - half_width, center + half_width]`.
    pub fn identity(segments: usize, center: f64, half_width: f64, epsilon: f64) -> Result<Self> {
        let act = SmoothPwl {
            beta: vec![0.0; segments],
            center,
            log_half_width: half_width.ln(),
            epsilon,
        };
        act.validate()?;
        Ok(act)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.beta.len();
        if p == 0 {
            return Err(Error::InvalidParameter("PWL needs at least one segment".into()));
        }
        if !(self.epsilon > 0.0 && 2.0 * self.epsilon * (p as f64) < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "corner half-width {} must lie in (0, 1/(2p)) for p = {p}",
                self.epsilon
            )));
        }
        let finite = self.beta.iter().all(|b| b.is_finite())
            && self.center.is_finite()
            && self.log_half_width.is_finite();
        if !finite {
            return Err(Error::InvalidParameter("non-finite PWL parameter".into()));
        }
        Ok(())
    }

    pub fn segments(&self) -> usize {
        self.beta.len()
    }

    /// `p` slope parameters, then center, then log half-width.
    pub fn num_params(&self) -> usize {
        self.beta.len() + 2
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.push(self.center);
        v.push(self.log_half_width);
        v
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let n = self.beta.len();
        self.beta.copy_from_slice(&p[..n]);
        self.center = p[n];
        self.log_half_width = p[n + 1];
    }

    /// Restores strict monotonicity: adjacent slope ratios clamped to
    /// [`MAX_SLOPE_RATIO`] and the window width kept in range.
    pub fn enforce_monotone(&mut self) {
        let limit = MAX_SLOPE_RATIO.ln();
        for i in 1..self.beta.len() {
            let prev = self.beta[i - 1];
            self.beta[i] = self.beta[i].clamp(prev - limit, prev + limit);
        }
        self.log_half_width = self
            .log_half_width
            .clamp(LOG_HALF_WIDTH_RANGE.0, LOG_HALF_WIDTH_RANGE.1);
    }

    /// Precomputes slopes and corner ordinates for repeated evaluation.
    pub fn prepare(&self) -> PreparedPwl {
        let p = self.beta.len();
        let m = self.beta.iter().map(|b| -b).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.beta.iter().map(|b| (-b - m).exp()).collect();
        let total: f64 = e.iter().sum();
        let q: Vec<f64> = e.iter().map(|x| x / total).collect();
        let slopes: Vec<f64> = q.iter().map(|x| x * p as f64).collect();
        let half_width = self.log_half_width.exp();
        let mut prepared = PreparedPwl {
            slopes,
            q,
            center: self.center,
            half_width,
            epsilon: self.epsilon,
            corners: Vec::with_capacity(2 * p.saturating_sub(1)),
        };
        for i in 1..p {
            let knot = i as f64 / p as f64;
            for v in [knot - self.epsilon, knot + self.epsilon] {
                let g = prepared.unit(v);
                prepared.corners.push((v, g));
            }
        }
        prepared
    }
}

/// Evaluator with slopes and corner ordinates resolved.
#[derive(Debug, Clone)]
pub struct PreparedPwl {
    slopes: Vec<f64>,
    q: Vec<f64>,
    center: f64,
    half_width: f64,
    epsilon: f64,
    /// `(v, G(v))` at both edges of every corner, ascending.
    corners: Vec<(f64, f64)>,
}

impl PreparedPwl {
    fn p(&self) -> usize {
        self.slopes.len()
    }

    fn knot(&self, i: usize) -> f64 {
        i as f64 / self.p() as f64
    }

    fn to_unit(&self, s: f64) -> f64 {
        (s - self.center + self.half_width) / (2.0 * self.half_width)
    }

    fn from_unit(&self, v: f64) -> f64 {
        self.center - self.half_width + 2.0 * self.half_width * v
    }

    /// `G(v)`.
    pub fn unit(&self, v: f64) -> f64 {
        let a = &self.slopes;
        let mut g = a[0] * v;
        for i in 1..self.p() {
            let r = smooth_relu(v - self.knot(i), self.epsilon);
            if r == 0.0 {
                break;
            }
            g += (a[i] - a[i - 1]) * r;
        }
        g
    }

    /// `G'(v)`.
    pub fn unit_derivative(&self, v: f64) -> f64 {
        let a = &self.slopes;
        let mut d = a[0];
        for i in 1..self.p() {
            let u = v - self.knot(i);
            if u <= -self.epsilon {
                break;
            }
            d += (a[i] - a[i - 1]) * smooth_relu_derivative(u, self.epsilon);
        }
        d
    }

    /// Basis values `B_j(v)` with `G = sum_j a_j B_j`.
    fn basis(&self, v: f64, out: &mut [f64]) {
        let p = self.p();
        let r = |i: usize| smooth_relu(v - self.knot(i), self.epsilon);
        if p == 1 {
            out[0] = v;
            return;
        }
        let mut prev = r(1);
        out[0] = v - prev;
        for j in 1..p - 1 {
            let next = r(j + 1);
            out[j] = prev - next;
            prev = next;
        }
        out[p - 1] = prev;
    }

    /// Finds `v` with `G(v) = target`.
    fn unit_inverse(&self, target: f64, tol: f64) -> Result<f64> {
        let a = &self.slopes;
        let p = self.p();
        let idx = self.corners.partition_point(|&(_, g)| g < target);
        if idx % 2 == 0 {
            // Linear piece: before the first corner, between corners, or after the last.
            let seg = idx / 2;
            let (v0, g0) = if idx == 0 { (0.0, 0.0) } else { self.corners[idx - 1] };
            return Ok(v0 + (target - g0) / a[seg.min(p - 1)]);
        }
        let (mut lo, glo) = self.corners[idx - 1];
        let (mut hi, ghi) = self.corners[idx];
        let mut v = lo + (hi - lo) * (target - glo) / (ghi - glo).max(f64::MIN_POSITIVE);
        for _ in 0..NEWTON_ITERS {
            let r = self.unit(v) - target;
            if r.abs() <= tol {
                // One more step takes the quadratic convergence to rounding level.
                let polished = v - r / self.unit_derivative(v);
                return Ok(if polished >= lo && polished <= hi { polished } else { v });
            }
            if r > 0.0 {
                hi = v;
            } else {
                lo = v;
            }
            let next = v - r / self.unit_derivative(v);
            v = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        }
        for _ in 0..BISECTION_ITERS {
            let r = self.unit(v) - target;
            if r.abs() <= tol || hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
                return Ok(v);
            }
            if r > 0.0 {
                hi = v;
            } else {
                lo = v;
            }
            v = 0.5 * (lo + hi);
        }
        Err(Error::InverseDidNotConverge {
            target: self.from_unit(target),
            iterations: NEWTON_ITERS + BISECTION_ITERS,
        })
    }
}

impl ScalarBijection for PreparedPwl {
    fn eval(&self, s: f64) -> f64 {
        self.from_unit(self.unit(self.to_unit(s)))
    }

    fn derivative(&self, s: f64) -> f64 {
        self.unit_derivative(self.to_unit(s))
    }

    fn invert(&self, y: f64) -> Result<f64> {
        let target = self.to_unit(y);
        let tol = INVERSE_TOL * y.abs().max(1.0) / (2.0 * self.half_width);
        Ok(self.from_unit(self.unit_inverse(target, tol)?))
    }

    fn num_params(&self) -> usize {
        self.p() + 2
    }

    fn accumulate_param_grad(&self, s: f64, coeff: f64, grad: &mut [f64]) {
        let p = self.p();
        if p <= 64 {
            self.param_grad_with(s, coeff, grad, &mut [0.0; 64][..p]);
        } else {
            self.param_grad_with(s, coeff, grad, &mut vec![0.0; p]);
        }
    }
}

impl PreparedPwl {
    fn param_grad_with(&self, s: f64, coeff: f64, grad: &mut [f64], basis: &mut [f64]) {
        let p = self.p();
        let v = self.to_unit(s);
        let sw = self.half_width;
        let g = self.unit(v);
        let dg = self.unit_derivative(v);
        self.basis(v, basis);
        // dG/dbeta_j = q_j G - a_j B_j
        for j in 0..p {
            grad[j] += coeff * 2.0 * sw * (self.q[j] * g - self.slopes[j] * basis[j]);
        }
        grad[p] += coeff * (1.0 - dg);
        grad[p + 1] += coeff * (-sw + 2.0 * sw * g - dg * (s - self.center));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_pwl(rng: &mut impl Rng) -> SmoothPwl {
        let p = rng.random_range(1..=20);
        let mut act = SmoothPwl {
            beta: (0..p).map(|_| rng.random_range(-2.0..2.0)).collect(),
            center: rng.random_range(-1.0..1.0),
            log_half_width: rng.random_range(-1.0..2.0),
            epsilon: rng.random_range(1e-3..(0.5 / p as f64 - 1e-4)),
        };
        act.enforce_monotone();
        act
    }

    #[test]
    fn smooth_relu_reference_value() {
        let t = (0.05 + 0.1) / 0.2;
        assert!((t - 0.75f64).abs() < 1e-15);
        assert!((hermite(0.75) - 0.84375).abs() < 1e-15);
        assert!((smooth_relu(0.05, 0.1) - 0.0421875).abs() < 1e-15);
    }

    #[test]
    fn smooth_relu_derivative_extremes() {
        // Minimum of relu_eps' sits at t = (1 - 1/sqrt2)/2 with value -(sqrt2 - 1)/2.
        let eps = 0.3;
        let t: f64 = 0.5 * (1.0 - 1.0 / 2f64.sqrt());
        let s = 2.0 * eps * t - eps;
        let d = smooth_relu_derivative(s, eps);
        assert!((d + (2f64.sqrt() - 1.0) / 2.0).abs() < 1e-12);
        let bound = 1.0 + (MAX_SLOPE_RATIO - 1.0) * d;
        assert!(bound > 0.3);
    }

    #[test]
    fn equal_slopes_are_identity() {
        let act = SmoothPwl::identity(8, 0.0, 4.0, DEFAULT_EPSILON).unwrap().prepare();
        for &s in &[-100.0, -4.0, -1.3, 0.0, 0.37, 2.5, 4.0, 17.0] {
            assert!((act.eval(s) - s).abs() < 1e-12, "{s}");
            assert!((act.invert(s).unwrap() - s).abs() < 1e-12);
            assert!((act.derivative(s) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn validate_rejects_wide_corners() {
        assert!(SmoothPwl::identity(10, 0.0, 1.0, 0.06).is_err());
        assert!(SmoothPwl::identity(0, 0.0, 1.0, 0.01).is_err());
        assert!(SmoothPwl::identity(10, 0.0, 1.0, 0.04).is_ok());
    }

    #[test]
    fn strictly_increasing_for_random_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let act = random_pwl(&mut rng).prepare();
            let a = rng.random_range(-8.0..8.0);
            let b = a + rng.random_range(1e-6..1.0);
            assert!(act.eval(a) < act.eval(b));
        }
        for _ in 0..100 {
            let act = random_pwl(&mut rng).prepare();
            for _ in 0..100 {
                assert!(act.derivative(rng.random_range(-10.0..10.0)) > 0.0);
            }
        }
    }

    #[test]
    fn outside_window_is_linear() {
        let mut act = SmoothPwl::identity(4, 0.0, 1.0, 0.05).unwrap();
        act.beta = vec![0.5, 0.0, -0.5, 0.2];
        let pre = act.prepare();
        let (s1, s2) = (-5.0, -7.0);
        let slope = (pre.eval(s1) - pre.eval(s2)) / (s1 - s2);
        assert!((slope - pre.derivative(-1.5)).abs() < 1e-12);
        let y = pre.eval(-6.0);
        assert!((pre.invert(y).unwrap() + 6.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_round_trips_and_agrees_with_bisection() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10_000 {
            let act = random_pwl(&mut rng).prepare();
            let y = rng.random_range(-10.0..10.0);
            let s = act.invert(y).unwrap();
            assert!((act.eval(s) - y).abs() <= 1e-12 * y.abs().max(1.0), "y={y}");
            // Independent oracle: plain bisection on the forward map.
            let (mut lo, mut hi) = (-1e4, 1e4);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if act.eval(mid) < y {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!((0.5 * (lo + hi) - s).abs() < 1e-9 * s.abs().max(1.0));
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-6;
        for _ in 0..200 {
            let act = random_pwl(&mut rng);
            let s = rng.random_range(-6.0..6.0);
            let pre = act.prepare();
            let mut grad = vec![0.0; act.num_params()];
            pre.accumulate_param_grad(s, 1.0, &mut grad);
            let base = act.params();
            for k in 0..base.len() {
                let eval = |d: f64| {
                    let mut a = act.clone();
                    let mut p = base.clone();
                    p[k] += d;
                    a.set_params(&p);
                    a.prepare().eval(s)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!(
                    (fd - grad[k]).abs() <= 1e-5 * fd.abs().max(1e-2),
                    "param {k}: fd {fd} analytic {}",
                    grad[k]
                );
            }
            let fd = (pre.eval(s + h) - pre.eval(s - h)) / (2.0 * h);
            assert!((fd - pre.derivative(s)).abs() <= 1e-5 * fd.abs().max(1e-2));
        }
    }

    #[test]
    fn enforce_monotone_caps_adjacent_ratios() {
        let mut act = SmoothPwl::identity(4, 0.0, 1.0, 0.01).unwrap();
        act.beta = vec![0.0, 5.0, -5.0, 0.0];
        act.enforce_monotone();
        for w in act.beta.windows(2) {
            assert!((w[1] - w[0]).abs() <= MAX_SLOPE_RATIO.ln() + 1e-15);
        }
    }
}
