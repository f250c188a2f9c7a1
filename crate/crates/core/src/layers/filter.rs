//! Zero-phase spectral filter `z = F^-1(e^theta . F f)`.

use num_complex::Complex64;

use super::{Direction, LayerGradients};
use crate::error::{Error, Result};
use crate::spectral::{Field, Fourier};

/// Largest admissible `|theta|`; keeps `e^{+-theta}` far from overflow.
pub const THETA_LIMIT: f64 = 50.0;

/// One log-multiplier per conjugate mode class of the grid, so the filter
/// response `e^theta` is real, positive and symmetric in `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFilter {
    pub theta: Vec<f64>,
}

impl SpectralFilter {
    pub fn identity(num_classes: usize) -> Self {
        SpectralFilter {
            theta: vec![0.0; num_classes],
        }
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn check_range(&self) -> Result<()> {
        for (index, &value) in self.theta.iter().enumerate() {
            if !value.is_finite() || value.abs() > THETA_LIMIT {
                return Err(Error::FilterRange {
                    index,
                    value,
                    limit: THETA_LIMIT,
                });
            }
        }
        Ok(())
    }

    fn check_grid(&self, fourier: &Fourier) -> Result<()> {
        let n = fourier.layout().num_classes();
        if self.theta.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: self.theta.len(),
            });
        }
        Ok(())
    }

    /// Per stored coefficient multiplier `e^{sign * theta}`.
    pub(crate) fn multipliers(&self, fourier: &Fourier, dir: Direction) -> Vec<f64> {
        let sign = dir.sign();
        fourier
            .layout()
            .class_of
            .iter()
            .map(|&c| (sign * self.theta[c]).exp())
            .collect()
    }

    /// Applies the filter (or its inverse) to raw values; returns the output
    /// and its spectrum, which is all the backward pass needs.
    pub(crate) fn apply(
        &self,
        fourier: &Fourier,
        input: &[f64],
        dir: Direction,
    ) -> (Vec<f64>, Vec<Complex64>) {
        let mut spec = fourier.forward(input);
        for (c, m) in spec.iter_mut().zip(self.multipliers(fourier, dir)) {
            *c *= m;
        }
        (fourier.inverse(&spec), spec)
    }

    pub fn forward(&self, f: &Field) -> Result<Field> {
        let fourier = Fourier::get(f.grid());
        self.check_grid(&fourier)?;
        self.check_range()?;
        Field::new(*f.grid(), self.apply(&fourier, f.values(), Direction::Forward).0)
    }

    pub fn inverse(&self, z: &Field) -> Result<Field> {
        let fourier = Fourier::get(z.grid());
        self.check_grid(&fourier)?;
        self.check_range()?;
        Field::new(*z.grid(), self.apply(&fourier, z.values(), Direction::Inverse).0)
    }

    /// Gradients given the cached output spectrum of the application in
    /// direction `dir` and the upstream gradient with respect to its output.
    ///
    /// The operator is symmetric, so the input gradient is the same filter
    /// applied to `upstream`; `dL/dtheta_c = +-(1/N) sum_{k in c} Re(out^(k) conj(g^(k)))`.
    pub fn backward(
        &self,
        fourier: &Fourier,
        out_spectrum: &[Complex64],
        upstream: &[f64],
        dir: Direction,
    ) -> LayerGradients {
        let mut d_params = vec![0.0; self.theta.len()];
        let d_input = self.backward_into(fourier, out_spectrum, upstream, dir, &mut d_params);
        LayerGradients { d_input, d_params }
    }

    pub(crate) fn backward_into(
        &self,
        fourier: &Fourier,
        out_spectrum: &[Complex64],
        upstream: &[f64],
        dir: Direction,
        d_theta: &mut [f64],
    ) -> Vec<f64> {
        let layout = fourier.layout();
        let mut g = fourier.forward(upstream);
        let scale = dir.sign() / fourier.grid().len() as f64;
        for (pos, (gc, oc)) in g.iter().zip(out_spectrum).enumerate() {
            let class = layout.class_of[pos];
            d_theta[class] += scale * layout.weights[pos] * (oc * gc.conj()).re;
        }
        for (c, m) in g.iter_mut().zip(self.multipliers(fourier, dir)) {
            *c *= m;
        }
        fourier.inverse(&g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{Grid, dft_forward};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, seed: u64) -> (Grid, SpectralFilter, Field) {
        let g = Grid::line(n).unwrap();
        let classes = Fourier::get(&g).layout().num_classes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let filt = SpectralFilter {
            theta: (0..classes).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let f = Field::new(g, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        (g, filt, f)
    }

    #[test]
    fn zero_theta_is_identity() {
        let (g, _, f) = setup(32, 1);
        let id = SpectralFilter::identity(17);
        let out = id.forward(&f).unwrap();
        for (a, b) in out.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(*out.grid(), g);
    }

    #[test]
    fn uniform_log_two_doubles() {
        let (_, _, f) = setup(32, 2);
        let filt = SpectralFilter {
            theta: vec![2f64.ln(); 17],
        };
        let out = filt.forward(&f).unwrap();
        for (a, b) in out.values().iter().zip(f.values()) {
            assert!((a - 2.0 * b).abs() < 1e-13);
        }
        let back = filt.inverse(&f).unwrap();
        let (s, sb) = (dft_forward(&f), dft_forward(&back));
        for (a, b) in sb.coeffs().iter().zip(s.coeffs()) {
            assert!((a - b * 0.5).norm() < 1e-13);
        }
    }

    #[test]
    fn matches_naive_circular_convolution() {
        let (g, filt, f) = setup(16, 3);
        let fourier = Fourier::get(&g);
        let mult: Vec<Complex64> = filt
            .multipliers(&fourier, Direction::Forward)
            .into_iter()
            .map(|m| Complex64::new(m, 0.0))
            .collect();
        let kernel = fourier.inverse(&mult);
        let out = filt.forward(&f).unwrap();
        for j in 0..16 {
            let conv: f64 = (0..16).map(|i| kernel[(j + 16 - i) % 16] * f.values()[i]).sum();
            assert!((conv - out.values()[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for seed in 0..100 {
            let (_, filt, f) = setup(64, seed);
            let back = filt.inverse(&filt.forward(&f).unwrap()).unwrap();
            let err: f64 = back.values().iter().zip(f.values()).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(err.sqrt() <= 1e-10 * f.norm_sq().sqrt());
        }
    }

    #[test]
    fn rejects_out_of_range_theta() {
        let (_, mut filt, f) = setup(16, 4);
        filt.theta[3] = 51.0;
        assert!(matches!(filt.inverse(&f), Err(Error::FilterRange { index: 3, .. })));
        let short = SpectralFilter::identity(4);
        assert!(short.forward(&f).is_err());
    }

    #[test]
    fn identity_theta_gradient_is_scaled_power() {
        // loss = 0.5 |W f|^2 at theta = 0 gives dL/dtheta_c = sum_{k in c} |f^(k)|^2 / N.
        let (g, _, f) = setup(16, 5);
        let fourier = Fourier::get(&g);
        let filt = SpectralFilter::identity(9);
        let (out, spec) = filt.apply(&fourier, f.values(), Direction::Forward);
        let grads = filt.backward(&fourier, &spec, &out, Direction::Forward);
        let s = dft_forward(&f);
        for k in 0..9 {
            let mult = if k == 0 || k == 8 { 1.0 } else { 2.0 };
            let expect = mult * s.coeffs()[k].norm_sqr() / 16.0;
            assert!((grads.d_params[k] - expect).abs() < 1e-12);
        }
    }

    fn fd_check(dir: Direction) {
        let (g, filt, f) = setup(16, 6);
        let fourier = Fourier::get(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let weights: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |fl: &SpectralFilter, x: &[f64]| -> f64 {
            let (out, _) = fl.apply(&fourier, x, dir);
            out.iter().zip(&weights).map(|(o, w)| 0.5 * (o - w).powi(2)).sum()
        };
        let (out, spec) = filt.apply(&fourier, f.values(), dir);
        let up: Vec<f64> = out.iter().zip(&weights).map(|(o, w)| o - w).collect();
        let grads = filt.backward(&fourier, &spec, &up, dir);
        let h = 1e-6;
        for k in 0..filt.theta.len() {
            let (mut p, mut m) = (filt.clone(), filt.clone());
            p.theta[k] += h;
            m.theta[k] -= h;
            let fd = (loss(&p, f.values()) - loss(&m, f.values())) / (2.0 * h);
            assert!((fd - grads.d_params[k]).abs() <= 1e-5 * fd.abs().max(1e-3), "k={k}");
        }
        for j in 0..16 {
            let (mut p, mut m) = (f.values().to_vec(), f.values().to_vec());
            p[j] += h;
            m[j] -= h;
            let fd = (loss(&filt, &p) - loss(&filt, &m)) / (2.0 * h);
            assert!((fd - grads.d_input[j]).abs() <= 1e-5 * fd.abs().max(1e-3), "j={j}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_forward() {
        fd_check(Direction::Forward);
    }

    #[test]
    fn gradients_match_finite_differences_inverse() {
        fd_check(Direction::Inverse);
    }
}
