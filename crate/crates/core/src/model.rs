//! Encoder/decoder stack of (filter, activation) pairs around a Fourier
//! truncation bottleneck.
//!
//! Encoder: `x_{l+1} = g_l(W_l x_l)` for `l = 0..L`, then `P` (truncation).
//! Decoder: the same layers inverted in reverse order.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::layers::{
    pwl, residual, Activation, ActivationFamily, Direction, Prepared, ResidualActivation,
    ScalarBijection, SmoothPwl, SpectralFilter, THETA_LIMIT,
};
use crate::spectral::{pack_coeffs, unpack_coeffs, Field, Fourier, Grid, ModeSet};

pub const MODEL_MAGIC: &[u8; 8] = b"FINEMDL1";
pub const MODEL_VERSION: u32 = 1;

const TAG_FILTER: u8 = 0;
const TAG_PWL: u8 = 1;
const TAG_RESIDUAL: u8 = 2;

/// Hyperparameters that fix the shape of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub depth: usize,
    pub family: ActivationFamily,
    /// PWL segment count `p`.
    pub segments: usize,
    pub center: f64,
    pub half_width: f64,
    pub epsilon: f64,
    /// Residual tanh units `m`.
    pub units: usize,
    pub alpha: f64,
    pub lipschitz_cap: f64,
    /// Seeds the (inert at init) inner weights of residual activations.
    pub seed: u64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            depth: 3,
            family: ActivationFamily::Pwl,
            segments: pwl::DEFAULT_SEGMENTS,
            center: 0.0,
            half_width: 4.0,
            epsilon: pwl::DEFAULT_EPSILON,
            units: residual::DEFAULT_UNITS,
            alpha: residual::DEFAULT_ALPHA,
            lipschitz_cap: residual::DEFAULT_LIPSCHITZ_CAP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineLayer {
    pub filter: SpectralFilter,
    pub activation: Activation,
}

impl FineLayer {
    pub fn num_params(&self) -> usize {
        self.filter.num_params() + self.activation.num_params()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineModel {
    grid: Grid,
    layers: Vec<FineLayer>,
    bottleneck: ModeSet,
}

impl FineModel {
    pub fn new(grid: Grid, layers: Vec<FineLayer>, bottleneck: ModeSet) -> Result<Self> {
        grid.ensure_same(bottleneck.grid())?;
        if layers.is_empty() {
            return Err(Error::InvalidParameter("model depth must be at least 1".into()));
        }
        let classes = Fourier::get(&grid).layout().num_classes();
        let family = layers[0].activation.family();
        for layer in &layers {
            if layer.filter.theta.len() != classes {
                return Err(Error::LengthMismatch {
                    expected: classes,
                    found: layer.filter.theta.len(),
                });
            }
            layer.filter.check_range()?;
            layer.activation.validate()?;
            if layer.activation.family() != family {
                return Err(Error::InvalidParameter("layers mix activation families".into()));
            }
        }
        Ok(FineModel {
            grid,
            layers,
            bottleneck,
        })
    }

    /// Every layer the identity, so the model reduces to the truncation baseline.
    pub fn identity(grid: Grid, bottleneck: ModeSet, arch: &Architecture) -> Result<Self> {
        let classes = Fourier::get(&grid).layout().num_classes();
        let mut rng = ChaCha8Rng::seed_from_u64(arch.seed);
        let mut layers = Vec::with_capacity(arch.depth);
        for _ in 0..arch.depth {
            let activation = match arch.family {
                ActivationFamily::Pwl => Activation::Pwl(SmoothPwl::identity(
                    arch.segments,
                    arch.center,
                    arch.half_width,
                    arch.epsilon,
                )?),
                ActivationFamily::Residual => {
                    let w = (0..arch.units).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let c = (0..arch.units).map(|_| rng.random_range(-1.0..1.0)).collect();
                    Activation::Residual(ResidualActivation::identity(
                        arch.alpha,
                        w,
                        c,
                        arch.lipschitz_cap,
                    )?)
                }
            };
            layers.push(FineLayer {
                filter: SpectralFilter::identity(classes),
                activation,
            });
        }
        FineModel::new(grid, layers, bottleneck)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn layers(&self) -> &[FineLayer] {
        &self.layers
    }

    pub fn bottleneck(&self) -> &ModeSet {
        &self.bottleneck
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn family(&self) -> ActivationFamily {
        self.layers[0].activation.family()
    }

    pub fn latent_dim(&self) -> usize {
        self.bottleneck.latent_dim()
    }

    /// Same layers behind a different bottleneck.
    pub fn with_bottleneck(&self, bottleneck: ModeSet) -> Result<Self> {
        FineModel::new(self.grid, self.layers.clone(), bottleneck)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(FineLayer::num_params).sum()
    }

    /// Flat parameters, layer by layer: `theta`, then activation parameters.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend_from_slice(&layer.filter.theta);
            out.extend(layer.activation.params());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                expected: self.num_params(),
                found: p.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let nt = layer.filter.theta.len();
            layer.filter.theta.copy_from_slice(&p[offset..offset + nt]);
            offset += nt;
            let na = layer.activation.num_params();
            layer.activation.set_params(&p[offset..offset + na]);
            offset += na;
        }
        Ok(())
    }

    /// Restores the invertibility constraints after a parameter update.
    pub fn project_constraints(&mut self) {
        for layer in &mut self.layers {
            for t in &mut layer.filter.theta {
                *t = t.clamp(-THETA_LIMIT, THETA_LIMIT);
            }
            layer.activation.project();
        }
    }

    /// Adds uniform noise of the given scale to every parameter, then
    /// projects back onto the constraint set.
    pub fn perturb(&mut self, rng: &mut impl Rng, scale: f64) {
        let p: Vec<f64> = self
            .params()
            .into_iter()
            .map(|x| x + scale * rng.random_range(-1.0..1.0))
            .collect();
        self.set_params(&p).expect("same length");
        self.project_constraints();
    }

    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator {
            model: self,
            fourier: Fourier::get(&self.grid),
            acts: self.layers.iter().map(|l| l.activation.prepare()).collect(),
        }
    }

    pub fn encode(&self, f: &Field) -> Result<Vec<f64>> {
        self.evaluator().encode(f)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Field> {
        self.evaluator().decode(z)
    }

    pub fn reconstruct(&self, f: &Field) -> Result<Field> {
        self.evaluator().reconstruct(f)
    }

    /// Gradient of a loss with respect to every parameter, given
    /// `upstream = dLoss/d reconstruct(f)`.
    pub fn backward(&self, f: &Field, upstream: &[f64]) -> Result<Vec<f64>> {
        let ev = self.evaluator();
        let tape = ev.forward(f)?;
        let mut grad = vec![0.0; self.num_params()];
        ev.backward(&tape, upstream, &mut grad)?;
        Ok(grad)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.grid.sizes().iter().any(|&n| n > u16::MAX as usize) {
            return Err(Error::InvalidGrid(format!("{} too large to serialize", self.grid)));
        }
        let mut w = ByteWriter::new();
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        w.grid(&self.grid);
        w.u8(self.family().tag());
        let modes = self.bottleneck.wavevectors();
        w.u32(modes.len() as u32);
        for k in modes {
            w.i32(k[0] as i32);
            w.i32(k[1] as i32);
        }
        w.u32(self.layers.len() as u32);
        for layer in &self.layers {
            w.u8(TAG_FILTER);
            w.vec(&layer.filter.theta);
            match &layer.activation {
                Activation::Pwl(p) => {
                    w.u8(TAG_PWL);
                    w.f64(p.epsilon);
                    w.f64(p.center);
                    w.f64(p.log_half_width);
                    w.vec(&p.beta);
                }
                Activation::Residual(r) => {
                    w.u8(TAG_RESIDUAL);
                    w.f64(r.alpha);
                    w.f64(r.lipschitz_cap);
                    w.vec(&r.v);
                    w.vec(&r.w);
                    w.vec(&r.c);
                }
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MODEL_MAGIC)?;
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Version {
                expected: MODEL_VERSION,
                found: version,
            });
        }
        let grid = r.grid()?;
        let family = r.u8()?;
        let n_modes = r.u32()? as usize;
        let mut modes = Vec::with_capacity(n_modes.min(1 << 16));
        for _ in 0..n_modes {
            modes.push([r.i32()? as i64, r.i32()? as i64]);
        }
        let bottleneck = ModeSet::from_wavevectors(grid, &modes)?;
        let depth = r.u32()? as usize;
        let mut layers = Vec::with_capacity(depth.min(1 << 10));
        for _ in 0..depth {
            let tag = r.u8()?;
            if tag != TAG_FILTER {
                return Err(Error::Format(format!("expected filter record, found tag {tag}")));
            }
            let filter = SpectralFilter { theta: r.vec()? };
            let activation = match r.u8()? {
                TAG_PWL => {
                    let epsilon = r.f64()?;
                    let center = r.f64()?;
                    let log_half_width = r.f64()?;
                    Activation::Pwl(SmoothPwl {
                        beta: r.vec()?,
                        center,
                        log_half_width,
                        epsilon,
                    })
                }
                TAG_RESIDUAL => {
                    let alpha = r.f64()?;
                    let lipschitz_cap = r.f64()?;
                    Activation::Residual(ResidualActivation {
                        alpha,
                        lipschitz_cap,
                        v: r.vec()?,
                        w: r.vec()?,
                        c: r.vec()?,
                    })
                }
                t => return Err(Error::Format(format!("unknown activation tag {t}"))),
            };
            layers.push(FineLayer { filter, activation });
        }
        r.finish()?;
        let model = FineModel::new(grid, layers, bottleneck)?;
        if model.family().tag() != family {
            return Err(Error::Format("family byte disagrees with layer records".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads a model and rejects it unless it lives on `grid`.
    pub fn load_for(path: &Path, grid: &Grid) -> Result<Self> {
        let model = Self::load(path)?;
        grid.ensure_same(model.grid())?;
        Ok(model)
    }
}

/// Intermediate values of one reconstruction, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Filter outputs `u_l` on the encoder side (activation inputs).
    enc_pre: Vec<Vec<f64>>,
    enc_spec: Vec<Vec<Complex64>>,
    /// Inverse-activation outputs `t_l` on the decoder side.
    dec_pre: Vec<Vec<f64>>,
    /// Spectra of the inverse-filter outputs `d_l`.
    dec_spec: Vec<Vec<Complex64>>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// A model with activations prepared for repeated evaluation.
pub struct Evaluator<'a> {
    model: &'a FineModel,
    fourier: Arc<Fourier>,
    acts: Vec<Prepared<'a>>,
}

impl Evaluator<'_> {
    pub fn model(&self) -> &FineModel {
        self.model
    }

    fn check(&self, f: &Field) -> Result<()> {
        self.model.grid.ensure_same(f.grid())
    }

    /// Encoder output before truncation, as a spectrum.
    fn encode_spectrum(&self, f: &Field) -> Vec<Complex64> {
        let mut x = f.values().to_vec();
        for (layer, act) in self.model.layers.iter().zip(&self.acts) {
            let (mut u, _) = layer.filter.apply(&self.fourier, &x, Direction::Forward);
            for s in &mut u {
                *s = act.eval(*s);
            }
            x = u;
        }
        self.fourier.forward(&x)
    }

    fn decode_values(&self, mut d: Vec<f64>) -> Result<Vec<f64>> {
        for (layer, act) in self.model.layers.iter().zip(&self.acts).rev() {
            for y in &mut d {
                *y = act.invert(*y)?;
            }
            d = layer.filter.apply(&self.fourier, &d, Direction::Inverse).0;
        }
        Ok(d)
    }

    pub fn encode(&self, f: &Field) -> Result<Vec<f64>> {
        self.check(f)?;
        let spec = self.encode_spectrum(f);
        Ok(pack_coeffs(&spec, &self.model.bottleneck, self.fourier.layout()))
    }

    pub fn decode(&self, z: &[f64]) -> Result<Field> {
        let mut spec = vec![Complex64::new(0.0, 0.0); self.model.grid.half_len()];
        unpack_coeffs(z, &self.model.bottleneck, self.fourier.layout(), &mut spec)?;
        let d = self.fourier.inverse(&spec);
        Field::new(self.model.grid, self.decode_values(d)?)
    }

    pub fn reconstruct(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        let mut spec = self.encode_spectrum(f);
        self.model.bottleneck.apply(&mut spec, self.fourier.layout());
        let d = self.fourier.inverse(&spec);
        Field::new(self.model.grid, self.decode_values(d)?)
    }

    /// Reconstruction with every intermediate needed by [`Evaluator::backward`].
    pub fn forward(&self, f: &Field) -> Result<Tape> {
        self.check(f)?;
        let depth = self.model.layers.len();
        let mut tape = Tape {
            enc_pre: Vec::with_capacity(depth),
            enc_spec: Vec::with_capacity(depth),
            dec_pre: vec![Vec::new(); depth],
            dec_spec: vec![Vec::new(); depth],
            output: Vec::new(),
        };
        let mut x = f.values().to_vec();
        for (layer, act) in self.model.layers.iter().zip(&self.acts) {
            let (u, spec) = layer.filter.apply(&self.fourier, &x, Direction::Forward);
            x = u.iter().map(|&s| act.eval(s)).collect();
            tape.enc_pre.push(u);
            tape.enc_spec.push(spec);
        }
        let mut spec = self.fourier.forward(&x);
        self.model.bottleneck.apply(&mut spec, self.fourier.layout());
        let mut d = self.fourier.inverse(&spec);
        for l in (0..depth).rev() {
            let act = &self.acts[l];
            let t = d.iter().map(|&y| act.invert(y)).collect::<Result<Vec<_>>>()?;
            let (out, spec) = self.model.layers[l].filter.apply(&self.fourier, &t, Direction::Inverse);
            tape.dec_pre[l] = t;
            tape.dec_spec[l] = spec;
            d = out;
        }
        tape.output = d;
        Ok(tape)
    }

    /// Accumulates `dLoss/dparams` into `grad` given `upstream = dLoss/d output`.
    /// Returns `dLoss/d input`.
    pub fn backward(&self, tape: &Tape, upstream: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        let n = self.model.grid.len();
        if upstream.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: upstream.len(),
            });
        }
        if grad.len() != self.model.num_params() {
            return Err(Error::LengthMismatch {
                expected: self.model.num_params(),
                found: grad.len(),
            });
        }
        let offsets: Vec<usize> = self
            .model
            .layers
            .iter()
            .scan(0, |acc, l| {
                let start = *acc;
                *acc += l.num_params();
                Some(start)
            })
            .collect();
        let mut g = upstream.to_vec();

        // Decoder, undone from its last operation (layer 0) inwards.
        for (l, layer) in self.model.layers.iter().enumerate() {
            let nt = layer.filter.theta.len();
            let (d_theta, d_act) = grad[offsets[l]..offsets[l] + layer.num_params()].split_at_mut(nt);
            let g_t = layer.filter.backward_into(
                &self.fourier,
                &tape.dec_spec[l],
                &g,
                Direction::Inverse,
                d_theta,
            );
            let act = &self.acts[l];
            // t = g^-1(y): dt/dy = 1/g'(t), dt/dp = -(dg/dp)(t) / g'(t).
            for ((gy, &gt), &t) in g.iter_mut().zip(&g_t).zip(&tape.dec_pre[l]) {
                let scaled = gt / act.derivative(t);
                act.accumulate_param_grad(t, -scaled, d_act);
                *gy = scaled;
            }
        }

        // Truncation is an orthogonal projection, hence self-adjoint.
        let mut spec = self.fourier.forward(&g);
        self.model.bottleneck.apply(&mut spec, self.fourier.layout());
        g = self.fourier.inverse(&spec);

        for (l, layer) in self.model.layers.iter().enumerate().rev() {
            let nt = layer.filter.theta.len();
            let (d_theta, d_act) = grad[offsets[l]..offsets[l] + layer.num_params()].split_at_mut(nt);
            let act = &self.acts[l];
            for (gv, &u) in g.iter_mut().zip(&tape.enc_pre[l]) {
                act.accumulate_param_grad(u, *gv, d_act);
                *gv *= act.derivative(u);
            }
            g = layer.filter.backward_into(
                &self.fourier,
                &tape.enc_spec[l],
                &g,
                Direction::Forward,
                d_theta,
            );
        }
        Ok(g)
    }

    /// Summed squared reconstruction error of one sample; adds its gradient into `grad`.
    pub fn sse_and_grad(&self, f: &Field, grad: &mut [f64]) -> Result<f64> {
        let tape = self.forward(f)?;
        let mut sse = 0.0;
        let upstream: Vec<f64> = tape
            .output
            .iter()
            .zip(f.values())
            .map(|(r, x)| {
                let e = r - x;
                sse += e * e;
                2.0 * e
            })
            .collect();
        self.backward(&tape, &upstream, grad)?;
        Ok(sse)
    }

    pub fn sse(&self, f: &Field) -> Result<f64> {
        let r = self.reconstruct(f)?;
        Ok(r.values().iter().zip(f.values()).map(|(a, b)| (a - b) * (a - b)).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{cyclic_shift, dft_forward, latent_pack};

    fn field(grid: Grid, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::new(grid, (0..grid.len()).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
    }

    fn random_model(grid: Grid, modes: usize, family: ActivationFamily, depth: usize, seed: u64) -> FineModel {
        let arch = Architecture {
            depth,
            family,
            segments: 6,
            seed,
            ..Architecture::default()
        };
        let mut m = FineModel::identity(grid, ModeSet::lowest(grid, modes).unwrap(), &arch).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        m.perturb(&mut rng, 0.4);
        m
    }

    #[test]
    fn identity_model_latent_is_packed_dft() {
        let g = Grid::line(16).unwrap();
        let m = FineModel::identity(g, ModeSet::all(g), &Architecture::default()).unwrap();
        let f = field(g, 1);
        let z = m.encode(&f).unwrap();
        let expect = latent_pack(&dft_forward(&f), m.bottleneck()).unwrap();
        for (a, b) in z.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let back = m.decode(&z).unwrap();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_model_truncates_like_the_baseline() {
        let g = Grid::line(64).unwrap();
        let m = FineModel::identity(g, ModeSet::within(g, 4).unwrap(), &Architecture::default()).unwrap();
        let f = Field::from_fn(g, |p| p[0].sin() + (5.0 * p[0]).sin()).unwrap();
        let r = m.reconstruct(&f).unwrap();
        for (j, v) in r.values().iter().enumerate() {
            assert!((v - g.coordinate(0, j).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_field_encodes_to_zero() {
        let g = Grid::line(16).unwrap();
        let arch = Architecture {
            family: ActivationFamily::Pwl,
            ..Architecture::default()
        };
        let m = FineModel::identity(g, ModeSet::lowest(g, 3).unwrap(), &arch).unwrap();
        assert!(m.encode(&Field::zeros(g)).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_without_truncation() {
        for (i, family) in [ActivationFamily::Pwl, ActivationFamily::Residual].into_iter().enumerate() {
            for g in [Grid::line(32).unwrap(), Grid::plane(8, 6).unwrap()] {
                let total = Fourier::get(&g).layout().num_classes();
                let m = random_model(g, total, family, 3, 10 + i as u64);
                let f = field(g, 2);
                let back = m.decode(&m.encode(&f).unwrap()).unwrap();
                let err: f64 = back.values().iter().zip(f.values()).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(err.sqrt() <= 1e-10 * f.norm_sq().sqrt(), "{family} {g}");
            }
        }
    }

    #[test]
    fn reconstruct_is_shift_equivariant() {
        let g = Grid::plane(8, 8).unwrap();
        let m = random_model(g, 6, ActivationFamily::Pwl, 2, 3);
        let f = field(g, 3);
        let r = m.reconstruct(&f).unwrap();
        for a in [[1, 0], [3, 5], [-2, 7]] {
            let lhs = m.reconstruct(&cyclic_shift(&f, &a)).unwrap();
            let rhs = cyclic_shift(&r, &a);
            for (x, y) in lhs.values().iter().zip(rhs.values()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    fn fd_gradient(m: &FineModel, f: &Field) -> Vec<f64> {
        let base = m.params();
        let h = 1e-6;
        (0..base.len())
            .map(|k| {
                let eval = |d: f64| {
                    let mut mm = m.clone();
                    let mut p = base.clone();
                    p[k] += d;
                    mm.set_params(&p).unwrap();
                    mm.evaluator().sse(f).unwrap()
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = Grid::line(16).unwrap();
        for (i, family) in [ActivationFamily::Pwl, ActivationFamily::Residual].into_iter().enumerate() {
            let m = random_model(g, 4, family, 2, 20 + i as u64);
            let f = field(g, 4);
            let mut grad = vec![0.0; m.num_params()];
            m.evaluator().sse_and_grad(&f, &mut grad).unwrap();
            let fd = fd_gradient(&m, &f);
            let scale = fd.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            for (k, (a, b)) in grad.iter().zip(&fd).enumerate() {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-3 * scale), "{family} k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn identity_model_on_band_limited_field_has_zero_gradient() {
        let g = Grid::line(16).unwrap();
        let m = FineModel::identity(g, ModeSet::within(g, 4).unwrap(), &Architecture::default()).unwrap();
        let f = Field::from_fn(g, |p| 0.3 + p[0].cos() - 0.5 * (2.0 * p[0]).sin()).unwrap();
        let mut grad = vec![0.0; m.num_params()];
        let sse = m.evaluator().sse_and_grad(&f, &mut grad).unwrap();
        assert!(sse < 1e-26);
        assert!(grad.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn save_load_is_bitwise() {
        let g = Grid::new(&[8, 12], &[1.0, 2.0]).unwrap();
        for family in [ActivationFamily::Pwl, ActivationFamily::Residual] {
            let m = random_model(g, 7, family, 2, 5);
            let bytes = m.to_bytes().unwrap();
            let back = FineModel::from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            let pa: Vec<u64> = m.params().iter().map(|x| x.to_bits()).collect();
            let pb: Vec<u64> = back.params().iter().map(|x| x.to_bits()).collect();
            assert_eq!(pa, pb);
            for cut in [0, 7, 20, bytes.len() - 1] {
                assert!(FineModel::from_bytes(&bytes[..cut]).is_err());
            }
            let mut wrong = bytes.clone();
            wrong[8] = 9;
            assert!(matches!(FineModel::from_bytes(&wrong), Err(Error::Version { found: 9, .. })));
        }
    }

    #[test]
    fn load_for_rejects_other_grids() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::line(16).unwrap();
        let m = random_model(g, 3, ActivationFamily::Pwl, 1, 6);
        let path = dir.path().join("m.bin");
        m.save(&path).unwrap();
        assert!(FineModel::load_for(&path, &g).is_ok());
        let other = Grid::line(32).unwrap();
        assert!(matches!(FineModel::load_for(&path, &other), Err(Error::GridMismatch { .. })));
    }
}
