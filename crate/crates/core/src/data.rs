//! Benchmark datasets: a 1D nonlinear wave mixture, Kuramoto-Sivashinsky
//! snapshots, a 2D separable field and decaying 2D turbulence.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{Dataset, encode_dataset};
use crate::spectral::{Field, Fourier, Grid};

/// `f(x; w) = tanh(sin(x + w1 + cos(2x + w2)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Toy1Spec {
    pub samples: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for Toy1Spec {
    fn default() -> Self {
        Toy1Spec {
            samples: 100,
            n: 128,
            seed: 0,
        }
    }
}

pub fn toy1_value(x: f64, w1: f64, w2: f64) -> f64 {
    (x + w1 + (2.0 * x + w2).cos()).sin().tanh()
}

/// Phase pairs in draw order.
pub fn toy1_phases(spec: &Toy1Spec) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.samples)
        .map(|_| [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)])
        .collect()
}

pub fn gen_toy1(spec: &Toy1Spec) -> Result<Dataset> {
    let grid = Grid::line(spec.n)?;
    let fields = toy1_phases(spec)
        .into_iter()
        .map(|[a, b]| Field::from_fn(grid, |p| toy1_value(p[0], a, b)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(grid, fields)
}

/// `arctanh(c (sin(x+w1) sin(y+w2) + cos(2x+w3) cos(2y+w4)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Toy2dSpec {
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    pub scale: f64,
    pub seed: u64,
}

impl Default for Toy2dSpec {
    fn default() -> Self {
        Toy2dSpec {
            samples: 100,
            height: 32,
            width: 32,
            scale: 0.49,
            seed: 0,
        }
    }
}

pub fn toy2d_value(x: f64, y: f64, w: &[f64; 4], c: f64) -> f64 {
    (c * ((x + w[0]).sin() * (y + w[1]).sin() + (2.0 * x + w[2]).cos() * (2.0 * y + w[3]).cos())).atanh()
}

pub fn toy2d_phases(spec: &Toy2dSpec) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.samples)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.0..TAU)))
        .collect()
}

pub fn gen_toy2d(spec: &Toy2dSpec) -> Result<Dataset> {
    // The bracket lies in [-2, 2].
    if !(spec.scale > 0.0 && 2.0 * spec.scale < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "scale {} must lie in (0, 0.5) to keep the arctanh argument inside (-1, 1)",
            spec.scale
        )));
    }
    let grid = Grid::plane(spec.height, spec.width)?;
    let fields = toy2d_phases(spec)
        .into_iter()
        .map(|w| Field::from_fn(grid, |p| toy2d_value(p[0], p[1], &w, spec.scale)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(grid, fields)
}

/// Fourth-order exponential time differencing for `v' = L v + N(v)` with
/// diagonal `L`: Krogstad's ETDRK4 stages, phi-function coefficients
/// evaluated by contour integrals.
pub struct Etdrk4 {
    e: Vec<f64>,
    e2: Vec<f64>,
    /// `(h/2) phi1(hL/2)` and `h phi2(hL/2)`.
    p1h: Vec<f64>,
    p2h: Vec<f64>,
    /// `h phi1(hL)` and `h phi2(hL)`.
    p1: Vec<f64>,
    p2: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
}

const CONTOUR_POINTS: usize = 32;

impl Etdrk4 {
    pub fn new(linear: &[f64], dt: f64) -> Self {
        let roots: Vec<Complex64> = (1..=CONTOUR_POINTS)
            .map(|j| Complex64::from_polar(1.0, PI * (j as f64 - 0.5) / CONTOUR_POINTS as f64))
            .collect();
        // dt * g(dt l), averaged over a circle around dt l to avoid cancellation.
        let coeffs = |g: &dyn Fn(Complex64) -> Complex64| -> Vec<f64> {
            linear
                .iter()
                .map(|&l| {
                    let s: Complex64 = roots.iter().map(|r| g(dt * l + r)).sum();
                    dt * s.re / CONTOUR_POINTS as f64
                })
                .collect()
        };
        Etdrk4 {
            e: linear.iter().map(|l| (dt * l).exp()).collect(),
            e2: linear.iter().map(|l| (dt * l / 2.0).exp()).collect(),
            p1h: coeffs(&|z| ((z / 2.0).exp() - 1.0) / z),
            p2h: coeffs(&|z| 4.0 * ((z / 2.0).exp() - 1.0 - z / 2.0) / (z * z)),
            p1: coeffs(&|z| (z.exp() - 1.0) / z),
            p2: coeffs(&|z| (z.exp() - 1.0 - z) / (z * z)),
            f1: coeffs(&|z| (-4.0 - z + z.exp() * (4.0 - 3.0 * z + z * z)) / (z * z * z)),
            f2: coeffs(&|z| (2.0 + z + z.exp() * (z - 2.0)) / (z * z * z)),
            f3: coeffs(&|z| (-4.0 - 3.0 * z - z * z + z.exp() * (4.0 - z)) / (z * z * z)),
        }
    }

    /// Advances `v` by one step; `nonlinear(v, out)` writes `N(v)`.
    pub fn step(&self, v: &mut [Complex64], nonlinear: &mut impl FnMut(&[Complex64], &mut [Complex64])) {
        let n = v.len();
        let zero = Complex64::new(0.0, 0.0);
        let (mut nv, mut na, mut nb, mut nc) = (vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n]);
        let mut a = vec![zero; n];
        let mut b = vec![zero; n];
        let mut c = vec![zero; n];
        nonlinear(v, &mut nv);
        for i in 0..n {
            a[i] = self.e2[i] * v[i] + self.p1h[i] * nv[i];
        }
        nonlinear(&a, &mut na);
        for i in 0..n {
            b[i] = self.e2[i] * v[i] + self.p1h[i] * nv[i] + self.p2h[i] * (na[i] - nv[i]);
        }
        nonlinear(&b, &mut nb);
        for i in 0..n {
            c[i] = self.e[i] * v[i] + self.p1[i] * nv[i] + 2.0 * self.p2[i] * (nb[i] - nv[i]);
        }
        nonlinear(&c, &mut nc);
        for i in 0..n {
            v[i] = self.e[i] * v[i]
                + nv[i] * self.f1[i]
                + 2.0 * (na[i] + nb[i]) * self.f2[i]
                + nc[i] * self.f3[i];
        }
    }
}

/// `u_t + u u_x + u_xx + nu u_xxxx = 0` on `[0, length)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KsSpec {
    pub n: usize,
    pub length: f64,
    pub nu: f64,
    /// Time spanned by the recorded snapshots.
    pub duration: f64,
    pub snapshots: usize,
    /// Fraction of the whole integration discarded before recording.
    pub transient: f64,
    pub dt: f64,
    /// Standard deviation of the random initial condition.
    pub initial_amplitude: f64,
    pub seed: u64,
}

impl Default for KsSpec {
    fn default() -> Self {
        KsSpec {
            n: 128,
            length: 36.0,
            nu: 1.0,
            duration: 1e4,
            snapshots: 1000,
            transient: 0.1,
            dt: 0.25,
            initial_amplitude: 0.1,
            seed: 0,
        }
    }
}

/// Pseudo-spectral Kuramoto-Sivashinsky integrator on the half-spectrum.
pub struct KsSolver {
    grid: Grid,
    fourier: std::sync::Arc<Fourier>,
    scheme: Etdrk4,
    /// `-i k / 2`, multiplying the spectrum of `u^2`.
    advect: Vec<Complex64>,
    linear_only: bool,
}

impl KsSolver {
    pub fn new(n: usize, length: f64, nu: f64, dt: f64) -> Result<Self> {
        let grid = Grid::new(&[n], &[length])?;
        if !(dt > 0.0 && nu >= 0.0) {
            return Err(Error::InvalidParameter(format!("need dt > 0 and nu >= 0 (got {dt}, {nu})")));
        }
        let k: Vec<f64> = (0..=n / 2).map(|j| TAU * j as f64 / length).collect();
        let lin: Vec<f64> = k.iter().map(|k| k * k - nu * k.powi(4)).collect();
        Ok(KsSolver {
            grid,
            fourier: Fourier::get(&grid),
            scheme: Etdrk4::new(&lin, dt),
            // The derivative of the unpaired Nyquist mode is dropped.
            advect: k
                .iter()
                .enumerate()
                .map(|(j, k)| if 2 * j == n { Complex64::new(0.0, 0.0) } else { Complex64::new(0.0, -0.5 * k) })
                .collect(),
            linear_only: false,
        })
    }

    /// Drops the advection term (for checks against the linear solution).
    pub fn linear_only(mut self) -> Self {
        self.linear_only = true;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn step(&self, v: &mut [Complex64]) {
        let fourier = &self.fourier;
        let advect = &self.advect;
        let linear_only = self.linear_only;
        let mut nonlinear = |v: &[Complex64], out: &mut [Complex64]| {
            if linear_only {
                out.fill(Complex64::new(0.0, 0.0));
                return;
            }
            let mut u = fourier.inverse(v);
            for x in &mut u {
                *x *= *x;
            }
            fourier.forward_into(&u, out);
            for (o, a) in out.iter_mut().zip(advect) {
                *o *= a;
            }
        };
        self.scheme.step(v, &mut nonlinear);
    }

    /// Integrates `steps` steps from `u0`.
    pub fn run(&self, u0: &Field, steps: usize) -> Result<Field> {
        self.grid.ensure_same(u0.grid())?;
        let mut v = self.fourier.forward(u0.values());
        for s in 0..steps {
            self.step(&mut v);
            check_finite(&v, s + 1)?;
        }
        Field::new(self.grid, self.fourier.inverse(&v))
    }
}

fn check_finite(v: &[Complex64], step: usize) -> Result<()> {
    if let Some(i) = v.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::SolverBlowUp {
            step,
            reason: format!("non-finite coefficient at index {i}"),
        });
    }
    Ok(())
}

pub fn ks_simulate(spec: &KsSpec) -> Result<Dataset> {
    if spec.snapshots == 0 || !(spec.duration > 0.0) || !(0.0..1.0).contains(&spec.transient) {
        return Err(Error::InvalidParameter("need snapshots >= 1, duration > 0, transient in [0, 1)".into()));
    }
    let every = (spec.duration / spec.snapshots as f64 / spec.dt).round() as usize;
    if every == 0 {
        return Err(Error::InvalidParameter("snapshot spacing shorter than dt".into()));
    }
    let total = (spec.duration / (1.0 - spec.transient) / spec.dt).round() as usize;
    let record = spec.snapshots * every;
    let skip = total.saturating_sub(record);
    let solver = KsSolver::new(spec.n, spec.length, spec.nu, spec.dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut u0: Vec<f64> = (0..spec.n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            spec.initial_amplitude * z
        })
        .collect();
    let mean = u0.iter().sum::<f64>() / spec.n as f64;
    for u in &mut u0 {
        *u -= mean;
    }
    let fourier = Fourier::get(solver.grid());
    let mut v = fourier.forward(&u0);
    let mut fields = Vec::with_capacity(spec.snapshots);
    for s in 1..=skip + record {
        solver.step(&mut v);
        check_finite(&v, s)?;
        if s > skip && (s - skip) % every == 0 {
            fields.push(Field::new(*solver.grid(), fourier.inverse(&v))?);
        }
    }
    Dataset::new(*solver.grid(), fields)
}

/// Decaying 2D Navier-Stokes in vorticity form on `[0, 2pi)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Turb2dSpec {
    pub n: usize,
    pub reynolds: f64,
    /// Peak wavenumber of `E(k) ~ k^4 exp(-(k/k0)^2)`.
    pub k0: f64,
    /// Initial kinetic energy `(1/2) <|u|^2>`.
    pub energy: f64,
    pub t_end: f64,
    pub dt: f64,
    pub realizations: usize,
    pub cfl_limit: f64,
    pub seed: u64,
}

impl Default for Turb2dSpec {
    fn default() -> Self {
        Turb2dSpec {
            n: 64,
            reynolds: 1000.0,
            k0: 10.0 * 64.0 / 128.0,
            energy: 0.5,
            t_end: 0.1,
            dt: 0.005,
            realizations: 200,
            cfl_limit: 1.0,
            seed: 0,
        }
    }
}

/// Pseudo-spectral vorticity-streamfunction solver with 2/3 dealiasing.
pub struct Turb2dSolver {
    grid: Grid,
    fourier: std::sync::Arc<Fourier>,
    scheme: Etdrk4,
    kx: Vec<f64>,
    ky: Vec<f64>,
    /// `1/|k|^2`, zero at the mean.
    inv_k2: Vec<f64>,
    dealias: Vec<bool>,
    dt: f64,
}

impl Turb2dSolver {
    /// `viscosity = 1/Re`; zero gives the inviscid equations.
    pub fn new(n: usize, viscosity: f64, dt: f64) -> Result<Self> {
        let grid = Grid::new(&[n, n], &[TAU, TAU])?;
        let fourier = Fourier::get(&grid);
        let layout = fourier.layout();
        let mut kx = Vec::with_capacity(grid.half_len());
        let mut ky = Vec::with_capacity(grid.half_len());
        let mut inv_k2 = Vec::with_capacity(grid.half_len());
        let mut dealias = Vec::with_capacity(grid.half_len());
        let mut lin = Vec::with_capacity(grid.half_len());
        let cut = n as f64 / 3.0;
        for k in &layout.wavevectors {
            let (y, x) = (k[0] as f64, k[1] as f64);
            let k2 = x * x + y * y;
            kx.push(x);
            ky.push(y);
            inv_k2.push(if k2 == 0.0 { 0.0 } else { 1.0 / k2 });
            dealias.push(x.abs() < cut && y.abs() < cut);
            lin.push(-viscosity * k2);
        }
        Ok(Turb2dSolver {
            grid,
            scheme: Etdrk4::new(&lin, dt),
            fourier,
            kx,
            ky,
            inv_k2,
            dealias,
            dt,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn velocity(&self, w: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        // psi = w / |k|^2; u = psi_y, v = -psi_x.
        let i = Complex64::new(0.0, 1.0);
        let mut uh = vec![Complex64::new(0.0, 0.0); w.len()];
        let mut vh = uh.clone();
        for j in 0..w.len() {
            let psi = w[j] * self.inv_k2[j];
            uh[j] = i * self.ky[j] * psi;
            vh[j] = -i * self.kx[j] * psi;
        }
        (self.fourier.inverse(&uh), self.fourier.inverse(&vh))
    }

    fn nonlinear(&self, w: &[Complex64], out: &mut [Complex64]) {
        let i = Complex64::new(0.0, 1.0);
        let wd: Vec<Complex64> = w
            .iter()
            .zip(&self.dealias)
            .map(|(c, &keep)| if keep { *c } else { Complex64::new(0.0, 0.0) })
            .collect();
        let (u, v) = self.velocity(&wd);
        let wx: Vec<Complex64> = wd.iter().zip(&self.kx).map(|(c, k)| i * k * c).collect();
        let wy: Vec<Complex64> = wd.iter().zip(&self.ky).map(|(c, k)| i * k * c).collect();
        let (wx, wy) = (self.fourier.inverse(&wx), self.fourier.inverse(&wy));
        let adv: Vec<f64> = (0..u.len()).map(|j| -(u[j] * wx[j] + v[j] * wy[j])).collect();
        self.fourier.forward_into(&adv, out);
        for (o, &keep) in out.iter_mut().zip(&self.dealias) {
            if !keep {
                *o = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Advective CFL number `dt * max(|u|/dx + |v|/dy)`.
    pub fn cfl(&self, w: &[Complex64]) -> f64 {
        let (u, v) = self.velocity(w);
        let dx = TAU / self.grid.sizes()[0] as f64;
        let m = u.iter().zip(&v).map(|(a, b)| a.abs() + b.abs()).fold(0.0, f64::max);
        self.dt * m / dx
    }

    pub fn step(&self, w: &mut [Complex64]) {
        self.scheme.step(w, &mut |v, out| self.nonlinear(v, out));
    }

    /// Integrates `steps` steps, aborting if the CFL number exceeds `cfl_limit`.
    pub fn run(&self, w0: &Field, steps: usize, cfl_limit: f64) -> Result<Field> {
        self.grid.ensure_same(w0.grid())?;
        let mut w = self.fourier.forward(w0.values());
        for s in 0..steps {
            let cfl = self.cfl(&w);
            if cfl > cfl_limit {
                return Err(Error::Cfl {
                    step: s,
                    cfl,
                    limit: cfl_limit,
                });
            }
            self.step(&mut w);
            check_finite(&w, s + 1)?;
        }
        Field::new(self.grid, self.fourier.inverse(&w))
    }

    /// Kinetic energy `(1/2) mean(u^2 + v^2)`.
    pub fn energy(&self, w: &Field) -> f64 {
        let (u, v) = self.velocity(&self.fourier.forward(w.values()));
        0.5 * u.iter().zip(&v).map(|(a, b)| a * a + b * b).sum::<f64>() / u.len() as f64
    }
}

/// Random-phase vorticity with shell spectrum `E(k) ~ k^4 exp(-(k/k0)^2)`,
/// scaled to kinetic energy `energy`.
pub fn turb2d_initial(n: usize, k0: f64, energy: f64, rng: &mut impl Rng) -> Result<Field> {
    let grid = Grid::new(&[n, n], &[TAU, TAU])?;
    let fourier = Fourier::get(&grid);
    let layout = fourier.layout();
    let mut w = vec![Complex64::new(0.0, 0.0); grid.half_len()];
    let cut = n as f64 / 3.0;
    for class in &layout.classes {
        let [ky, kx] = class.wavevector;
        let k = ((kx * kx + ky * ky) as f64).sqrt();
        // Self-conjugate modes (the mean and Nyquist corners) lie outside the band.
        if k == 0.0 || class.self_conjugate || (kx as f64).abs() >= cut || (ky as f64).abs() >= cut {
            continue;
        }
        // E(k) spread over the 2 pi k modes of the shell; |w_k|^2 = k^2 |u_k|^2.
        let e = k.powi(4) * (-(k / k0).powi(2)).exp();
        let amp = (e / (TAU * k) * k * k).sqrt();
        let c = Complex64::from_polar(amp, rng.random_range(0.0..TAU));
        w[class.position] = c;
        if let Some(p) = class.partner {
            w[p] = c.conj();
        }
    }
    let field = Field::new(grid, fourier.inverse(&w))?;
    let solver = Turb2dSolver::new(n, 0.0, 1.0)?;
    let e0 = solver.energy(&field);
    if e0 == 0.0 {
        return Ok(field);
    }
    let s = (energy / e0).sqrt();
    Field::new(grid, field.values().iter().map(|v| v * s).collect())
}

pub fn turb2d_simulate(spec: &Turb2dSpec) -> Result<Dataset> {
    if !(spec.reynolds > 0.0 && spec.dt > 0.0 && spec.t_end >= 0.0) {
        return Err(Error::InvalidParameter("need Re > 0, dt > 0 and t_end >= 0".into()));
    }
    let steps = (spec.t_end / spec.dt).round() as usize;
    if ((steps as f64) * spec.dt - spec.t_end).abs() > 1e-9 * spec.t_end.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "t_end {} is not a whole number of steps of {}",
            spec.t_end, spec.dt
        )));
    }
    let solver = Turb2dSolver::new(spec.n, 1.0 / spec.reynolds, spec.dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut fields = Vec::with_capacity(spec.realizations);
    for _ in 0..spec.realizations {
        let w0 = turb2d_initial(spec.n, spec.k0, spec.energy, &mut rng)?;
        fields.push(solver.run(&w0, steps, spec.cfl_limit)?);
    }
    Dataset::new(*solver.grid(), fields)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hex = String::with_capacity(64);
    for b in Sha256::digest(bytes) {
        write!(hex, "{b:02x}").expect("string write");
    }
    hex
}

/// Hex SHA-256 of the serialized dataset.
pub fn content_hash(data: &Dataset) -> Result<String> {
    Ok(sha256_hex(&encode_dataset(data)?))
}

/// Writes the dataset and a `meta.txt` sidecar (spec echo, seed, hash)
/// in the same directory.
pub fn write_with_meta(data: &Dataset, path: &Path, echo: &str, seed: u64) -> Result<String> {
    let bytes = encode_dataset(data)?;
    let hash = sha256_hex(&bytes);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, &bytes)?;
    let meta_path = path.with_file_name("meta.txt");
    let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let meta = format!(
        "{echo}\nseed={seed}\nfile={file}\nsamples={}\ngrid={}\nsha256={hash}\n",
        data.len(),
        data.grid()
    );
    fs::write(meta_path, meta)?;
    Ok(hash)
}
