//! Periodic grids, real fields, half-spectra and the Fourier truncation operator.
//!
//! Transforms use the unnormalized-forward / `1/N`-inverse convention, so
//! Parseval reads `sum f(x)^2 = (1/N) sum_k |f^(k)|^2` over the full spectrum.
//! Real fields store only the half-spectrum: 1D indices `0..=N/2`, 2D a full
//! first axis (rows, `y`) by a half last axis (columns, `x`, `0..=W/2`).

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Uniform periodic grid in one or two dimensions.
///
/// 2D grids are stored row-major with `sizes = [H, W]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dims: usize,
    sizes: [usize; 2],
    lengths: [f64; 2],
}

impl Grid {
    pub fn new(sizes: &[usize], lengths: &[f64]) -> Result<Self> {
        if sizes.is_empty() || sizes.len() > 2 {
            return Err(Error::InvalidGrid(format!(
                "expected 1 or 2 axes, got {}",
                sizes.len()
            )));
        }
        if lengths.len() != sizes.len() {
            return Err(Error::InvalidGrid(format!(
                "{} sizes but {} lengths",
                sizes.len(),
                lengths.len()
            )));
        }
        for (&n, &l) in sizes.iter().zip(lengths) {
            if n < 4 || n % 2 != 0 {
                return Err(Error::InvalidGrid(format!(
                    "axis size {n} must be even and at least 4"
                )));
            }
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidGrid(format!("axis length {l} must be positive")));
            }
        }
        let mut grid = Grid {
            dims: sizes.len(),
            sizes: [1, 1],
            lengths: [0.0, 0.0],
        };
        grid.sizes[..sizes.len()].copy_from_slice(sizes);
        grid.lengths[..lengths.len()].copy_from_slice(lengths);
        Ok(grid)
    }

    /// `n` points on `[0, 2pi)`.
    pub fn line(n: usize) -> Result<Self> {
        Self::new(&[n], &[TAU])
    }

    /// `h x w` points on `[0, 2pi)^2`.
    pub fn plane(h: usize, w: usize) -> Result<Self> {
        Self::new(&[h, w], &[TAU, TAU])
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes[..self.dims]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dims]
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.sizes[0] * self.sizes[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of stored half-spectrum coefficients.
    pub fn half_len(&self) -> usize {
        match self.dims {
            1 => self.sizes[0] / 2 + 1,
            _ => self.sizes[0] * (self.sizes[1] / 2 + 1),
        }
    }

    /// Coordinate of grid index `i` along `axis`.
    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        self.lengths[axis] * i as f64 / self.sizes[axis] as f64
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: *self,
                found: *other,
            })
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dims {
            1 => write!(f, "{} (L={})", self.sizes[0], self.lengths[0]),
            _ => write!(
                f,
                "{}x{} (L={}x{})",
                self.sizes[0], self.sizes[1], self.lengths[0], self.lengths[1]
            ),
        }
    }
}

/// Real samples on a grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Field { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Field::from_raw(grid, vec![0.0; grid.len()])
    }

    /// Samples `f` at the grid coordinates (`f(x)` in 1D, `f(x, y)` in 2D).
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = match grid.dims() {
            1 => (0..grid.sizes[0])
                .map(|i| f(&[grid.coordinate(0, i)]))
                .collect(),
            _ => {
                let (h, w) = (grid.sizes[0], grid.sizes[1]);
                let mut v = Vec::with_capacity(h * w);
                for r in 0..h {
                    let y = grid.coordinate(0, r);
                    for c in 0..w {
                        v.push(f(&[grid.coordinate(1, c), y]));
                    }
                }
                v
            }
        };
        Field::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Half-spectrum of a real field.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(grid: Grid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.half_len() {
            return Err(Error::LengthMismatch {
                expected: grid.half_len(),
                found: coeffs.len(),
            });
        }
        Ok(Spectrum { grid, coeffs })
    }

    pub fn zeros(grid: Grid) -> Self {
        Spectrum {
            grid,
            coeffs: vec![Complex64::new(0.0, 0.0); grid.half_len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient at a signed wavevector `[k_row, k_col]` (1D: `[k, 0]`),
    /// conjugating when only the partner is stored.
    pub fn at(&self, k: [i64; 2]) -> Complex64 {
        let layout = Fourier::get(&self.grid);
        let layout = layout.layout();
        match layout.position_of(k) {
            Some((pos, false)) => self.coeffs[pos],
            Some((pos, true)) => self.coeffs[pos].conj(),
            None => Complex64::new(0.0, 0.0),
        }
    }

    /// `(1/N) sum |c|^2` over the full spectrum.
    pub fn energy(&self) -> f64 {
        let f = Fourier::get(&self.grid);
        let w = &f.layout().weights;
        self.coeffs
            .iter()
            .zip(w)
            .map(|(c, w)| w * c.norm_sqr())
            .sum::<f64>()
            / self.grid.len() as f64
    }
}

/// A conjugate-symmetric group of Fourier modes: either a single
/// self-conjugate wavevector or a `{k, -k}` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeClass {
    /// Stored position whose coefficient carries the class.
    pub position: usize,
    /// Second stored position holding the conjugate, for pairs whose
    /// partner also lives in the half-spectrum (1D never; 2D columns `0`, `W/2`).
    pub partner: Option<usize>,
    pub self_conjugate: bool,
    pub wavevector: [i64; 2],
}

impl ModeClass {
    /// Real degrees of freedom carried by the class.
    pub fn real_dim(&self) -> usize {
        if self.self_conjugate { 1 } else { 2 }
    }

    pub fn norm_sq(&self) -> i64 {
        self.wavevector[0] * self.wavevector[0] + self.wavevector[1] * self.wavevector[1]
    }
}

/// Index tables shared by every spectrum on one grid.
#[derive(Debug)]
pub struct SpectralLayout {
    grid: Grid,
    /// Signed wavevector of each stored position (1D: `[k, 0]`).
    pub wavevectors: Vec<[i64; 2]>,
    /// Multiplicity of each stored position in the full spectrum (1 or 2).
    pub weights: Vec<f64>,
    /// Class index of each stored position.
    pub class_of: Vec<usize>,
    /// Classes ordered by `|k|^2`, ties broken lexicographically on the
    /// representative wavevector.
    pub classes: Vec<ModeClass>,
}

fn signed(i: usize, n: usize) -> i64 {
    if i <= n / 2 { i as i64 } else { i as i64 - n as i64 }
}

impl SpectralLayout {
    fn build(grid: Grid) -> Self {
        let hl = grid.half_len();
        let mut wavevectors = Vec::with_capacity(hl);
        let mut weights = Vec::with_capacity(hl);
        let mut raw: Vec<ModeClass> = Vec::new();
        let mut class_of = vec![usize::MAX; hl];
        match grid.dims() {
            1 => {
                let n = grid.sizes[0];
                for k in 0..hl {
                    let sc = k == 0 || k == n / 2;
                    wavevectors.push([k as i64, 0]);
                    weights.push(if sc { 1.0 } else { 2.0 });
                    class_of[k] = raw.len();
                    raw.push(ModeClass {
                        position: k,
                        partner: None,
                        self_conjugate: sc,
                        wavevector: [k as i64, 0],
                    });
                }
            }
            _ => {
                let (h, w) = (grid.sizes[0], grid.sizes[1]);
                let wh = w / 2 + 1;
                for r in 0..h {
                    for c in 0..wh {
                        let k = [signed(r, h), c as i64];
                        wavevectors.push(k);
                        weights.push(if c == 0 || c == w / 2 { 1.0 } else { 2.0 });
                    }
                }
                for r in 0..h {
                    for c in 0..wh {
                        let pos = r * wh + c;
                        if class_of[pos] != usize::MAX {
                            continue;
                        }
                        let edge = c == 0 || c == w / 2;
                        if !edge {
                            class_of[pos] = raw.len();
                            raw.push(ModeClass {
                                position: pos,
                                partner: None,
                                self_conjugate: false,
                                wavevector: wavevectors[pos],
                            });
                            continue;
                        }
                        let rc = (h - r) % h;
                        let cpos = rc * wh + c;
                        if cpos == pos {
                            class_of[pos] = raw.len();
                            raw.push(ModeClass {
                                position: pos,
                                partner: None,
                                self_conjugate: true,
                                wavevector: wavevectors[pos],
                            });
                        } else {
                            // Representative has the positive row wavenumber.
                            let (rep, other) = if wavevectors[pos][0] > 0 {
                                (pos, cpos)
                            } else {
                                (cpos, pos)
                            };
                            class_of[pos] = raw.len();
                            class_of[cpos] = raw.len();
                            raw.push(ModeClass {
                                position: rep,
                                partner: Some(other),
                                self_conjugate: false,
                                wavevector: wavevectors[rep],
                            });
                        }
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by_key(|&i| (raw[i].norm_sq(), raw[i].wavevector));
        let mut rank = vec![0; raw.len()];
        for (new, &old) in order.iter().enumerate() {
            rank[old] = new;
        }
        let classes = order.iter().map(|&i| raw[i]).collect();
        for c in class_of.iter_mut() {
            *c = rank[*c];
        }
        SpectralLayout {
            grid,
            wavevectors,
            weights,
            class_of,
            classes,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Stored position of signed wavevector `k`, and whether the stored
    /// coefficient is its conjugate.
    pub fn position_of(&self, k: [i64; 2]) -> Option<(usize, bool)> {
        let wrap = |k: i64, n: usize| k.rem_euclid(n as i64) as usize;
        match self.grid.dims() {
            1 => {
                let n = self.grid.sizes[0];
                let i = wrap(k[0], n);
                if i <= n / 2 {
                    Some((i, false))
                } else {
                    Some((n - i, true))
                }
            }
            _ => {
                let (h, w) = (self.grid.sizes[0], self.grid.sizes[1]);
                let wh = w / 2 + 1;
                let (r, c) = (wrap(k[0], h), wrap(k[1], w));
                if c < wh {
                    Some((r * wh + c, false))
                } else {
                    Some((((h - r) % h) * wh + (w - c), true))
                }
            }
        }
    }
}

/// Cached transform plans plus the layout of one grid.
pub struct Fourier {
    layout: SpectralLayout,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Option<Arc<dyn Fft<f64>>>,
    col_inv: Option<Arc<dyn Fft<f64>>>,
}

type PlanCache = Mutex<HashMap<(usize, usize, usize, u64, u64), Arc<Fourier>>>;

impl Fourier {
    /// Shared plan for `grid`; built on first use.
    pub fn get(grid: &Grid) -> Arc<Fourier> {
        static CACHE: OnceLock<PlanCache> = OnceLock::new();
        let key = (
            grid.dims,
            grid.sizes[0],
            grid.sizes[1],
            grid.lengths[0].to_bits(),
            grid.lengths[1].to_bits(),
        );
        let cache = CACHE.get_or_init(Default::default);
        let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(key)
            .or_insert_with(|| Arc::new(Fourier::plan(*grid)))
            .clone()
    }

    fn plan(grid: Grid) -> Self {
        let mut rp = RealFftPlanner::<f64>::new();
        let n_last = grid.sizes[grid.dims - 1];
        let (col_fwd, col_inv) = if grid.dims == 2 {
            let mut cp = FftPlanner::<f64>::new();
            (
                Some(cp.plan_fft_forward(grid.sizes[0])),
                Some(cp.plan_fft_inverse(grid.sizes[0])),
            )
        } else {
            (None, None)
        };
        Fourier {
            layout: SpectralLayout::build(grid),
            r2c: rp.plan_fft_forward(n_last),
            c2r: rp.plan_fft_inverse(n_last),
            col_fwd,
            col_inv,
        }
    }

    pub fn layout(&self) -> &SpectralLayout {
        &self.layout
    }

    pub fn grid(&self) -> &Grid {
        &self.layout.grid
    }

    /// Unnormalized forward transform of `values` into `out` (half-spectrum).
    pub fn forward_into(&self, values: &[f64], out: &mut [Complex64]) {
        let g = self.layout.grid;
        debug_assert_eq!(values.len(), g.len());
        debug_assert_eq!(out.len(), g.half_len());
        let w = g.sizes[g.dims - 1];
        let wh = w / 2 + 1;
        let rows = if g.dims == 1 { 1 } else { g.sizes[0] };
        let mut buf = vec![0.0; w];
        for r in 0..rows {
            buf.copy_from_slice(&values[r * w..(r + 1) * w]);
            self.r2c
                .process(&mut buf, &mut out[r * wh..(r + 1) * wh])
                .expect("r2c buffer sizes");
        }
        if let Some(col) = &self.col_fwd {
            let h = g.sizes[0];
            let mut cbuf = vec![Complex64::new(0.0, 0.0); h];
            for c in 0..wh {
                for r in 0..h {
                    cbuf[r] = out[r * wh + c];
                }
                col.process(&mut cbuf);
                for r in 0..h {
                    out[r * wh + c] = cbuf[r];
                }
            }
        }
    }

    /// `1/N`-scaled inverse transform. The input is assumed conjugate-consistent;
    /// imaginary parts the real output cannot carry are discarded.
    pub fn inverse_into(&self, coeffs: &[Complex64], out: &mut [f64]) {
        let g = self.layout.grid;
        debug_assert_eq!(coeffs.len(), g.half_len());
        debug_assert_eq!(out.len(), g.len());
        let w = g.sizes[g.dims - 1];
        let wh = w / 2 + 1;
        let rows = if g.dims == 1 { 1 } else { g.sizes[0] };
        let mut work = coeffs.to_vec();
        if let Some(col) = &self.col_inv {
            let h = g.sizes[0];
            let mut cbuf = vec![Complex64::new(0.0, 0.0); h];
            for c in 0..wh {
                for r in 0..h {
                    cbuf[r] = work[r * wh + c];
                }
                col.process(&mut cbuf);
                for r in 0..h {
                    work[r * wh + c] = cbuf[r];
                }
            }
        }
        let scale = 1.0 / g.len() as f64;
        for r in 0..rows {
            let row = &mut work[r * wh..(r + 1) * wh];
            row[0].im = 0.0;
            row[wh - 1].im = 0.0;
            let dst = &mut out[r * w..(r + 1) * w];
            self.c2r.process(row, dst).expect("c2r buffer sizes");
            for v in dst.iter_mut() {
                *v *= scale;
            }
        }
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.layout.grid.half_len()];
        self.forward_into(values, &mut out);
        out
    }

    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.grid.len()];
        self.inverse_into(coeffs, &mut out);
        out
    }
}

/// Forward DFT of a real field.
pub fn dft_forward(f: &Field) -> Spectrum {
    let fourier = Fourier::get(&f.grid);
    Spectrum {
        grid: f.grid,
        coeffs: fourier.forward(&f.values),
    }
}

/// Largest tolerated symmetry defect, relative to the largest coefficient.
const HERMITIAN_TOL: f64 = 1e-9;

/// Checks that `s` is the half-spectrum of some real field.
pub fn check_hermitian(s: &Spectrum) -> Result<()> {
    let fourier = Fourier::get(&s.grid);
    let scale = s.coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
    let tol = HERMITIAN_TOL * scale;
    for class in &fourier.layout().classes {
        let c = s.coeffs[class.position];
        if class.self_conjugate && c.im.abs() > tol {
            return Err(Error::NotHermitian {
                position: class.position,
                defect: c.im.abs(),
            });
        }
        if let Some(p) = class.partner {
            let defect = (c - s.coeffs[p].conj()).norm();
            if defect > tol {
                return Err(Error::NotHermitian {
                    position: p,
                    defect,
                });
            }
        }
    }
    Ok(())
}

/// Inverse DFT; rejects spectra whose inverse would not be real.
pub fn dft_inverse(s: &Spectrum) -> Result<Field> {
    check_hermitian(s)?;
    let fourier = Fourier::get(&s.grid);
    Ok(Field::from_raw(s.grid, fourier.inverse(&s.coeffs)))
}

/// `(T_a f)[j] = f[j - a]` with indices wrapped per axis.
pub fn cyclic_shift(f: &Field, offsets: &[i64]) -> Field {
    let g = f.grid;
    let mut out = vec![0.0; g.len()];
    match g.dims {
        1 => {
            let n = g.sizes[0];
            let a = offsets.first().copied().unwrap_or(0).rem_euclid(n as i64) as usize;
            for (j, &v) in f.values.iter().enumerate() {
                out[(j + a) % n] = v;
            }
        }
        _ => {
            let (h, w) = (g.sizes[0], g.sizes[1]);
            let ar = offsets.first().copied().unwrap_or(0).rem_euclid(h as i64) as usize;
            let ac = offsets.get(1).copied().unwrap_or(0).rem_euclid(w as i64) as usize;
            for r in 0..h {
                let dr = (r + ar) % h;
                for c in 0..w {
                    out[dr * w + (c + ac) % w] = f.values[r * w + c];
                }
            }
        }
    }
    Field::from_raw(g, out)
}

/// Retained Fourier modes of the bottleneck, stored as class indices in
/// canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    grid: Grid,
    classes: Vec<usize>,
    mask: Vec<bool>,
}

impl ModeSet {
    /// The `count` lowest modes in canonical order (`|k|^2`, then lexicographic).
    pub fn lowest(grid: Grid, count: usize) -> Result<Self> {
        let total = Fourier::get(&grid).layout().num_classes();
        if count == 0 || count > total {
            return Err(Error::InvalidParameter(format!(
                "mode count {count} outside 1..={total}"
            )));
        }
        Self::from_classes(grid, (0..count).collect())
    }

    pub fn all(grid: Grid) -> Self {
        let total = Fourier::get(&grid).layout().num_classes();
        Self::from_classes(grid, (0..total).collect()).expect("nonempty")
    }

    /// Modes with `|k|^2 <= radius_sq`.
    pub fn within(grid: Grid, radius_sq: i64) -> Result<Self> {
        let f = Fourier::get(&grid);
        let classes = f
            .layout()
            .classes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm_sq() <= radius_sq)
            .map(|(i, _)| i)
            .collect();
        Self::from_classes(grid, classes)
    }

    pub fn from_classes(grid: Grid, mut classes: Vec<usize>) -> Result<Self> {
        let total = Fourier::get(&grid).layout().num_classes();
        classes.sort_unstable();
        classes.dedup();
        if classes.is_empty() {
            return Err(Error::InvalidParameter("mode set is empty".into()));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c >= total) {
            return Err(Error::InvalidParameter(format!("mode class {bad} out of range")));
        }
        let mut mask = vec![false; total];
        for &c in &classes {
            mask[c] = true;
        }
        Ok(ModeSet {
            grid,
            classes,
            mask,
        })
    }

    /// Builds a set from representative wavevectors (either sign accepted).
    pub fn from_wavevectors(grid: Grid, ks: &[[i64; 2]]) -> Result<Self> {
        let f = Fourier::get(&grid);
        let layout = f.layout();
        let mut classes = Vec::with_capacity(ks.len());
        for &k in ks {
            let in_range = k
                .iter()
                .zip(grid.sizes())
                .all(|(&k, &n)| k.abs() <= n as i64 / 2);
            if !in_range || (grid.dims() == 1 && k[1] != 0) {
                return Err(Error::InvalidParameter(format!(
                    "wavevector {k:?} not on grid {grid}"
                )));
            }
            let (pos, _) = layout.position_of(k).expect("in range");
            classes.push(layout.class_of[pos]);
        }
        Self::from_classes(grid, classes)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn mode_count(&self) -> usize {
        self.classes.len()
    }

    pub fn contains_class(&self, class: usize) -> bool {
        self.mask[class]
    }

    pub fn wavevectors(&self) -> Vec<[i64; 2]> {
        let f = Fourier::get(&self.grid);
        self.classes
            .iter()
            .map(|&c| f.layout().classes[c].wavevector)
            .collect()
    }

    /// Independent real degrees of freedom of the retained modes.
    pub fn latent_dim(&self) -> usize {
        let f = Fourier::get(&self.grid);
        self.classes
            .iter()
            .map(|&c| f.layout().classes[c].real_dim())
            .sum()
    }

    /// Zeroes, in place, every stored coefficient outside the set.
    pub fn apply(&self, coeffs: &mut [Complex64], layout: &SpectralLayout) {
        for (c, &class) in coeffs.iter_mut().zip(&layout.class_of) {
            if !self.mask[class] {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }
}

/// Fourier projection: coefficients outside `m` set to zero.
pub fn truncate(s: &Spectrum, m: &ModeSet) -> Result<Spectrum> {
    s.grid.ensure_same(&m.grid)?;
    let f = Fourier::get(&s.grid);
    let mut out = s.clone();
    m.apply(&mut out.coeffs, f.layout());
    Ok(out)
}

/// Packs the retained coefficients of a truncated spectrum into a real vector:
/// one entry per self-conjugate mode, `(re, im)` per conjugate pair, in
/// canonical mode order.
pub fn latent_pack(s: &Spectrum, m: &ModeSet) -> Result<Vec<f64>> {
    s.grid.ensure_same(&m.grid)?;
    let f = Fourier::get(&s.grid);
    Ok(pack_coeffs(&s.coeffs, m, f.layout()))
}

pub(crate) fn pack_coeffs(coeffs: &[Complex64], m: &ModeSet, layout: &SpectralLayout) -> Vec<f64> {
    let mut z = Vec::with_capacity(m.latent_dim());
    for &ci in &m.classes {
        let class = &layout.classes[ci];
        let c = coeffs[class.position];
        z.push(c.re);
        if !class.self_conjugate {
            z.push(c.im);
        }
    }
    z
}

/// Inverse of [`latent_pack`]: a spectrum supported on `m`.
pub fn latent_unpack(z: &[f64], m: &ModeSet) -> Result<Spectrum> {
    let f = Fourier::get(&m.grid);
    let mut s = Spectrum::zeros(m.grid);
    unpack_coeffs(z, m, f.layout(), &mut s.coeffs)?;
    Ok(s)
}

pub(crate) fn unpack_coeffs(
    z: &[f64],
    m: &ModeSet,
    layout: &SpectralLayout,
    out: &mut [Complex64],
) -> Result<()> {
    if z.len() != m.latent_dim() {
        return Err(Error::LengthMismatch {
            expected: m.latent_dim(),
            found: z.len(),
        });
    }
    let mut it = z.iter();
    for &ci in &m.classes {
        let class = &layout.classes[ci];
        let re = *it.next().expect("length checked");
        let im = if class.self_conjugate {
            0.0
        } else {
            *it.next().expect("length checked")
        };
        let c = Complex64::new(re, im);
        out[class.position] = c;
        if let Some(p) = class.partner {
            out[p] = c.conj();
        }
    }
    Ok(())
}
