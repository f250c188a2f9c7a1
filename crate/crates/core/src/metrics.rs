//! FFT-truncation baseline, reconstruction metrics, energy spectra,
//! latent covariance and latent-dimension sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::model::{Architecture, FineModel};
use crate::spectral::{Field, Fourier, ModeSet};
use crate::train::{TrainConfig, train};

/// Linear low-pass projection onto `m`.
pub fn fft_baseline(f: &Field, m: &ModeSet) -> Result<Field> {
    f.grid().ensure_same(m.grid())?;
    let fourier = Fourier::get(f.grid());
    let mut spec = fourier.forward(f.values());
    m.apply(&mut spec, fourier.layout());
    Field::new(*f.grid(), fourier.inverse(&spec))
}

fn sse(a: &Field, b: &Field) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Summed squared error of the baseline over the dataset.
pub fn baseline_sse(data: &Dataset, m: &ModeSet) -> Result<f64> {
    data.fields().iter().map(|f| Ok(sse(f, &fft_baseline(f, m)?))).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub samples: usize,
    pub sse: f64,
    pub mse_per_point: f64,
    pub per_sample: Vec<f64>,
    pub baseline_sse: f64,
    pub baseline_per_sample: Vec<f64>,
    /// `sse / baseline_sse`; NaN when the baseline is exact.
    pub ratio: f64,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let max = self.per_sample.iter().fold(0.0f64, |a, &b| a.max(b));
        let median = {
            let mut v = self.per_sample.clone();
            v.sort_by(f64::total_cmp);
            if v.is_empty() { 0.0 } else { v[v.len() / 2] }
        };
        let mut out = String::from("metric,value\n");
        for (k, v) in [
            ("samples", self.samples as f64),
            ("sse", self.sse),
            ("mse_per_point", self.mse_per_point),
            ("sample_sse_median", median),
            ("sample_sse_max", max),
            ("baseline_sse", self.baseline_sse),
            ("ratio", self.ratio),
        ] {
            writeln!(out, "{k},{v:.17e}").expect("string write");
        }
        out
    }
}

/// Model and baseline errors over the dataset, using the model's bottleneck.
pub fn evaluate(model: &FineModel, data: &Dataset) -> Result<MetricsReport> {
    data.grid().ensure_same(model.grid())?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let ev = model.evaluator();
    let mut per_sample = Vec::with_capacity(data.len());
    let mut baseline_per_sample = Vec::with_capacity(data.len());
    for f in data.fields() {
        per_sample.push(ev.sse(f)?);
        baseline_per_sample.push(sse(f, &fft_baseline(f, model.bottleneck())?));
    }
    let total: f64 = per_sample.iter().sum();
    let baseline: f64 = baseline_per_sample.iter().sum();
    Ok(MetricsReport {
        samples: data.len(),
        sse: total,
        mse_per_point: total / (data.len() * data.grid().len()) as f64,
        per_sample,
        baseline_sse: baseline,
        baseline_per_sample,
        ratio: if baseline > 0.0 { total / baseline } else { f64::NAN },
    })
}

/// Second moments `C_ij = |<z_i^* z_j>|` of complex latents, one per retained mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCovariance {
    pub modes: Vec<[i64; 2]>,
    pub c: Vec<Vec<f64>>,
    /// `C_ij / sqrt(C_ii C_jj)`.
    pub normalized: Vec<Vec<f64>>,
    /// Latent of every sample, `[sample][mode]`.
    pub samples: Vec<Vec<Complex64>>,
}

impl LatentCovariance {
    pub fn from_samples(modes: Vec<[i64; 2]>, samples: Vec<Vec<Complex64>>) -> Result<Self> {
        let d = modes.len();
        if samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if let Some(bad) = samples.iter().find(|s| s.len() != d) {
            return Err(Error::LengthMismatch {
                expected: d,
                found: bad.len(),
            });
        }
        let m = samples.len() as f64;
        let mut c = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in i..d {
                let s: Complex64 = samples.iter().map(|z| z[i].conj() * z[j]).sum();
                let v = (s / m).norm();
                c[i][j] = v;
                c[j][i] = v;
            }
        }
        let normalized = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let den = (c[i][i] * c[j][j]).sqrt();
                        if den > 0.0 { c[i][j] / den } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        Ok(LatentCovariance {
            modes,
            c,
            normalized,
            samples,
        })
    }

    /// Largest normalized off-diagonal entry among the listed mode indices.
    pub fn max_off_diagonal(&self, among: &[usize]) -> f64 {
        let mut best = 0.0f64;
        for (a, &i) in among.iter().enumerate() {
            for &j in &among[a + 1..] {
                best = best.max(self.normalized[i][j]);
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,ki_row,ki_col,kj_row,kj_col,c,normalized\n");
        for (i, ki) in self.modes.iter().enumerate() {
            for (j, kj) in self.modes.iter().enumerate() {
                writeln!(
                    out,
                    "{i},{j},{},{},{},{},{:.17e},{:.17e}",
                    ki[0], ki[1], kj[0], kj[1], self.c[i][j], self.normalized[i][j]
                )
                .expect("string write");
            }
        }
        out
    }

    /// One row per (sample, mode): the complex latent for scatter plots.
    pub fn scatter_csv(&self) -> String {
        let mut out = String::from("sample,k_row,k_col,re,im\n");
        for (s, z) in self.samples.iter().enumerate() {
            for (k, v) in self.modes.iter().zip(z) {
                writeln!(out, "{s},{},{},{:.17e},{:.17e}", k[0], k[1], v.re, v.im).expect("string write");
            }
        }
        out
    }
}

/// Complex encoder latents: the retained coefficient of each mode, labelled
/// by its wavevector.
pub fn latent_covariance(model: &FineModel, data: &Dataset) -> Result<LatentCovariance> {
    let m = model.bottleneck();
    let fourier = Fourier::get(model.grid());
    let layout = fourier.layout();
    let ev = model.evaluator();
    let mut samples = Vec::with_capacity(data.len());
    for f in data.fields() {
        let z = ev.encode(f)?;
        let mut it = z.iter();
        let mut row = Vec::with_capacity(m.mode_count());
        for &ci in m.classes() {
            let re = *it.next().expect("packed length");
            let im = if layout.classes[ci].self_conjugate {
                0.0
            } else {
                *it.next().expect("packed length")
            };
            row.push(Complex64::new(re, im));
        }
        samples.push(row);
    }
    LatentCovariance::from_samples(m.wavevectors(), samples)
}

/// Energy per shell, with shells summing to `sum f^2`: 1D shell `k` holds
/// wavenumbers `+-k`; 2D shells bin `|k|` to the nearest integer.
pub fn energy_spectrum(f: &Field) -> Vec<(usize, f64)> {
    let fourier = Fourier::get(f.grid());
    let layout = fourier.layout();
    let spec = fourier.forward(f.values());
    let n = f.grid().len() as f64;
    let mut shells: BTreeMap<usize, f64> = BTreeMap::new();
    for (pos, c) in spec.iter().enumerate() {
        let k = layout.wavevectors[pos];
        let shell = ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt().round() as usize;
        *shells.entry(shell).or_default() += layout.weights[pos] * c.norm_sqr() / n;
    }
    let top = shells.keys().last().copied().unwrap_or(0);
    (0..=top).map(|s| (s, shells.get(&s).copied().unwrap_or(0.0))).collect()
}

/// Shell energies summed over every sample.
pub fn dataset_spectrum(data: &Dataset) -> Vec<(usize, f64)> {
    let mut total: Vec<(usize, f64)> = Vec::new();
    for f in data.fields() {
        for (i, (s, e)) in energy_spectrum(f).into_iter().enumerate() {
            if i < total.len() {
                total[i].1 += e;
            } else {
                total.push((s, e));
            }
        }
    }
    total
}

pub fn spectrum_csv(shells: &[(usize, f64)]) -> String {
    let mut out = String::from("shell,energy\n");
    for (s, e) in shells {
        writeln!(out, "{s},{e:.17e}").expect("string write");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub dim: usize,
    pub params: usize,
    pub final_loss_sum: f64,
    pub final_loss_mean: f64,
}

const SWEEP_HEADER: &str = "dim,params,final_loss_sum,final_loss_mean";

fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_HEADER) {
        return Err(Error::Format(format!("{} lacks the sweep header", path.display())));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let bad = || Error::Format(format!("malformed sweep row '{l}'"));
            let c: Vec<&str> = l.split(',').collect();
            if c.len() != 4 {
                return Err(bad());
            }
            Ok(SweepRow {
                dim: c[0].parse().map_err(|_| bad())?,
                params: c[1].parse().map_err(|_| bad())?,
                final_loss_sum: c[2].parse().map_err(|_| bad())?,
                final_loss_mean: c[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Trains one identity-initialized model per latent dimension (mode-class
/// count) with identical settings. With `csv`, completed dimensions already
/// in the file are skipped and new rows are appended as they finish.
pub fn sweep_latent_dim(
    arch: &Architecture,
    data: &Dataset,
    dims: &[usize],
    cfg: &TrainConfig,
    csv: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if dims.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("sweep dimensions must be strictly ascending".into()));
    }
    let mut done = match csv {
        Some(p) => read_sweep(p)?,
        None => Vec::new(),
    };
    if let Some(p) = csv {
        if !p.is_file() {
            fs::write(p, format!("{SWEEP_HEADER}\n"))?;
        }
    }
    let grid = *data.grid();
    let mut rows = Vec::with_capacity(dims.len());
    for &dim in dims {
        if let Some(row) = done.iter().find(|r| r.dim == dim) {
            rows.push(row.clone());
            continue;
        }
        let mut model = FineModel::identity(grid, ModeSet::lowest(grid, dim)?, arch)?;
        let run = train(&mut model, data, cfg, None)?;
        let row = SweepRow {
            dim,
            params: model.num_params(),
            final_loss_sum: run.final_loss(),
            final_loss_mean: run.final_loss() / data.len() as f64,
        };
        if let Some(p) = csv {
            let mut text = fs::read_to_string(p)?;
            writeln!(
                text,
                "{},{},{:.17e},{:.17e}",
                row.dim, row.params, row.final_loss_sum, row.final_loss_mean
            )
            .expect("string write");
            fs::write(p, text)?;
        }
        done.push(row.clone());
        rows.push(row);
    }
    Ok(rows)
}
