//! Adam training under invertibility constraints, run directories and
//! gradient checking.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter, Dataset};
use crate::model::FineModel;
use crate::spectral::Field;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Full,
    MiniBatch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossReduction {
    /// Summed squared error over samples and grid points.
    Sum,
    /// The sum divided by the sample count.
    Mean,
}

impl fmt::Display for LossReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossReduction::Sum => "sum",
            LossReduction::Mean => "mean",
        })
    }
}

impl FromStr for LossReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(LossReduction::Sum),
            "mean" => Ok(LossReduction::Mean),
            other => Err(Error::InvalidParameter(format!(
                "unknown loss reduction '{other}' (expected sum or mean)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: BatchMode,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub seed: u64,
    pub reduction: LossReduction,
    /// Checkpoint cadence in epochs; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch: BatchMode::Full,
            lr0: 1e-3,
            decay_factor: 0.9,
            decay_every: 20,
            seed: 0,
            reduction: LossReduction::Sum,
            checkpoint_every: 0,
            clip_norm: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::InvalidParameter(format!("lr0 {} must be positive", self.lr0)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "decay factor {} must lie in (0, 1]",
                self.decay_factor
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::InvalidParameter("decay interval must be at least 1".into()));
        }
        if self.batch == BatchMode::MiniBatch(0) {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::InvalidParameter("clip norm must be non-negative".into()));
        }
        Ok(())
    }

    /// `lr0 * factor^floor(epoch / every)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

const ADAM_MAGIC: &[u8; 8] = b"FINEADM1";

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(ADAM_MAGIC);
        w.u64(self.step);
        w.f64(self.beta1);
        w.f64(self.beta2);
        w.f64(self.eps);
        w.u64(self.m.len() as u64);
        w.f64s(&self.m);
        w.f64s(&self.v);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(ADAM_MAGIC)?;
        let step = r.u64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let eps = r.f64()?;
        let n = r.u64()? as usize;
        let m = r.f64s(n)?;
        let v = r.f64s(n)?;
        r.finish()?;
        Ok(AdamState {
            m,
            v,
            step,
            beta1,
            beta2,
            eps,
        })
    }
}

/// Bias-corrected Adam update of `params` in place.
pub fn adam_update(params: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            found: grad.len().min(state.m.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// One optimizer step on the model followed by constraint projection.
pub fn adam_step(model: &mut FineModel, grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    let mut p = model.params();
    adam_update(&mut p, grad, state, lr)?;
    model.set_params(&p)?;
    model.project_constraints();
    Ok(())
}

/// Scales `grad` so its Euclidean norm is at most `limit`; returns the original norm.
pub fn clip_global_norm(grad: &mut [f64], limit: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if limit > 0.0 && norm > limit {
        let s = limit / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// Samples per reduction block. The block partition is fixed, so the summed
/// gradient does not depend on how many threads evaluate the blocks.
const BLOCK: usize = 8;

/// Summed squared error and its gradient over the listed samples.
pub fn batch_sse_and_grad(model: &FineModel, samples: &[&Field]) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let np = model.num_params();
    let ev = model.evaluator();
    let blocks: Vec<Result<(f64, Vec<f64>)>> = samples
        .par_chunks(BLOCK)
        .map(|chunk| {
            let mut grad = vec![0.0; np];
            let mut sse = 0.0;
            for f in chunk {
                sse += ev.sse_and_grad(f, &mut grad)?;
            }
            Ok((sse, grad))
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; np];
    for block in blocks {
        let (s, g) = block?;
        total += s;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// Summed squared reconstruction error over the dataset.
pub fn dataset_sse(model: &FineModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let ev = model.evaluator();
    let fields = data.fields();
    let blocks: Vec<Result<f64>> = fields
        .par_chunks(BLOCK)
        .map(|chunk| chunk.iter().map(|f| ev.sse(f)).sum::<Result<f64>>())
        .collect();
    blocks.into_iter().sum()
}

/// Loss under the given reduction.
pub fn loss(model: &FineModel, data: &Dataset, reduction: LossReduction) -> Result<f64> {
    let sse = dataset_sse(model, data)?;
    Ok(match reduction {
        LossReduction::Sum => sse,
        LossReduction::Mean => sse / data.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_sum: f64,
    pub loss_mean: f64,
    pub seconds: f64,
}

impl EpochRecord {
    fn csv(&self) -> String {
        format!(
            "{},{:e},{:.17e},{:.17e},{:.6}",
            self.epoch, self.lr, self.loss_sum, self.loss_mean, self.seconds
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Format(format!("malformed loss.csv row '{line}'"));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad());
        }
        Ok(EpochRecord {
            epoch: cols[0].parse().map_err(|_| bad())?,
            lr: cols[1].parse().map_err(|_| bad())?,
            loss_sum: cols[2].parse().map_err(|_| bad())?,
            loss_mean: cols[3].parse().map_err(|_| bad())?,
            seconds: cols[4].parse().map_err(|_| bad())?,
        })
    }
}

/// Loss history of a run. Row `e` describes the model after `e` epochs;
/// row 0 is the untrained model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub history: Vec<EpochRecord>,
    pub num_params: usize,
    pub seconds: f64,
}

impl TrainRun {
    pub fn initial_loss(&self) -> f64 {
        self.history[0].loss_sum
    }

    pub fn final_loss(&self) -> f64 {
        self.history.last().expect("row 0 always present").loss_sum
    }
}

const LOSS_HEADER: &str = "epoch,lr,loss_sum,loss_mean,seconds";

/// Files of one training run: `config.txt`, `loss.csv`,
/// `model_epochN.bin` / `adam_epochN.bin` checkpoints and `final.bin`.
#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates (or truncates) a run directory and echoes the configuration.
    pub fn create(path: &Path, config_echo: &str) -> Result<Self> {
        fs::create_dir_all(path)?;
        fs::write(path.join("config.txt"), config_echo)?;
        fs::write(path.join("loss.csv"), format!("{LOSS_HEADER}\n"))?;
        Ok(RunDir {
            path: path.to_path_buf(),
        })
    }

    pub fn open(path: &Path) -> Result<Self> {
        if !path.join("loss.csv").is_file() {
            return Err(Error::Format(format!("{} is not a run directory", path.display())));
        }
        Ok(RunDir {
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, rec: &EpochRecord) -> Result<()> {
        let mut f = fs::OpenOptions::new().append(true).open(self.path.join("loss.csv"))?;
        writeln!(f, "{}", rec.csv())?;
        Ok(())
    }

    pub fn history(&self) -> Result<Vec<EpochRecord>> {
        let text = fs::read_to_string(self.path.join("loss.csv"))?;
        let mut lines = text.lines();
        if lines.next() != Some(LOSS_HEADER) {
            return Err(Error::Format("loss.csv header missing".into()));
        }
        lines.filter(|l| !l.is_empty()).map(EpochRecord::parse).collect()
    }

    fn rewrite_history(&self, rows: &[EpochRecord]) -> Result<()> {
        let mut text = format!("{LOSS_HEADER}\n");
        for r in rows {
            text.push_str(&r.csv());
            text.push('\n');
        }
        fs::write(self.path.join("loss.csv"), text)?;
        Ok(())
    }

    pub fn save_checkpoint(&self, epoch: usize, model: &FineModel, adam: &AdamState) -> Result<()> {
        model.save(&self.path.join(format!("model_epoch{epoch}.bin")))?;
        fs::write(self.path.join(format!("adam_epoch{epoch}.bin")), adam.to_bytes())?;
        Ok(())
    }

    /// Most recent checkpoint that has both model and optimizer state.
    pub fn latest_checkpoint(&self) -> Result<Option<usize>> {
        let mut best = None;
        for entry in fs::read_dir(&self.path)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            let epoch = name
                .strip_prefix("model_epoch")
                .and_then(|s| s.strip_suffix(".bin"))
                .and_then(|s| s.parse::<usize>().ok());
            if let Some(e) = epoch {
                if self.path.join(format!("adam_epoch{e}.bin")).is_file() && best.is_none_or(|b| e > b) {
                    best = Some(e);
                }
            }
        }
        Ok(best)
    }

    pub fn load_checkpoint(&self, epoch: usize) -> Result<(FineModel, AdamState)> {
        let model = FineModel::load(&self.path.join(format!("model_epoch{epoch}.bin")))?;
        let adam = AdamState::from_bytes(&fs::read(self.path.join(format!("adam_epoch{epoch}.bin")))?)?;
        if adam.m.len() != model.num_params() {
            return Err(Error::Format("optimizer state does not match model".into()));
        }
        Ok((model, adam))
    }

    pub fn save_final(&self, model: &FineModel) -> Result<()> {
        model.save(&self.path.join("final.bin"))
    }
}

/// Where a training call starts from.
pub struct Resume {
    pub epoch: usize,
    pub adam: AdamState,
    pub history: Vec<EpochRecord>,
}

/// Trains `model` in place. On a non-finite loss the model is restored to
/// the last finite state (also written to the run directory as
/// `last_good.bin`) and the error is returned.
pub fn train(
    model: &mut FineModel,
    data: &Dataset,
    cfg: &TrainConfig,
    run: Option<&RunDir>,
) -> Result<TrainRun> {
    train_from(model, data, cfg, run, None)
}

/// Continues a run from the latest checkpoint in `run`.
pub fn resume(data: &Dataset, cfg: &TrainConfig, run: &RunDir) -> Result<(FineModel, TrainRun)> {
    let epoch = run
        .latest_checkpoint()?
        .ok_or_else(|| Error::Format(format!("no checkpoint in {}", run.path().display())))?;
    let (mut model, adam) = run.load_checkpoint(epoch)?;
    data.grid().ensure_same(model.grid())?;
    let history: Vec<EpochRecord> = run.history()?.into_iter().filter(|r| r.epoch <= epoch).collect();
    if history.len() != epoch + 1 || history.iter().enumerate().any(|(i, r)| r.epoch != i) {
        return Err(Error::Format("loss.csv does not cover the checkpoint epochs".into()));
    }
    run.rewrite_history(&history)?;
    let state = Resume { epoch, adam, history };
    let out = train_from(&mut model, data, cfg, Some(run), Some(state))?;
    Ok((model, out))
}

pub fn train_from(
    model: &mut FineModel,
    data: &Dataset,
    cfg: &TrainConfig,
    run: Option<&RunDir>,
    start: Option<Resume>,
) -> Result<TrainRun> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    data.grid().ensure_same(model.grid())?;
    let clock = Instant::now();
    let m = data.len() as f64;
    let np = model.num_params();
    let record = |epoch: usize, lr: f64, sse: f64, seconds: f64| EpochRecord {
        epoch,
        lr,
        loss_sum: sse,
        loss_mean: sse / m,
        seconds,
    };

    let (first_epoch, mut adam, mut history) = match start {
        Some(r) => (r.epoch, r.adam, r.history),
        None => {
            let sse = dataset_sse(model, data)?;
            if !sse.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: 0 });
            }
            let rec = record(0, cfg.lr_at(0), sse, 0.0);
            if let Some(run) = run {
                run.append(&rec)?;
            }
            (0, AdamState::new(np), vec![rec])
        }
    };
    if adam.m.len() != np {
        return Err(Error::LengthMismatch {
            expected: np,
            found: adam.m.len(),
        });
    }
    let initial = history[0].loss_sum;
    let mut written = history.len();
    let fields: Vec<&Field> = data.fields().iter().collect();
    let mut good = model.clone();
    let abort = |model: &mut FineModel, good: &FineModel, epoch: usize| -> Result<TrainRun> {
        *model = good.clone();
        if let Some(run) = run {
            model.save(&run.path().join("last_good.bin"))?;
        }
        Err(Error::NonFiniteLoss { epoch })
    };

    for epoch in first_epoch..cfg.epochs {
        let t0 = Instant::now();
        let lr = cfg.lr_at(epoch);
        match cfg.batch {
            BatchMode::Full => {
                let (sse, mut grad) = batch_sse_and_grad(model, &fields)?;
                // The pre-step loss is the exact loss after the previous epoch.
                if !sse.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return abort(model, &good, epoch);
                }
                if epoch > first_epoch {
                    history.last_mut().expect("nonempty").loss_sum = sse;
                    history.last_mut().expect("nonempty").loss_mean = sse / m;
                }
                good = model.clone();
                scale_for_reduction(&mut grad, cfg.reduction, m);
                clip_global_norm(&mut grad, cfg.clip_norm);
                adam_step(model, &grad, &mut adam, lr)?;
            }
            BatchMode::MiniBatch(size) => {
                let mut order: Vec<usize> = (0..fields.len()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(epoch as u64);
                order.shuffle(&mut rng);
                good = model.clone();
                for chunk in order.chunks(size) {
                    let batch: Vec<&Field> = chunk.iter().map(|&i| fields[i]).collect();
                    let (sse, mut grad) = batch_sse_and_grad(model, &batch)?;
                    if !sse.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                        return abort(model, &good, epoch);
                    }
                    scale_for_reduction(&mut grad, cfg.reduction, batch.len() as f64);
                    clip_global_norm(&mut grad, cfg.clip_norm);
                    adam_step(model, &grad, &mut adam, lr)?;
                }
            }
        }
        let done = epoch + 1;
        // Full-batch rows are normally filled in by the next epoch's forward
        // pass; the last row, checkpoint rows and mini-batch rows are
        // evaluated here.
        let exact = matches!(cfg.batch, BatchMode::MiniBatch(_))
            || done == cfg.epochs
            || (run.is_some() && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0);
        let sse = if exact {
            let sse = dataset_sse(model, data)?;
            if !sse.is_finite() {
                return abort(model, &good, done);
            }
            sse
        } else {
            f64::NAN
        };
        history.push(record(done, lr, sse, t0.elapsed().as_secs_f64()));
        if let Some(run) = run {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                run.save_checkpoint(done, model, &adam)?;
            }
            while written < history.len() && history[written].loss_sum.is_finite() {
                run.append(&history[written])?;
                written += 1;
            }
        }
    }
    if let Some(run) = run {
        if cfg.checkpoint_every > 0 && cfg.epochs % cfg.checkpoint_every != 0 && cfg.epochs > first_epoch {
            run.save_checkpoint(cfg.epochs, model, &adam)?;
        }
        run.save_final(model)?;
    }
    let out = TrainRun {
        history,
        num_params: np,
        seconds: clock.elapsed().as_secs_f64(),
    };
    let last = out.final_loss();
    // A model that cannot move the loss still drifts by summation rounding.
    if last > initial * (1.0 + 1e-9) {
        return Err(Error::LossIncreased { initial, last });
    }
    Ok(out)
}

fn scale_for_reduction(grad: &mut [f64], reduction: LossReduction, count: f64) {
    if reduction == LossReduction::Mean {
        for g in grad.iter_mut() {
            *g /= count;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `max(|a - n| - noise, 0) / max(|a|, |n|, 1e-2 max_k |n_k|)` per
    /// parameter, where `noise = 10 eps L / h` bounds the rounding error of a
    /// central difference of a loss of size `L`. Entries far below the
    /// largest are judged on its scale.
    pub relative_error: Vec<f64>,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= self.tolerance
    }
}

/// Central-difference check (step `1e-6`) of the summed squared
/// reconstruction error gradient of one field.
pub fn grad_check(model: &FineModel, f: &Field, tolerance: f64) -> Result<GradCheckReport> {
    grad_check_with(model, f, tolerance, |m, f| {
        let mut g = vec![0.0; m.num_params()];
        m.evaluator().sse_and_grad(f, &mut g)?;
        Ok(g)
    })
}

/// As [`grad_check`] with a caller-supplied analytic gradient.
pub fn grad_check_with(
    model: &FineModel,
    f: &Field,
    tolerance: f64,
    analytic: impl Fn(&FineModel, &Field) -> Result<Vec<f64>>,
) -> Result<GradCheckReport> {
    const H: f64 = 1e-6;
    let analytic = analytic(model, f)?;
    let noise = 10.0 * f64::EPSILON * model.evaluator().sse(f)? / H;
    let base = model.params();
    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        let mut eval = |d: f64| -> Result<f64> {
            let mut p = base.clone();
            p[k] += d;
            probe.set_params(&p)?;
            probe.evaluator().sse(f)
        };
        numeric.push((eval(H)? - eval(-H)?) / (2.0 * H));
    }
    let floor = 1e-2 * numeric.iter().fold(0.0f64, |a, n| a.max(n.abs()));
    let relative_error: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let denom = a.abs().max(n.abs()).max(floor);
            let err = ((a - n).abs() - noise).max(0.0);
            if denom == 0.0 { 0.0 } else { err / denom }
        })
        .collect();
    let max_relative_error = relative_error.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(GradCheckReport {
        analytic,
        numeric,
        relative_error,
        max_relative_error,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ActivationFamily;
    use crate::model::Architecture;
    use crate::spectral::{Grid, ModeSet};
    use rand::Rng;

    fn toy_data(n: usize, samples: usize, seed: u64) -> Dataset {
        let g = Grid::line(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fields = (0..samples)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3));
                Field::from_fn(g, |p| (p[0] + a + (2.0 * p[0] + b).cos()).sin().tanh()).unwrap()
            })
            .collect();
        Dataset::new(g, fields).unwrap()
    }

    fn identity(data: &Dataset, modes: usize) -> FineModel {
        let g = *data.grid();
        let arch = Architecture {
            depth: 2,
            segments: 8,
            ..Architecture::default()
        };
        FineModel::identity(g, ModeSet::lowest(g, modes).unwrap(), &arch).unwrap()
    }

    #[test]
    fn lr_schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert_eq!(cfg.lr_at(19), 1e-3);
        assert!((cfg.lr_at(40) - 1e-3 * 0.81).abs() < 1e-18);
        for e in 0..500 {
            assert!(cfg.lr_at(e + 1) <= cfg.lr_at(e));
        }
    }

    #[test]
    fn adam_examples() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_update(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
        let mut q = vec![0.0];
        let mut s = AdamState::new(1);
        adam_update(&mut q, &[3.0], &mut s, 0.01).unwrap();
        assert!((q[0] + 0.01).abs() < 1e-9);
        let mut q = vec![0.0];
        let mut s = AdamState::new(1);
        adam_update(&mut q, &[-0.5], &mut s, 0.01).unwrap();
        assert!((q[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_state_round_trips() {
        let mut s = AdamState::new(3);
        adam_update(&mut [0.0; 3], &[1.0, 2.0, -3.0], &mut s, 0.1).unwrap();
        assert_eq!(AdamState::from_bytes(&s.to_bytes()).unwrap(), s);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![30.0, 40.0];
        assert_eq!(clip_global_norm(&mut g, 10.0), 50.0);
        assert!((g[0] - 6.0).abs() < 1e-12 && (g[1] - 8.0).abs() < 1e-12);
        let mut small = vec![0.1];
        clip_global_norm(&mut small, 10.0);
        assert_eq!(small, vec![0.1]);
    }

    #[test]
    fn residual_step_keeps_lipschitz_bound() {
        let data = toy_data(16, 4, 1);
        let g = *data.grid();
        let arch = Architecture {
            depth: 2,
            family: ActivationFamily::Residual,
            ..Architecture::default()
        };
        let mut model = FineModel::identity(g, ModeSet::lowest(g, 2).unwrap(), &arch).unwrap();
        let mut adam = AdamState::new(model.num_params());
        let fields: Vec<&Field> = data.fields().iter().collect();
        for _ in 0..20 {
            let (_, grad) = batch_sse_and_grad(&model, &fields).unwrap();
            adam_step(&mut model, &grad, &mut adam, 0.5).unwrap();
            for layer in model.layers() {
                if let crate::layers::Activation::Residual(r) = &layer.activation {
                    assert!(r.alpha * r.lipschitz_bound() <= r.lipschitz_cap * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn zero_epochs_reports_baseline() {
        let data = toy_data(32, 5, 2);
        let mut model = identity(&data, 2);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let run = train(&mut model, &data, &cfg, None).unwrap();
        assert_eq!(run.history.len(), 1);
        assert_eq!(run.initial_loss(), dataset_sse(&model, &data).unwrap());
    }

    #[test]
    fn ending_above_the_start_is_an_error() {
        let data = toy_data(32, 5, 2);
        let mut model = identity(&data, 2);
        let cfg = TrainConfig {
            epochs: 3,
            lr0: 2.0,
            ..TrainConfig::default()
        };
        match train(&mut model, &data, &cfg, None) {
            Err(e @ Error::LossIncreased { .. }) => assert!(e.is_numerical()),
            other => panic!("expected LossIncreased, got {other:?}"),
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data = toy_data(32, 6, 3);
        let cfg = TrainConfig {
            epochs: 30,
            lr0: 1e-2,
            ..TrainConfig::default()
        };
        let mut a = identity(&data, 2);
        let mut b = a.clone();
        let ra = train(&mut a, &data, &cfg, None).unwrap();
        let rb = train(&mut b, &data, &cfg, None).unwrap();
        assert!(ra.final_loss() < ra.initial_loss());
        let la: Vec<u64> = ra.history.iter().map(|r| r.loss_sum.to_bits()).collect();
        let lb: Vec<u64> = rb.history.iter().map(|r| r.loss_sum.to_bits()).collect();
        assert_eq!(la, lb);
        assert_eq!(a, b);
        assert_eq!(ra.final_loss(), dataset_sse(&a, &data).unwrap());
        assert!(ra.history.iter().all(|r| r.loss_sum.is_finite()));
    }

    #[test]
    fn minibatch_is_deterministic() {
        let data = toy_data(16, 10, 4);
        let cfg = TrainConfig {
            epochs: 5,
            lr0: 1e-2,
            batch: BatchMode::MiniBatch(3),
            seed: 9,
            ..TrainConfig::default()
        };
        let mut a = identity(&data, 3);
        let mut b = a.clone();
        train(&mut a, &data, &cfg, None).unwrap();
        train(&mut b, &data, &cfg, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resume_continues_history() {
        let data = toy_data(16, 4, 5);
        let dir = tempfile::tempdir().unwrap();
        let full_cfg = TrainConfig {
            epochs: 10,
            lr0: 1e-2,
            checkpoint_every: 4,
            ..TrainConfig::default()
        };
        let mut straight = identity(&data, 2);
        let straight_run = train(&mut straight, &data, &full_cfg, None).unwrap();

        let run = RunDir::create(dir.path(), "echo").unwrap();
        let mut model = identity(&data, 2);
        let short = TrainConfig {
            epochs: 6,
            ..full_cfg.clone()
        };
        train(&mut model, &data, &short, Some(&run)).unwrap();
        assert_eq!(run.latest_checkpoint().unwrap(), Some(6));

        let run = RunDir::open(dir.path()).unwrap();
        let (resumed, out) = resume(&data, &full_cfg, &run).unwrap();
        let epochs: Vec<usize> = run.history().unwrap().iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, (0..=10).collect::<Vec<_>>());
        assert_eq!(out.history.len(), 11);
        assert_eq!(resumed, straight);
        assert_eq!(out.final_loss(), straight_run.final_loss());
        assert!(dir.path().join("final.bin").is_file());
    }

    #[test]
    fn grad_check_passes_and_catches_corruption() {
        let g = Grid::line(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let arch = Architecture {
            depth: 2,
            segments: 6,
            ..Architecture::default()
        };
        let mut model = FineModel::identity(g, ModeSet::lowest(g, 3).unwrap(), &arch).unwrap();
        model.perturb(&mut rng, 0.3);
        let f = Field::new(g, (0..16).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let report = grad_check(&model, &f, 1e-5).unwrap();
        assert!(report.passed(), "max error {}", report.max_relative_error);

        let corrupt = grad_check_with(&model, &f, 1e-5, |m, f| {
            let mut g = vec![0.0; m.num_params()];
            m.evaluator().sse_and_grad(f, &mut g)?;
            g[5] *= 1.01;
            Ok(g)
        })
        .unwrap();
        assert!(!corrupt.passed());
    }

    #[test]
    fn identity_band_limited_grad_check_is_zero() {
        let g = Grid::line(16).unwrap();
        let model = FineModel::identity(g, ModeSet::within(g, 1).unwrap(), &Architecture::default()).unwrap();
        let f = Field::from_fn(g, |p| 0.5 * p[0].sin()).unwrap();
        let report = grad_check(&model, &f, 1e-5).unwrap();
        assert!(report.analytic.iter().all(|v| v.abs() < 1e-12));
        assert!(report.numeric.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let g = Grid::line(16).unwrap();
        let data = Dataset::new(g, vec![]).unwrap();
        let mut model = FineModel::identity(g, ModeSet::lowest(g, 2).unwrap(), &Architecture::default()).unwrap();
        assert!(matches!(train(&mut model, &data, &TrainConfig::default(), None), Err(Error::EmptyBatch)));
    }
}
