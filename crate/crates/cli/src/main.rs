use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fine::config::RunConfig;
use fine::data::{content_hash, write_with_meta};
use fine::io::load_dataset;
use fine::metrics::{
    dataset_spectrum, energy_spectrum, evaluate, fft_baseline, latent_covariance, sweep_latent_dim,
};
use fine::train::{RunDir, grad_check, resume, train};
use fine::{Dataset, Error, FineModel, ModeSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "fine", version, about = "Fourier-invertible neural encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset described by a config, plus its meta.txt.
    GenData { config: PathBuf },
    /// Train from identity initialization, or continue a run.
    Train {
        config: PathBuf,
        /// Continue from the latest checkpoint in this run directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write metrics, spectrum and latent covariance CSVs for a model.
    Eval {
        model: PathBuf,
        data: PathBuf,
        /// Also dump sample K as aligned (truth, baseline, model) columns.
        #[arg(long, value_name = "K")]
        reconstruct: Option<usize>,
        /// Output directory (defaults to the model's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per latent dimension; completed dims are skipped.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
    },
    /// Compare analytic parameter gradients with central differences.
    Gradcheck {
        config: PathBuf,
        /// Check this model instead of a perturbed identity model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn load_data(cfg: &RunConfig) -> fine::Result<Dataset> {
    if !cfg.data_path.is_file() {
        return Err(Error::InvalidParameter(format!(
            "dataset {} not found; run `fine gen-data` first",
            cfg.data_path.display()
        )));
    }
    load_dataset(&cfg.data_path)
}

fn gen_data(path: &Path) -> fine::Result<()> {
    let cfg = RunConfig::load(path)?;
    let data = cfg.data.generate()?;
    let hash = write_with_meta(&data, &cfg.data_path, &cfg.echo(), cfg.data.seed())?;
    println!(
        "wrote {} ({} samples on {}), sha256 {hash}",
        cfg.data_path.display(),
        data.len(),
        data.grid()
    );
    Ok(())
}

fn run_train(path: &Path, resume_dir: Option<&Path>, epochs: Option<usize>) -> fine::Result<()> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    let data = load_data(&cfg)?;
    let (model, run, dir) = match resume_dir {
        Some(dir) => {
            let rd = RunDir::open(dir)?;
            let (model, run) = resume(&data, &cfg.train, &rd)?;
            (model, run, dir.to_path_buf())
        }
        None => {
            let echo = format!("{}\n# data sha256 = {}\n", cfg.echo(), content_hash(&data)?);
            let rd = RunDir::create(&cfg.run_dir, &echo)?;
            let modes = ModeSet::lowest(*data.grid(), cfg.latent_dim)?;
            let mut model = FineModel::identity(*data.grid(), modes, &cfg.arch)?;
            let run = train(&mut model, &data, &cfg.train, Some(&rd))?;
            (model, run, cfg.run_dir.clone())
        }
    };
    println!(
        "trained {} params for {} epochs in {:.1}s: loss {:.6e} -> {:.6e}; final model {}",
        model.num_params(),
        cfg.train.epochs,
        run.seconds,
        run.initial_loss(),
        run.final_loss(),
        dir.join("final.bin").display()
    );
    Ok(())
}

fn eval(model_path: &Path, data_path: &Path, reconstruct: Option<usize>, out: Option<&Path>) -> fine::Result<()> {
    let data = load_dataset(data_path)?;
    let model = FineModel::load_for(model_path, data.grid())?;
    let out = match out {
        Some(o) => o.to_path_buf(),
        None => model_path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !out.as_os_str().is_empty() {
        fs::create_dir_all(&out)?;
    }
    let report = evaluate(&model, &data)?;
    fs::write(out.join("metrics.csv"), report.to_csv())?;

    let mut per_sample = String::from("sample,model_sse,baseline_sse\n");
    for (i, (m, b)) in report.per_sample.iter().zip(&report.baseline_per_sample).enumerate() {
        writeln!(per_sample, "{i},{m:.17e},{b:.17e}").expect("string write");
    }
    fs::write(out.join("per_sample.csv"), per_sample)?;

    let ev = model.evaluator();
    let truth = dataset_spectrum(&data);
    let mut base = vec![0.0; truth.len()];
    let mut recon = vec![0.0; truth.len()];
    for f in data.fields() {
        for (s, e) in energy_spectrum(&fft_baseline(f, model.bottleneck())?) {
            base[s] += e;
        }
        for (s, e) in energy_spectrum(&ev.reconstruct(f)?) {
            recon[s] += e;
        }
    }
    let mut spectrum = String::from("shell,truth,baseline,model\n");
    for (s, e) in &truth {
        writeln!(spectrum, "{s},{e:.17e},{:.17e},{:.17e}", base[*s], recon[*s]).expect("string write");
    }
    fs::write(out.join("spectrum.csv"), spectrum)?;

    if model.bottleneck().mode_count() >= 2 {
        let cov = latent_covariance(&model, &data)?;
        fs::write(out.join("covariance.csv"), cov.to_csv())?;
        fs::write(out.join("latent_scatter.csv"), cov.scatter_csv())?;
    } else {
        eprintln!("note: one retained mode, covariance skipped");
    }

    if let Some(k) = reconstruct {
        let f = data.fields().get(k).ok_or_else(|| {
            Error::InvalidParameter(format!("sample {k} out of range (dataset has {})", data.len()))
        })?;
        let b = fft_baseline(f, model.bottleneck())?;
        let r = ev.reconstruct(f)?;
        let mut text = String::from("index,truth,baseline,model\n");
        for (i, ((t, b), r)) in f.values().iter().zip(b.values()).zip(r.values()).enumerate() {
            writeln!(text, "{i},{t:.17e},{b:.17e},{r:.17e}").expect("string write");
        }
        fs::write(out.join("reconstruction.csv"), text)?;
    }
    println!(
        "sse {:.6e}  baseline {:.6e}  ratio {:.4}  ({} samples) -> {}",
        report.sse,
        report.baseline_sse,
        report.ratio,
        report.samples,
        out.display()
    );
    Ok(())
}

fn sweep(path: &Path, dims: &[usize]) -> fine::Result<()> {
    let cfg = RunConfig::load(path)?;
    let data = load_data(&cfg)?;
    fs::create_dir_all(&cfg.run_dir)?;
    let csv = cfg.run_dir.join("sweep.csv");
    let rows = sweep_latent_dim(&cfg.arch, &data, dims, &cfg.train, Some(&csv))?;
    for r in rows {
        println!("dim {:>3}  params {:>6}  final loss {:.6e}", r.dim, r.params, r.final_loss_sum);
    }
    println!("wrote {}", csv.display());
    Ok(())
}

fn gradcheck(path: &Path, model_path: Option<&Path>) -> fine::Result<bool> {
    let cfg = RunConfig::load(path)?;
    let data = load_data(&cfg)?;
    let model = match model_path {
        Some(p) => FineModel::load_for(p, data.grid())?,
        None => {
            // At identity init many gradients vanish; perturb to probe them all.
            let modes = ModeSet::lowest(*data.grid(), cfg.latent_dim)?;
            let mut m = FineModel::identity(*data.grid(), modes, &cfg.arch)?;
            m.perturb(&mut ChaCha8Rng::seed_from_u64(cfg.arch.seed), 0.5);
            m
        }
    };
    let k = cfg.eval.gradcheck_sample;
    let f = data.fields().get(k).ok_or_else(|| {
        Error::InvalidParameter(format!("gradcheck_sample {k} out of range (dataset has {})", data.len()))
    })?;
    let report = grad_check(&model, f, cfg.eval.gradcheck_tolerance)?;
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "{verdict}: {} parameters, max relative error {:.3e} (tolerance {:.1e})",
        report.analytic.len(),
        report.max_relative_error,
        report.tolerance
    );
    Ok(report.passed())
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("FINE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("FINE_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let result = match &cli.command {
        Command::GenData { config } => gen_data(config),
        Command::Train { config, resume, epochs } => run_train(config, resume.as_deref(), *epochs),
        Command::Eval {
            model,
            data,
            reconstruct,
            out,
        } => eval(model, data, *reconstruct, out.as_deref()),
        Command::Sweep { config, dims } => sweep(config, dims),
        Command::Gradcheck { config, model } => match gradcheck(config, model.as_deref()) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(2),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
