use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use edmgan::config::RunConfig;
use edmgan::data::{load_xyz_dir, synthetic_dataset, write_xyz_dir, SyntheticConfig};
use edmgan::edm::{embed, embedding_dimension, is_edm, SquaredDistanceMatrix};
use edmgan::evaluation::{
    distance_histogram, format_uniqueness_csv, sample_to_structure, uniqueness_count,
    validity_check, Binning, Category, RotationMode, TypePair, DEFAULT_CUTOFF,
};
use edmgan::io::{read_matrix_csv, write_xyz};
use edmgan::linalg::DEFAULT_TOL;
use edmgan::training::{sample_checkpoint, train, Checkpoint, TrainOutput};
use edmgan::Error;

/// Generate point clouds through Euclidean distance matrices and analyse
/// the results.
///
/// Exit codes: 0 success, 1 domain failure (invalid EDM, infeasible
/// match), 2 usage or parse error.
#[derive(Parser)]
#[command(name = "edmgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check whether a CSV matrix is a squared Euclidean distance matrix.
    Validate(ValidateArgs),
    /// Recover coordinates from a CSV squared distance matrix.
    Embed(EmbedArgs),
    /// Train a generator from a run config (JSON).
    Train(TrainArgs),
    /// Draw structures from a trained checkpoint.
    Sample(SampleArgs),
    /// Compare generated structures against training and test sets.
    Evaluate(EvaluateArgs),
    /// Write the synthetic two-template dataset as XYZ files.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// Headerless CSV, one matrix row per line.
    matrix: PathBuf,
    /// Relative tolerance on the smallest eigenvalue of -1/2 J D J.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
}

#[derive(Args)]
struct EmbedArgs {
    matrix: PathBuf,
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Output XYZ file (points labelled X).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Run config. Unknown keys are rejected; omitted keys take the
    /// defaults shown by --print-default-config.
    #[arg(long, required_unless_present = "print_default_config")]
    config: Option<PathBuf>,
    /// Print a complete config with every default filled in and exit.
    #[arg(long)]
    print_default_config: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for sample_NNNNNN.xyz files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of generated XYZ files.
    #[arg(long)]
    samples: PathBuf,
    /// Directory of training XYZ files (reference set A).
    #[arg(long)]
    train_set: PathBuf,
    /// Directory of test XYZ files (reference set B).
    #[arg(long)]
    test_set: PathBuf,
    /// Largest heavy-atom deviation (Å) for two structures to count as one
    /// conformer.
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    cutoff: f64,
    /// Histogram bins on [0, r-max] Å.
    #[arg(long, default_value_t = 100)]
    bins: usize,
    #[arg(long, default_value_t = 10.0)]
    r_max: f64,
    /// Forbid mirror images when superposing.
    #[arg(long)]
    proper_only: bool,
    /// Output directory for CSV and JSON-lines reports.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4096)]
    size: usize,
    #[arg(long, default_value_t = 5)]
    n_points: usize,
    #[arg(long, default_value_t = 2)]
    templates: usize,
    /// Per-coordinate Gaussian noise (Å).
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Outcome of a subcommand that ran to completion.
enum Outcome {
    Ok,
    DomainFailure,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::Dimension(_) | Error::Numeric(_) | Error::InvalidInput(_) | Error::Infeasible(_),
        ) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate(a) => validate(&a),
        Command::Embed(a) => cmd_embed(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Synth(a) => synth(&a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::DomainFailure) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read_distance_matrix(path: &Path) -> Result<SquaredDistanceMatrix> {
    let m = read_matrix_csv(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SquaredDistanceMatrix::new(m)?)
}

fn validate(a: &ValidateArgs) -> Result<Outcome> {
    let m = read_matrix_csv(&a.matrix).with_context(|| format!("reading {}", a.matrix.display()))?;
    let d = match SquaredDistanceMatrix::new(m) {
        Ok(d) => d,
        Err(e @ (Error::Dimension(_) | Error::InvalidInput(_) | Error::Numeric(_))) => {
            println!("is_edm: false");
            println!("reason: {e}");
            return Ok(Outcome::DomainFailure);
        }
        Err(e) => return Err(e.into()),
    };
    let check = is_edm(&d, a.tol)?;
    println!("is_edm: {}", check.is_edm);
    println!("min_schoenberg_eigenvalue: {:e}", check.min_eigenvalue);
    if !check.is_edm {
        return Ok(Outcome::DomainFailure);
    }
    println!("embedding_dimension: {}", embedding_dimension(&d, a.tol)?);
    Ok(Outcome::Ok)
}

fn cmd_embed(a: &EmbedArgs) -> Result<Outcome> {
    let d = read_distance_matrix(&a.matrix)?;
    let p = embed(&d, a.dim)?;
    write_xyz(&a.out, &p, "embedded").with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} points to {}", p.len(), a.out.display());
    Ok(Outcome::Ok)
}

fn cmd_train(a: &TrainArgs) -> Result<Outcome> {
    if a.print_default_config {
        let cfg = RunConfig {
            data: edmgan::config::DataSource::Synthetic(SyntheticConfig::default()),
            split_fraction: 0.5,
            split_seed: 0,
            output_dir: PathBuf::from("runs/synthetic"),
            train: Default::default(),
            evaluation: Default::default(),
        };
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(Outcome::Ok);
    }
    let path = a.config.as_ref().expect("clap enforces --config");
    let cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    fs::create_dir_all(&cfg.output_dir)?;
    let (train_set, _test_set, manifest) = cfg.prepare_data()?;
    log::info!(
        "{} train / {} test structures of {}, r_min {:.4} Å",
        manifest.train_size,
        manifest.test_size,
        manifest.formula,
        manifest.r_min
    );
    let out = TrainOutput::in_dir(&cfg.output_dir);
    let outcome = train(
        cfg.train.clone(),
        train_set.typed_samples()?,
        train_set.types(),
        train_set.r_min,
        Some(&out),
    )?;
    if let Some(last) = outcome.metrics.last() {
        println!(
            "finished {} steps: critic {:.5}, generator {:.5}, wasserstein {:.5}",
            last.step, last.critic_loss, last.generator_loss, last.wasserstein_estimate
        );
    } else {
        println!("no training steps requested; wrote the initial checkpoint");
    }
    println!("checkpoint: {}", out.checkpoint.display());
    println!("metrics: {}", out.metrics.display());
    Ok(Outcome::Ok)
}

fn cmd_sample(a: &SampleArgs) -> Result<Outcome> {
    let ck = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let samples = sample_checkpoint(&ck, a.count, a.seed)?;
    let mut structures = Vec::with_capacity(samples.len());
    let mut edm_ok = 0;
    for s in &samples {
        if is_edm(&s.d, DEFAULT_TOL)?.is_edm {
            edm_ok += 1;
        }
        structures.push(sample_to_structure(s, &ck.types)?);
    }
    let valid = structures
        .iter()
        .map(validity_check)
        .collect::<edmgan::Result<Vec<_>>>()
        .map(|v| v.iter().filter(|x| x.valid).count());
    fs::create_dir_all(&a.out)?;
    write_xyz_dir(&a.out, &structures, "sample")?;
    println!("samples: {}", samples.len());
    println!("pass_is_edm: {edm_ok}");
    match valid {
        Ok(v) => println!("valid_bonding: {v}"),
        Err(e) => println!("valid_bonding: n/a ({e})"),
    }
    Ok(Outcome::Ok)
}

fn load_dir(path: &Path) -> Result<Vec<edmgan::structure::PointSet>> {
    if !path.is_dir() {
        anyhow::bail!(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a directory", path.display()),
        )));
    }
    let (s, skipped) = load_xyz_dir(path)?;
    if !skipped.is_empty() {
        log::warn!("{}: skipped {} files with unsupported elements", path.display(), skipped.len());
    }
    Ok(s)
}

fn evaluate(a: &EvaluateArgs) -> Result<Outcome> {
    let samples = load_dir(&a.samples)?;
    let set_a = load_dir(&a.train_set)?;
    let set_b = load_dir(&a.test_set)?;
    let mode = if a.proper_only {
        RotationMode::ProperOnly
    } else {
        RotationMode::AllowImproper
    };
    fs::create_dir_all(&a.out)?;

    let u = uniqueness_count(&samples, &set_a, &set_b, a.cutoff, mode)?;
    fs::write(a.out.join("uniqueness.csv"), format_uniqueness_csv(&u))?;

    let mut report = fs::File::create(a.out.join("samples.jsonl"))?;
    let mut valid = 0;
    for (k, (s, cat)) in samples.iter().zip(&u.categories).enumerate() {
        let v = validity_check(s)?;
        valid += usize::from(v.valid);
        let line = serde_json::json!({
            "sample_index": k,
            "category": cat,
            "valid": v.valid,
            "reasons": v.reasons.iter().map(|r| r.to_string()).collect::<Vec<_>>(),
        });
        writeln!(report, "{line}")?;
    }

    let binning = Binning {
        lo: 0.0,
        hi: a.r_max,
        bins: a.bins,
    };
    let mut pairs: Vec<(String, Option<TypePair>)> = vec![("all".into(), None)];
    pairs.extend(TypePair::all_cho().into_iter().map(|p| (p.to_string(), Some(p))));
    for (name, pair) in pairs {
        for (label, set) in [("samples", &samples), ("train", &set_a), ("test", &set_b)] {
            let h = distance_histogram(set, pair, binning)?;
            fs::write(a.out.join(format!("hist_{label}_{name}.csv")), h.to_csv())?;
        }
    }

    let totals = u.totals();
    let duplicates = u.categories.iter().filter(|c| **c == Category::Duplicate).count();
    println!("samples: {}", samples.len());
    println!("known_in_train: {}", totals.known_a);
    println!("known_in_test: {}", totals.known_b);
    println!("novel: {}", totals.novel);
    println!("duplicates: {duplicates}");
    let rate = if samples.is_empty() {
        0.0
    } else {
        valid as f64 / samples.len() as f64
    };
    println!("validity_rate: {rate:.4}");
    Ok(Outcome::Ok)
}

fn synth(a: &SynthArgs) -> Result<Outcome> {
    let cfg = SyntheticConfig {
        template_count: a.templates,
        n_points: a.n_points,
        noise: a.noise,
        size: a.size,
        seed: a.seed,
    };
    let ds = synthetic_dataset(&cfg)?;
    write_xyz_dir(&a.out, &ds.structures, "synth")?;
    println!("wrote {} structures of {} to {}", ds.len(), ds.formula, a.out.display());
    Ok(Outcome::Ok)
}
