//! `rcft`: synthetic data, preprocessing, training, repeated evaluation and
//! score QC from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! error, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rcft_core::baselines::ScoreBaseline;
use rcft_core::config::{Precision, RunConfig};
use rcft_core::data::preprocess::{load_preprocessed, save_png, to_page_raster};
use rcft_core::data::{load_manifest, save_manifest, write_cohort, generate_synthetic_cohort, GeneratorParams};
use rcft_core::domain::Condition;
use rcft_core::eval::group_summary;
use rcft_core::pipeline::{evaluate_external, run_suite, train_single, write_prediction_file, write_suite, Variant};
use rcft_core::qc::{self, RSquaredKind};
use rcft_core::{Error, Result};

#[derive(Parser)]
#[command(name = "rcft", version, about = "Two-stream MCI classifier for complex-figure drawings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort: manifest, PNG drawings, QC fixtures.
    GenData(GenData),
    /// Write model-ready copies of a manifest's images.
    Preprocess(Preprocess),
    /// Train once on a single split and score its test part.
    Train(Train),
    /// Repeated-split evaluation, or scoring of a saved model on an external cohort.
    Eval(Eval),
    /// Compare expert and AI scores, flag gross disagreements, replay corrections.
    Qc(Qc),
}

/// Output directory; relative paths are placed under `RCFT_OUTPUT_ROOT` when set.
#[derive(Args)]
struct OutDir {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "RCFT_OUTPUT_ROOT", hide_env_values = true)]
    output_root: Option<PathBuf>,
}

impl OutDir {
    fn create(&self) -> Result<PathBuf> {
        let dir = match &self.output_root {
            Some(root) if self.out.is_relative() => root.join(&self.out),
            _ => self.out.clone(),
        };
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        Ok(dir)
    }
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutDir,
    /// TOML file with generator parameters; flags below override it.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    image_size: Option<u32>,
    #[arg(long)]
    struct_effect: Option<f64>,
    #[arg(long)]
    texture_effect: Option<f64>,
    #[arg(long)]
    ai_noise_sd: Option<f64>,
    #[arg(long)]
    gross_errors: Option<usize>,
    #[arg(long)]
    corrected: Option<usize>,
}

#[derive(Args)]
struct Preprocess {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    out: OutDir,
    #[arg(long, default_value_t = 64)]
    size: u32,
}

/// Config file plus the overrides shared by `train` and `eval`.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(format!("unknown precision {other:?} (f32 or f64)")),
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.max_epochs {
            cfg.train.max_epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.train.initial_lr = lr;
        }
        if let Some(p) = self.precision {
            cfg.train.precision = p;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct Eval {
    /// Cohort for the repeated protocol.
    #[arg(long, required_unless_present = "external_manifest")]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    out: OutDir,
    #[arg(long)]
    repeats: Option<usize>,
    /// Worker threads for repeats (0 = one per core).
    #[arg(long)]
    jobs: Option<usize>,
    /// Also run the logistic and image-only baselines.
    #[arg(long, conflicts_with = "variants")]
    baselines: bool,
    /// Comma-separated variants to run instead, e.g. `spatial-only,scoring-only,multi-stream`.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// Score this cohort with `--checkpoint` instead of training.
    #[arg(long, requires = "checkpoint")]
    external_manifest: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct Qc {
    /// CSV with image_id, condition, expert_score, ai_score.
    #[arg(long)]
    scores: PathBuf,
    /// CSV with image_id, corrected_score, note.
    #[arg(long)]
    corrections: Option<PathBuf>,
    #[command(flatten)]
    out: OutDir,
    #[arg(long, default_value_t = qc::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// squared-pearson or determination.
    #[arg(long, default_value = "squared-pearson")]
    r2: String,
}

fn file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn gen_data(a: &GenData) -> Result<()> {
    let mut p = match &a.params {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            toml::from_str::<GeneratorParams>(&text).map_err(|e| Error::Config(format!("generator params: {e}")))?
        }
        None => GeneratorParams::default(),
    };
    if let Some(v) = a.image_size {
        p.image_size = v;
    }
    if let Some(v) = a.struct_effect {
        p.struct_effect = v;
    }
    if let Some(v) = a.texture_effect {
        p.texture_effect = v;
    }
    if let Some(v) = a.ai_noise_sd {
        p.ai_noise_sd = v;
    }
    if let Some(v) = a.gross_errors {
        p.gross_errors = v;
    }
    if let Some(v) = a.corrected {
        p.corrected = v;
    }
    let cohort = generate_synthetic_cohort(a.n, a.seed, &p)?;
    let dir = a.out.create()?;
    let files = write_cohort(&cohort, &dir)?;
    println!(
        "wrote {} subjects and {} images to {}",
        cohort.manifest.records.len(),
        files.image_count,
        dir.display()
    );
    Ok(())
}

fn preprocess(a: &Preprocess) -> Result<()> {
    let mut manifest = load_manifest(&a.manifest)?;
    let dir = a.out.create()?;
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::Io { path: img_dir.clone(), source: e })?;
    let mut count = 0;
    for i in 0..manifest.records.len() {
        for c in Condition::ALL {
            let Some(src) = manifest.image_path(&manifest.records[i], c) else { continue };
            let t = load_preprocessed::<f64>(&src, a.size)?;
            let rel = PathBuf::from("images").join(format!("{}.png", manifest.records[i].image_id(c)));
            save_png(&to_page_raster(&t)?, &dir.join(&rel))?;
            manifest.records[i].images[c.index()] = Some(rel);
            count += 1;
        }
    }
    manifest.base_dir = dir.clone();
    save_manifest(&manifest, &dir.join("manifest.csv"))?;
    println!("preprocessed {count} images to {}×{} in {}", a.size, a.size, dir.display());
    Ok(())
}

fn train(a: &Train) -> Result<()> {
    let cfg = a.run.resolve()?;
    cfg.validate()?;
    let manifest = load_manifest(&a.manifest)?;
    let dir = a.out.create()?;
    cfg.write_resolved(&dir)?;
    let out = train_single(&manifest, &cfg)?;
    let ckpt = dir.join("model.ckpt");
    std::fs::write(&ckpt, &out.checkpoint).map_err(|e| Error::Io { path: ckpt.clone(), source: e })?;
    out.history.write_csv(file(&dir.join("history.csv"))?)?;
    write_prediction_file(&dir.join("test_predictions.csv"), &out.predictions)?;
    let m = out.metrics;
    write_text(
        &dir.join("test_metrics.csv"),
        &format!("auc,acc,sen,spe\n{:.6},{:.6},{:.6},{:.6}\n", m.auc, m.acc, m.sen, m.spe),
    )?;
    println!(
        "best epoch {} (stopped at {}), test AUC {:.3} ACC {:.3} SEN {:.3} SPE {:.3}",
        out.history.best_epoch, out.history.stopped_epoch, m.auc, m.acc, m.sen, m.spe
    );
    Ok(())
}

fn eval(a: &Eval) -> Result<()> {
    let mut cfg = a.run.resolve()?;
    if let Some(r) = a.repeats {
        cfg.eval.repeats = r;
    }
    if let Some(j) = a.jobs {
        cfg.eval.jobs = j;
    }
    cfg.validate()?;
    if let Some(ext) = &a.external_manifest {
        let ckpt = a.checkpoint.as_ref().expect("clap requires --checkpoint");
        let bytes = std::fs::read(ckpt).map_err(|e| Error::Io { path: ckpt.clone(), source: e })?;
        let manifest = load_manifest(ext)?;
        let dir = a.out.create()?;
        let out = evaluate_external(&bytes, &manifest, cfg.eval.threshold)?;
        let m = out.metrics;
        write_text(
            &dir.join("external_metrics.csv"),
            &format!("auc,acc,sen,spe\n{:.6},{:.6},{:.6},{:.6}\n", m.auc, m.acc, m.sen, m.spe),
        )?;
        out.roc.write_csv(file(&dir.join("external_roc.csv"))?)?;
        write_prediction_file(&dir.join("external_predictions.csv"), &out.predictions)?;
        println!("external AUC {:.3} ACC {:.3} SEN {:.3} SPE {:.3}", m.auc, m.acc, m.sen, m.spe);
        return Ok(());
    }
    let manifest = load_manifest(a.manifest.as_ref().expect("clap requires --manifest"))?;
    let dir = a.out.create()?;
    cfg.write_resolved(&dir)?;
    let variants: Vec<Variant> = if a.baselines {
        Variant::SUITE.to_vec()
    } else if !a.variants.is_empty() {
        a.variants.iter().map(|s| Variant::from_slug(s)).collect::<Result<_>>()?
    } else {
        vec![Variant::MultiStream]
    };
    let suite = run_suite(&variants, &manifest, &cfg)?;
    write_suite(&suite, &dir)?;
    match group_summary(&manifest.records) {
        Ok(g) => write_text(&dir.join("group_summary.txt"), &g.to_text())?,
        Err(e) => log::warn!("group summary skipped: {e}"),
    }
    if a.baselines {
        for b in ScoreBaseline::ALL {
            if suite.get(Variant::Score(b)).is_none() {
                println!("note: {} baseline skipped", b.label());
            }
        }
    }
    print!("{}", suite.table());
    Ok(())
}

fn run_qc(a: &Qc) -> Result<()> {
    let kind: RSquaredKind = a.r2.parse()?;
    let records = qc::read_qc_records(open(&a.scores)?)?;
    let dir = a.out.create()?;
    let report = match &a.corrections {
        Some(p) => {
            let corrections = qc::read_corrections(open(p)?)?;
            let (fixed, report) = qc::apply_corrections(&records, &corrections, a.threshold, kind)?;
            qc::write_qc_records(file(&dir.join("corrected_scores.csv"))?, &fixed)?;
            qc::write_audit(file(&dir.join("audit.csv"))?, &report.audit)?;
            report
        }
        None => qc::review(&records, a.threshold, kind)?,
    };
    qc::write_flags(file(&dir.join("flags.csv"))?, &report.flagged)?;
    qc::write_summary_csv(file(&dir.join("qc_summary.csv"))?, &report)?;
    let text = report.summary();
    write_text(&dir.join("qc_report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Qc(a) => run_qc(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
