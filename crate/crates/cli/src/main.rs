//! `mvface`: dataset generation, feature extraction, classifier training,
//! the three evaluation cases and the noise sweep, wired end to end.
//!
//! Exit codes: 0 success, 2 usage or parameter errors, 3 I/O errors,
//! 4 data validation errors, 5 numeric failures.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mvface_core::classifiers::{save_model, Family, TrainConfig, TrainingData};
use mvface_core::datagen::generate_dataset;
use mvface_core::ensemble::{train_ensemble, WeightScheme};
use mvface_core::error::Error as CoreError;
use mvface_core::evaluation::{
    decisions_to_csv, noise_sweep, run_case, run_case_on_templates, sweep_to_csv, CaseKind,
    EvalCase, EvalReport, ReportCell, RunParams,
};
use mvface_core::imagecore::load_image;
use mvface_core::surf::DetectorConfig;
use mvface_core::template::{
    ingest_records, load_templates, parse_angle_dir, save_templates, scan_dataset, templates_to_csv,
    SplitSpec,
};

use config::ConfigFile;

/// Seed offsets: all per-stage streams derive from the single `--seed`.
const TRAIN_SEED_OFFSET: u64 = 100;
const NOISE_SEED_OFFSET: u64 = 200;
const SWEEP_SEED_OFFSET: u64 = 300;

#[derive(Parser)]
#[command(
    name = "mvface",
    about = "Multi-view face recognition pipeline",
    long_about = "Multi-view face recognition pipeline: synthetic dataset generation, \
SURF feature extraction, combined-classifier training (MLP, CLVQ, CRBF), \
GAR evaluation under four fusion rules, and noise sweeps.\n\n\
All randomness flows from a single --seed per command. Derived streams use \
fixed offsets: the split shuffle uses the seed itself, classifier training \
uses seed+100 (plus the member index), probe noise uses seed+200, and the \
noise sweep uses seed+300.",
    version
)]
struct Cli {
    /// Worker threads (0 = machine parallelism). Results are identical
    /// for any thread count.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view face dataset
    Gen(GenArgs),
    /// Extract SURF templates from a dataset directory
    Extract(ExtractArgs),
    /// Train the three ensembles from a template file
    Train(TrainArgs),
    /// Run an evaluation case end to end
    Eval(EvalArgs),
    /// Sweep noise variances and report the six quality metrics
    NoiseSweep(SweepArgs),
    /// Pretty-print an evaluation report CSV as a text table
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    subjects: usize,
    /// Comma-separated view angles: m90,m45,0,p45,p90
    #[arg(long, default_value = "0")]
    views: String,
    /// Samples per subject per view
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectorArgs {
    #[arg(long)]
    octaves: Option<usize>,
    #[arg(long)]
    intervals: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Hessian determinant weight w
    #[arg(long)]
    weight: Option<f64>,
    /// Skip orientation assignment (upright descriptors)
    #[arg(long)]
    upright: bool,
}

impl DetectorArgs {
    fn build(&self, cfg: &ConfigFile) -> DetectorConfig {
        let defaults = DetectorConfig::default();
        DetectorConfig {
            octaves: self
                .octaves
                .or(cfg.get("detector", "octaves"))
                .unwrap_or(defaults.octaves),
            intervals_per_octave: self
                .intervals
                .or(cfg.get("detector", "intervals"))
                .unwrap_or(defaults.intervals_per_octave),
            response_threshold: self
                .threshold
                .or(cfg.get("detector", "threshold"))
                .unwrap_or(defaults.response_threshold),
            hessian_weight: self
                .weight
                .or(cfg.get("detector", "weight"))
                .unwrap_or(defaults.hessian_weight),
            upright: self.upright || cfg.get("detector", "upright").unwrap_or(false),
        }
    }
}

#[derive(Args)]
struct TrainParamArgs {
    /// Hidden neurons / LVQ prototypes / RBF centers
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Ensemble members per family
    #[arg(long)]
    members: Option<usize>,
    /// Member weighting: uniform | accuracy
    #[arg(long)]
    weighting: Option<String>,
}

impl TrainParamArgs {
    fn build(&self, cfg: &ConfigFile, seed: u64) -> Result<(TrainConfig, usize, WeightScheme), CliError> {
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            hidden_units: self
                .hidden
                .or(cfg.get("train", "hidden"))
                .unwrap_or(defaults.hidden_units),
            epochs: self
                .epochs
                .or(cfg.get("train", "epochs"))
                .unwrap_or(defaults.epochs),
            learning_rate: self
                .lr
                .or(cfg.get("train", "learning_rate"))
                .unwrap_or(defaults.learning_rate),
            seed: seed + TRAIN_SEED_OFFSET,
        };
        let members = self.members.or(cfg.get("ensemble", "members")).unwrap_or(5);
        let weighting = self
            .weighting
            .clone()
            .or(cfg.get("ensemble", "weighting"))
            .unwrap_or_else(|| "uniform".to_string());
        let weighting = match weighting.as_str() {
            "uniform" => WeightScheme::Uniform,
            "accuracy" => WeightScheme::HeldOutAccuracy,
            other => {
                return Err(CliError::usage(format!(
                    "unknown weighting {other:?} (expected uniform or accuracy)"
                )))
            }
        };
        Ok((train, members, weighting))
    }
}

#[derive(Args)]
struct ExtractArgs {
    /// Dataset directory: <root>/<subject>/<angle>/<sample>.pgm|png
    #[arg(long)]
    data: PathBuf,
    /// Output template file (binary container)
    #[arg(long)]
    out: PathBuf,
    /// Keypoints per template
    #[arg(long)]
    k: Option<usize>,
    /// Also write the templates as CSV for inspection
    #[arg(long)]
    export_csv: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    detector: DetectorArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Template file produced by `extract`
    #[arg(long)]
    templates: PathBuf,
    /// Directory for the model files
    #[arg(long)]
    out_dir: PathBuf,
    /// Train on a single view angle (m90,m45,0,p45,p90); default all
    #[arg(long)]
    view: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    params: TrainParamArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Case to run: frontal | multiview | noise
    #[arg(long)]
    case: String,
    /// Dataset directory (required for the noise case)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Evaluate a persisted template file instead of extracting
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Output directory for report.csv and decisions.csv
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Views for the multiview case, comma-separated
    #[arg(long)]
    views: Option<String>,
    /// Noise variances for the noise case, comma-separated
    #[arg(long)]
    sigmas: Option<String>,
    /// Mean-filter window for denoising noisy probes
    #[arg(long)]
    filter_k: Option<usize>,
    /// Skip denoising before probe feature extraction
    #[arg(long)]
    no_denoise: bool,
    /// Keypoints per template
    #[arg(long)]
    k: Option<usize>,
    /// Train fraction of the per-subject split
    #[arg(long)]
    split_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Label recorded in the report CSV
    #[arg(long)]
    database: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    params: TrainParamArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Dataset directory providing the clean images
    #[arg(long)]
    data: PathBuf,
    /// Variances: comma list (0,0.02,...) or range start:end:step
    #[arg(long, default_value = "0:0.1:0.02")]
    sigmas: String,
    /// Use at most this many images from the dataset
    #[arg(long, default_value_t = 20)]
    limit: usize,
    #[arg(long, default_value_t = 3)]
    filter_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Conventional PSNR (mean squared error denominator) instead of the
    /// raw-sum form
    #[arg(long)]
    psnr_conventional: bool,
    /// Output CSV path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report CSV produced by `eval`
    #[arg(long)]
    csv: PathBuf,
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }
}

fn exit_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Io { .. }
        | CoreError::UnsupportedFormat(_)
        | CoreError::BadFileFormat { .. } => 3,

        CoreError::BadDetectorConfig(_)
        | CoreError::BadTrainConfig(_)
        | CoreError::BadFilterWindow(_)
        | CoreError::BadFilterSize(_)
        | CoreError::BadMatchRatio(_)
        | CoreError::BadTemplateK
        | CoreError::BadSplitFraction(_)
        | CoreError::NegativeVariance(_)
        | CoreError::BadSweepVariances
        | CoreError::BadGenSpec
        | CoreError::NoSigmas => 2,

        CoreError::DimensionMismatch { .. }
        | CoreError::MismatchedClasses(..)
        | CoreError::BadWeights
        | CoreError::RectOutOfBounds { .. }
        | CoreError::FootprintOutOfBounds { .. }
        | CoreError::InsufficientMargin { .. }
        | CoreError::ZeroNormImage => 5,

        CoreError::MemberTraining { source, .. } => exit_code(source),

        _ => 4,
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .expect("rayon pool is initialized once");
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen(args) => cmd_gen(args),
        Command::Extract(args) => cmd_extract(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::NoiseSweep(args) => cmd_noise_sweep(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn parse_views(s: &str) -> Result<Vec<i16>, CliError> {
    let mut views = Vec::new();
    for part in s.split(',').filter(|p| !p.is_empty()) {
        views.push(parse_angle_dir(part).map_err(|e| CliError::usage(e.to_string()))?);
    }
    if views.is_empty() {
        return Err(CliError::usage("no view angles given"));
    }
    Ok(views)
}

fn parse_sigmas(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = |s: &str| CliError::usage(format!("cannot parse sigma list {s:?}"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad(s));
        }
        let start: f64 = parts[0].parse().map_err(|_| bad(s))?;
        let end: f64 = parts[1].parse().map_err(|_| bad(s))?;
        let step: f64 = parts[2].parse().map_err(|_| bad(s))?;
        if step <= 0.0 || end < start {
            return Err(bad(s));
        }
        let mut out = Vec::new();
        let mut i = 0;
        loop {
            let v = start + step * i as f64;
            if v > end + 1e-12 {
                break;
            }
            out.push(v);
            i += 1;
        }
        Ok(out)
    } else {
        s.split(',')
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<f64>().map_err(|_| bad(s)))
            .collect()
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::io(format!("{}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let views = parse_views(&args.views)?;
    let written = generate_dataset(args.subjects, &views, args.samples, args.seed, &args.out)?;
    println!("{written} images written");
    Ok(())
}

fn cmd_extract(args: ExtractArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(args.config.as_deref())?;
    let detector = args.detector.build(&cfg);
    let k = args.k.or(cfg.get("template", "k")).unwrap_or(4);

    let records = scan_dataset(&args.data)?;
    let set = ingest_records(&records, k, &detector)?;
    let mut padded = 0;
    for (rec, t) in records.iter().zip(&set.templates) {
        println!("{}: {} keypoints", rec.path.display(), t.keypoint_count);
        if t.is_padded(k) {
            padded += 1;
            println!(
                "warning: {} padded ({} of {k} slots filled)",
                rec.path.display(),
                t.keypoint_count
            );
        }
    }
    save_templates(&set, &args.out)?;
    if let Some(csv_path) = &args.export_csv {
        write_file(csv_path, &templates_to_csv(&set))?;
    }
    println!(
        "{} templates ({} subjects, K={k}, {padded} padded) -> {}",
        set.templates.len(),
        set.subjects.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(args.config.as_deref())?;
    let (train_cfg, members, weighting) = args.params.build(&cfg, args.seed)?;

    let mut set = load_templates(&args.templates)?;
    if let Some(view) = &args.view {
        let angle = parse_angle_dir(view).map_err(|e| CliError::usage(e.to_string()))?;
        set = set.filter_view(angle);
    }

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::io(format!("{}: {e}", args.out_dir.display())))?;
    let data = TrainingData::from_template_set(&set)?;
    for family in Family::ALL {
        let ensemble = train_ensemble(family, &set, &train_cfg, members, weighting)?;
        let tag = ensemble.family.label().to_ascii_lowercase();
        for (i, member) in ensemble.members.iter().enumerate() {
            let path = args.out_dir.join(format!("{tag}_m{i:02}.mvbm"));
            save_model(member, &path)?;
            let correct = data
                .features
                .iter()
                .zip(&data.labels)
                .filter(|(x, &y)| member.predict(x).map(|s| s.argmax() == y).unwrap_or(false))
                .count();
            let acc = 100.0 * correct as f64 / data.features.len() as f64;
            match member {
                mvface_core::classifiers::ClassifierModel::Mlp(m) => println!(
                    "{tag} member {i}: train accuracy {acc:.2}%, final loss {:.6}",
                    m.final_loss
                ),
                _ => println!("{tag} member {i}: train accuracy {acc:.2}%"),
            }
        }
        let weights: Vec<String> = ensemble
            .member_weights
            .iter()
            .map(|w| format!("{w:.6}"))
            .collect();
        write_file(
            &args.out_dir.join(format!("{tag}_weights.txt")),
            &(weights.join("\n") + "\n"),
        )?;
    }
    write_file(
        &args.out_dir.join("classes.txt"),
        &(set.subjects.join("\n") + "\n"),
    )?;
    println!("models written to {}", args.out_dir.display());
    Ok(())
}

fn build_eval_case(args: &EvalArgs, cfg: &ConfigFile) -> Result<EvalCase, CliError> {
    let kind = args
        .case
        .as_str()
        .to_ascii_lowercase();
    let filter_k = args.filter_k.or(cfg.get("eval", "filter_k")).unwrap_or(3);
    let denoise = !args.no_denoise && cfg.get("eval", "denoise").unwrap_or(true);
    match kind.as_str() {
        "frontal" => Ok(EvalCase::frontal()),
        "multiview" => {
            let views = match args
                .views
                .clone()
                .or_else(|| cfg.get_str("eval", "views"))
            {
                Some(v) => parse_views(&v)?,
                None => vec![45, -45],
            };
            Ok(EvalCase::multiview(views))
        }
        "noise" => {
            let sigmas = match args
                .sigmas
                .clone()
                .or_else(|| cfg.get_str("eval", "sigmas"))
            {
                Some(s) => parse_sigmas(&s)?,
                None => return Err(CliError::usage("the noise case needs --sigmas")),
            };
            Ok(EvalCase::noise(sigmas, denoise, filter_k))
        }
        other => Err(CliError::usage(format!(
            "unknown case {other:?} (expected frontal, multiview or noise)"
        ))),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(args.config.as_deref())?;
    let case = build_eval_case(&args, &cfg)?;
    let (train_cfg, members, weighting) = args.params.build(&cfg, args.seed)?;

    let database = args
        .database
        .clone()
        .or_else(|| cfg.get_str("dataset", "database"))
        .unwrap_or_else(|| "dataset".to_string());
    if database.contains(',') || database.contains('\n') {
        return Err(CliError::usage("database label must not contain commas"));
    }

    let params = RunParams {
        detector: args.detector.build(&cfg),
        train: train_cfg,
        split: SplitSpec {
            train_fraction: args
                .split_fraction
                .or(cfg.get("split", "fraction"))
                .unwrap_or(0.75),
            seed: args.seed,
            stratified: true,
        },
        members,
        template_k: args.k.or(cfg.get("template", "k")).unwrap_or(4),
        weighting,
        noise_seed: args.seed + NOISE_SEED_OFFSET,
        database,
    };

    let report = match (&args.templates, &args.data) {
        (Some(templates), _) => {
            let set = load_templates(templates)?;
            run_case_on_templates(&case, &set, &params)?
        }
        (None, Some(data)) => run_case(&case, data, &params)?,
        (None, None) => {
            let root: Option<String> = cfg.get_str("dataset", "root");
            match root {
                Some(r) => run_case(&case, Path::new(&r), &params)?,
                None => return Err(CliError::usage("eval needs --data or --templates")),
            }
        }
    };

    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| cfg.get_str("output", "dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    write_file(&out_dir.join("report.csv"), &report.to_csv())?;
    write_file(&out_dir.join("decisions.csv"), &decisions_to_csv(&report.decisions))?;
    print!("{}", report.render_table());
    println!(
        "report written to {} ({} probes logged)",
        out_dir.join("report.csv").display(),
        report.decisions.len()
    );
    Ok(())
}

fn cmd_noise_sweep(args: SweepArgs) -> Result<(), CliError> {
    let sigmas = parse_sigmas(&args.sigmas)?;
    let records = scan_dataset(&args.data)?;
    let take = records.len().min(args.limit.max(1));
    let images = records[..take]
        .iter()
        .map(|r| load_image(&r.path))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = noise_sweep(
        &images,
        &sigmas,
        args.filter_k,
        args.seed + SWEEP_SEED_OFFSET,
        args.psnr_conventional,
    )?;
    let csv = sweep_to_csv(&rows);
    match &args.out {
        Some(path) => {
            write_file(path, &csv)?;
            println!("{} rows ({} images) -> {}", rows.len(), take, path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.csv)
        .map_err(|e| CliError::io(format!("{}: {e}", args.csv.display())))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "database,case,view,sigma,family,rule,gar_percent,probes" {
        return Err(CliError::usage(format!(
            "{}: not an evaluation report CSV",
            args.csv.display()
        )));
    }
    let mut database = String::new();
    let mut case = CaseKind::Frontal;
    let mut cells = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || CliError::usage(format!("{}: bad row {}", args.csv.display(), lineno + 2));
        if fields.len() != 8 {
            return Err(bad());
        }
        database = fields[0].to_string();
        case = match fields[1] {
            "frontal" => CaseKind::Frontal,
            "multiview" => CaseKind::Multiview,
            "noise" => CaseKind::Noise,
            _ => return Err(bad()),
        };
        let family = match fields[4] {
            "MLP" => Family::Mlp,
            "CLVQ" => Family::Lvq,
            "CRBF" => Family::Rbf,
            _ => return Err(bad()),
        };
        let rule = mvface_core::ensemble::FusionRule::parse(fields[5]).ok_or_else(bad)?;
        cells.push(ReportCell {
            view: fields[2].parse().map_err(|_| bad())?,
            sigma: fields[3].parse().map_err(|_| bad())?,
            family,
            rule,
            gar_percent: fields[6].parse().map_err(|_| bad())?,
            probes: fields[7].parse().map_err(|_| bad())?,
        });
    }
    let report = EvalReport {
        database,
        case,
        cells,
        decisions: Vec::new(),
    };
    print!("{}", report.render_table());
    Ok(())
}
