use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use compsplit::divergence::compound_divergence;
use compsplit::io::{
    read_dataset, read_manifest, read_texts, write_bundle, write_records, Dataset, ScoreFile,
};
use compsplit::meta_trainer::{run_experiment, SyntheticScenario, TrainConfig};
use compsplit::metrics::{dist_3, summary_row, whitespace_tokenize, DistinctMode, SUMMARY_HEADER};
use compsplit::protocols::{
    acd_splits, fewshot_splits, holdout_splits, min_divergence_splits, original_split,
    random_splits, AcdSearchConfig,
};
use compsplit::sampler::{sample_pcomp_batch, Batch, LabeledRecord};
use compsplit::schema::{full_product, is_eligible_split, AttributeSchema, Protocol};
use compsplit::{Error, Result};

#[derive(Parser)]
#[command(
    name = "compsplit",
    version,
    about = "Compositional split construction and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a split bundle for a protocol.
    Split(SplitArgs),
    /// Print the compound divergence of a manifest.
    Divergence {
        manifest: PathBuf,
        /// Overrides the manifest's alpha.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Check that a manifest describes an eligible split.
    Check { manifest: PathBuf },
    /// Draw a training batch and a pseudo-comp batch from a dataset.
    SamplePcomp(SampleArgs),
    /// Summarize a score file as a benchmark table row.
    Metrics {
        scores: PathBuf,
        #[arg(long, default_value = "method")]
        method: String,
    },
    /// Dist-3 of a file with one text per line.
    Dist3 {
        texts: PathBuf,
        /// Average per-text ratios instead of pooling trigram counts.
        #[arg(long)]
        per_text: bool,
    },
    /// Train baseline and meta trainers on a synthetic scenario.
    MetaTrain(MetaArgs),
}

#[derive(Args)]
struct SchemaSource {
    /// Line-delimited dataset to infer the schema from.
    #[arg(long, conflicts_with = "shape", required_unless_present = "shape")]
    dataset: Option<PathBuf>,
    /// Comma-separated aspect arities, e.g. 2,2,5,2.
    #[arg(long)]
    shape: Option<String>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[arg(long, default_value_t = 100)]
    t1: usize,
    #[arg(long, default_value_t = 50)]
    t2: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SearchArgs {
    fn config(&self) -> AcdSearchConfig {
        AcdSearchConfig {
            t1_restarts: self.t1,
            t2_steps: self.t2,
            eta_threshold: self.eta,
            alpha: self.alpha,
            rng_seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    source: SchemaSource,
    #[arg(long)]
    protocol: Protocol,
    /// Held-out combinations per Hold-Out split.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Number of Random splits.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[command(flatten)]
    search: SearchArgs,
    /// Directory receiving one manifest per split.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file for the pseudo-comp records (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetaArgs {
    #[arg(long, default_value = "2,2,2")]
    shape: String,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long = "lambda", default_value_t = 0.01)]
    lambda_weight: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha_lr: f64,
    /// Defaults to the inner rate.
    #[arg(long)]
    beta_lr: Option<f64>,
    #[arg(long, num_args = 0..=1, default_value_t = true, default_missing_value = "true", action = clap::ArgAction::Set)]
    second_order: bool,
    #[arg(long, default_value_t = 0.0)]
    aux_weight: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving report.json and steps.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("--shape: '{t}' is not an arity")))
        })
        .collect()
}

fn load_schema(source: &SchemaSource) -> Result<Arc<AttributeSchema>> {
    match (&source.dataset, &source.shape) {
        (Some(path), _) => Ok(read_dataset(path)?.schema),
        (None, Some(shape)) => Ok(Arc::new(AttributeSchema::from_shape(&parse_shape(shape)?)?)),
        (None, None) => Err(Error::InvalidArgument(
            "one of --dataset or --shape is required".into(),
        )),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn cmd_split(args: &SplitArgs) -> Result<bool> {
    let schema = load_schema(&args.source)?;
    let full = full_product(&schema);
    let cfg = args.search.config();
    let bundle = match args.protocol {
        Protocol::Original => original_split(&full),
        Protocol::HoldOut => holdout_splits(&full, args.k, args.search.alpha)?,
        Protocol::Acd => acd_splits(&full, &cfg)?,
        Protocol::MinDivergence => min_divergence_splits(&full, &cfg)?,
        Protocol::FewShot => fewshot_splits(&full, &cfg)?,
        Protocol::Random => random_splits(&full, args.n, args.search.seed, args.search.alpha)?,
    };
    let fmt = |d: Option<f64>| d.map_or("-".to_string(), |d| format!("{d:.6}"));
    println!(
        "{}: {} split(s) over {} combinations, best D {}, mean D {}",
        bundle.protocol,
        bundle.len(),
        full.len(),
        fmt(bundle.best_divergence()),
        fmt(bundle.mean_divergence())
    );
    if let Some(diag) = &bundle.diagnostic {
        eprintln!("{diag}");
    }
    if let Some(dir) = &args.out {
        let paths = write_bundle(dir, &bundle)?;
        println!("wrote {} manifest(s) to {}", paths.len(), dir.display());
    }
    Ok(!bundle.is_empty())
}

fn cmd_divergence(manifest: &Path, alpha: Option<f64>) -> Result<bool> {
    let m = read_manifest(manifest)?;
    let split = m.to_split()?;
    let d = compound_divergence(
        &split.id_set,
        &split.comp_set,
        alpha.unwrap_or(m.config.alpha),
    )?;
    println!("{d:.12}");
    Ok(true)
}

fn cmd_check(manifest: &Path) -> Result<bool> {
    let m = read_manifest(manifest)?;
    let split = m.to_split()?;
    let full = full_product(split.schema());
    let report = is_eligible_split(&full, &split.id_set, &split.comp_set)?;
    if report.is_eligible() {
        println!("{}: eligible", manifest.display());
    } else {
        println!(
            "{}: not eligible\n{}",
            manifest.display(),
            report.describe(split.schema())
        );
    }
    Ok(report.is_eligible())
}

/// Re-expresses dataset records in `schema`, matching aspects by name.
fn remap(ds: &Dataset, schema: &Arc<AttributeSchema>) -> Result<Vec<LabeledRecord>> {
    let order: Vec<usize> = schema
        .aspects()
        .iter()
        .map(|a| {
            ds.schema
                .aspect_index(&a.name)
                .ok_or_else(|| Error::SchemaMismatch(format!("dataset has no aspect '{}'", a.name)))
        })
        .collect::<Result<_>>()?;
    if order.len() != ds.schema.num_aspects() {
        return Err(Error::SchemaMismatch(
            "dataset and manifest aspects differ".into(),
        ));
    }
    ds.records
        .iter()
        .map(|r| {
            let names = ds.schema.names(&r.combination);
            let labels: Vec<&str> = order.iter().map(|&i| names[i]).collect();
            Ok(LabeledRecord::new(
                schema.combination(&labels)?,
                r.text.clone(),
            ))
        })
        .collect()
}

fn cmd_sample(args: &SampleArgs) -> Result<bool> {
    let ds = read_dataset(&args.dataset)?;
    let m = read_manifest(&args.manifest)?;
    let split = m.to_split()?;
    let schema = split.schema().clone();
    let pool: Vec<LabeledRecord> = remap(&ds, &schema)?
        .into_iter()
        .filter(|r| split.id_set.contains(&r.combination))
        .collect();
    if pool.is_empty() {
        return Err(Error::PoolExhausted(format!(
            "{} holds no in-distribution records for {}",
            args.dataset.display(),
            args.manifest.display()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let picked = pool
        .choose_multiple(&mut rng, args.batch_size.min(pool.len()))
        .cloned()
        .collect();
    let train = Batch::new(schema.clone(), picked)?;
    let pcomp = sample_pcomp_batch(&train, &pool, args.batch_size, args.seed.wrapping_add(1))?;
    let labels: Vec<String> = train
        .combinations()
        .iter()
        .map(|c| schema.label(c))
        .collect();
    eprintln!("train batch combinations: {}", labels.join(", "));
    match &args.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
            write_records(&mut w, &schema, pcomp.records()).map_err(io_err(path))?;
            w.flush().map_err(io_err(path))?;
        }
        None => write_records(io::stdout().lock(), &schema, pcomp.records())
            .map_err(io_err(Path::new("<stdout>")))?,
    }
    Ok(true)
}

fn cmd_metrics(scores: &Path, method: &str) -> Result<bool> {
    let file = ScoreFile::read(scores)?;
    let (original, holdout, acd, summary) = file.summarize()?;
    println!("{SUMMARY_HEADER}");
    println!(
        "{}",
        summary_row(method, &original, &holdout, &acd, &summary)
    );
    Ok(true)
}

fn cmd_dist3(path: &Path, per_text: bool) -> Result<bool> {
    let texts: Vec<Vec<String>> = read_texts(path)?
        .iter()
        .map(|t| whitespace_tokenize(t))
        .collect();
    let mode = if per_text {
        DistinctMode::PerTextMean
    } else {
        DistinctMode::Pooled
    };
    let d = dist_3(&texts, mode)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    println!("{d:.6}");
    Ok(true)
}

fn cmd_meta(args: &MetaArgs) -> Result<bool> {
    let schema = Arc::new(AttributeSchema::from_shape(&parse_shape(&args.shape)?)?);
    let full = full_product(&schema);
    let search = AcdSearchConfig {
        t1_restarts: 20,
        eta_threshold: 0.01,
        rng_seed: args.seed,
        ..Default::default()
    };
    let bundle = acd_splits(&full, &search)?;
    let split = bundle
        .splits
        .first()
        .cloned()
        .ok_or_else(|| Error::NoEligibleSplit(bundle.diagnostic.clone().unwrap_or_default()))?;
    let mut scenario = SyntheticScenario::new(split);
    scenario.noise = args.noise;
    let config = TrainConfig {
        alpha_lr: args.alpha_lr,
        beta_lr: args.beta_lr.unwrap_or(args.alpha_lr),
        lambda_weight: args.lambda_weight,
        batch_size: args.batch_size,
        steps: args.steps,
        seed: args.seed,
        aux_loss_weight: args.aux_weight,
        second_order: args.second_order,
    };
    let report = run_experiment(&scenario, &config)?;
    println!("trainer\tid_acc\tcomp_acc\tgap");
    for (name, o) in [("baseline", &report.baseline), ("meta", &report.meta)] {
        println!(
            "{name}\t{:.2}\t{:.2}\t{:.2}",
            o.id_accuracy, o.comp_accuracy, o.gap
        );
    }
    println!(
        "pseudo-comp batches on {}/{} steps",
        report.pcomp_steps, config.steps
    );
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let summary = dir.join("report.json");
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(&summary, text + "\n").map_err(io_err(&summary))?;
        let steps = dir.join("steps.jsonl");
        let f = File::create(&steps).map_err(io_err(&steps))?;
        report
            .write_log(BufWriter::new(f))
            .map_err(io_err(&steps))?;
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let outcome = match &cli.command {
        Command::Split(a) => cmd_split(a),
        Command::Divergence { manifest, alpha } => cmd_divergence(manifest, *alpha),
        Command::Check { manifest } => cmd_check(manifest),
        Command::SamplePcomp(a) => cmd_sample(a),
        Command::Metrics { scores, method } => cmd_metrics(scores, method),
        Command::Dist3 { texts, per_text } => cmd_dist3(texts, *per_text),
        Command::MetaTrain(a) => cmd_meta(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
