use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use absa::classifier::TrainedClassifier;
use absa::config::{load_corpus, load_knowledge, parse_fractions, parse_override, read_file, RunConfig};
use absa::encoder::{grad_check, EncoderConfig};
use absa::eval::{
    emit_probe, emit_report, macro_f1, mask_probe, polarity_accuracy, run_matrix, OpinionKey, ReportFormat,
};
use absa::{Dataset, Domain};

#[derive(Parser)]
#[command(name = "absa", version, about = "Cross-domain aspect-based sentiment analysis")]
struct Cli {
    /// Log progress to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect review corpora.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Inspect knowledge files.
    #[command(subcommand)]
    Knowledge(KnowledgeCmd),
    /// Extract aspects from one configured corpus.
    Extract {
        #[command(flatten)]
        run: RunArgs,
        /// Corpus to extract from.
        #[arg(long)]
        domain: Domain,
        /// Output file (standard output when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the configured classifier on one corpus and save it.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        domain: Domain,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify every gold opinion of a corpus with a saved model.
    Predict {
        #[command(flatten)]
        data: ModelData,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a saved model on a corpus's gold aspects.
    Evaluate {
        #[command(flatten)]
        data: ModelData,
    },
    /// Run the full train-on-A/test-on-B matrix.
    Matrix {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Robustness probes.
    #[command(subcommand)]
    Probe(ProbeCmd),
    /// Compare the encoder's analytic gradient with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 8)]
        d_model: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        /// Exit with status 1 when the error exceeds this bound.
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Parse and check a corpus; prints a summary line to standard error.
    Validate {
        file: PathBuf,
        #[arg(long, default_value = "laptop")]
        domain: Domain,
    },
    /// Print label and category counts.
    Stats {
        file: PathBuf,
        #[arg(long, default_value = "laptop")]
        domain: Domain,
    },
}

#[derive(Subcommand)]
enum KnowledgeCmd {
    /// Parse and check a knowledge file.
    Check { file: PathBuf },
}

#[derive(Subcommand)]
enum ProbeCmd {
    /// Re-score the matrix with test-side context tokens masked.
    Mask {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated fractions in [0, 1].
        #[arg(long)]
        fractions: Option<String>,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct OutArgs {
    /// Directory for report files (overrides `output.dir`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ModelData {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    domain: Domain,
}

enum Failure {
    Usage(String),
    Domain(String),
}

type Result<T> = std::result::Result<T, Failure>;

fn domain_err(e: impl std::fmt::Display) -> Failure {
    Failure::Domain(e.to_string())
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let overrides = self
            .overrides
            .iter()
            .map(|o| parse_override(o))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(Failure::Usage)?;
        // A config that cannot be loaded is an invocation problem; the data it
        // points at is checked later and reported as a domain error.
        RunConfig::load(&self.config, &overrides).map_err(|e| Failure::Usage(e.to_string()))
    }
}

/// Temp file in the target directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let fail = |e: &dyn std::fmt::Display| Failure::Domain(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| fail(&e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| fail(&e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| fail(&e))?;
    tmp.persist(path).map_err(|e| fail(&e.error))?;
    Ok(())
}

fn output(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => {
            write_atomic(p, contents)?;
            log::info!("wrote {}", p.display());
            Ok(())
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn corpus_of(cfg: &RunConfig, domain: &Domain) -> Result<Dataset> {
    let (_, path) = cfg
        .corpora
        .iter()
        .find(|(d, _)| d == domain)
        .ok_or_else(|| Failure::Domain(format!("config has no corpus.{domain}")))?;
    load_corpus(path, domain.clone()).map_err(domain_err)
}

fn summary(ds: &Dataset) -> String {
    let sentences: Vec<_> = ds.sentences().collect();
    let opinions = sentences.iter().map(|s| s.opinions.len()).sum::<usize>();
    let spans = sentences.iter().flat_map(|s| &s.opinions).filter(|o| o.span.is_some()).count();
    format!(
        "{} reviews, {} sentences, {opinions} opinions ({spans} with target spans)",
        ds.reviews.len(),
        sentences.len()
    )
}

fn report_files(
    dir: Option<PathBuf>,
    stem: &str,
    formats: &[ReportFormat],
    render: impl Fn(ReportFormat) -> String,
) -> Result<()> {
    match dir {
        Some(dir) => {
            for &f in formats {
                output(Some(&dir.join(format!("{stem}.{}", f.extension()))), &render(f))?;
            }
            Ok(())
        }
        None => output(None, &render(formats.first().copied().unwrap_or(ReportFormat::Json))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corpus(CorpusCmd::Validate { file, domain }) => {
            let ds = load_corpus(&file, domain).map_err(domain_err)?;
            eprintln!("{}: ok, {}", file.display(), summary(&ds));
        }
        Command::Corpus(CorpusCmd::Stats { file, domain }) => {
            let ds = load_corpus(&file, domain).map_err(domain_err)?;
            let mut polarity = std::collections::BTreeMap::new();
            let mut category = std::collections::BTreeMap::new();
            for o in ds.sentences().flat_map(|s| &s.opinions) {
                *polarity.entry(o.polarity.as_str()).or_insert(0usize) += 1;
                *category.entry(o.category.to_string()).or_insert(0usize) += 1;
            }
            println!("{}", summary(&ds));
            for (k, v) in polarity {
                println!("polarity {k} {v}");
            }
            for (k, v) in category {
                println!("category {k} {v}");
            }
        }
        Command::Knowledge(KnowledgeCmd::Check { file }) => {
            let ks = load_knowledge(&file).map_err(domain_err)?;
            let domains: Vec<String> = ks.domains().iter().map(|d| d.to_string()).collect();
            eprintln!(
                "{}: ok, {} lexicon entries, {} category mappings, domains [{}]",
                file.display(),
                ks.lexicon_len(),
                ks.category_map_len(),
                domains.join(", ")
            );
        }
        Command::Extract { run, domain, out } => {
            let cfg = run.load()?;
            let ds = corpus_of(&cfg, &domain)?;
            let ks = cfg.load_knowledge().map_err(domain_err)?;
            let backend = cfg.build_extractor(&[&ds]).map_err(domain_err)?;
            let mut all = std::collections::BTreeMap::new();
            for s in ds.sentences() {
                let preds =
                    backend.extract(s, &ks, &domain).map_err(|e| Failure::Domain(format!("sentence {}: {e}", s.id)))?;
                all.insert(s.id.clone(), preds);
            }
            let text = serde_json::to_string_pretty(&all).expect("predictions serialize") + "\n";
            output(out.as_deref(), &text)?;
        }
        Command::Train { run, domain, out } => {
            let cfg = run.load()?;
            let ds = corpus_of(&cfg, &domain)?;
            let seed = absa::seed::derive_seed(cfg.seed, &format!("train/{domain}"));
            let model = TrainedClassifier::train(&cfg.classifier, &ds, seed).map_err(domain_err)?;
            let text = serde_json::to_string(&model.to_json()).expect("model serializes") + "\n";
            output(Some(&out), &text)?;
            eprintln!("{}: trained {} on {}", out.display(), model.kind(), summary(&ds));
        }
        Command::Predict { data, out } => {
            let (model, ds) = load_model_data(&data)?;
            let mut rows = Vec::new();
            for s in ds.sentences() {
                for (i, o) in s.opinions.iter().enumerate() {
                    let p = model.predict(s, o.span).map_err(|e| Failure::Domain(format!("sentence {}: {e}", s.id)))?;
                    rows.push(json!({
                        "sentence_id": s.id,
                        "index": i,
                        "target": o.target,
                        "gold": o.polarity.as_str(),
                        "predicted": p.as_str(),
                    }));
                }
            }
            let text = serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n";
            output(out.as_deref(), &text)?;
        }
        Command::Evaluate { data } => {
            let (model, ds) = load_model_data(&data)?;
            let mut preds = Vec::new();
            for s in ds.sentences() {
                for (i, o) in s.opinions.iter().enumerate() {
                    let p = model.predict(s, o.span).map_err(|e| Failure::Domain(format!("sentence {}: {e}", s.id)))?;
                    preds.push((OpinionKey::new(s.id.clone(), i), p));
                }
            }
            let acc = polarity_accuracy(&preds, &ds).map_err(domain_err)?;
            let f1 = macro_f1(&preds, &ds).map_err(domain_err)?;
            println!(
                "{}",
                json!({
                    "classifier": model.kind(),
                    "domain": data.domain.name(),
                    "n_gold": preds.len(),
                    "accuracy": format!("{acc:.4}"),
                    "macro_f1": format!("{f1:.4}"),
                })
            );
        }
        Command::Matrix { run, out } => {
            let cfg = run.load()?;
            let matrix = cfg.matrix_config().map_err(domain_err)?;
            let report = run_matrix(&matrix).map_err(domain_err)?;
            report_files(out.out_dir.or(cfg.output_dir.clone()), "report", &cfg.formats, |f| emit_report(&report, f))?;
            eprintln!("matrix: {} runs", report.runs.len());
        }
        Command::Probe(ProbeCmd::Mask { run, fractions, out }) => {
            let cfg = run.load()?;
            let fractions = match fractions {
                Some(raw) => parse_fractions(&raw).map_err(Failure::Usage)?,
                None => cfg.probe_fractions.clone(),
            };
            let matrix = cfg.matrix_config().map_err(domain_err)?;
            let probe = mask_probe(&matrix, &fractions).map_err(domain_err)?;
            report_files(out.out_dir.or(cfg.output_dir.clone()), "probe", &cfg.formats, |f| emit_probe(&probe, f))?;
            eprintln!("probe: {} results", probe.results.len());
        }
        Command::Gradcheck { layers, d_model, seed, epsilon, tolerance } => {
            if !(epsilon > 0.0) {
                return Err(Failure::Usage("--epsilon must be positive".into()));
            }
            let cfg = EncoderConfig { max_len: 6, ..EncoderConfig::new(12) }.with_dims(d_model, layers);
            let report = grad_check(&cfg, seed, epsilon).map_err(domain_err)?;
            println!(
                "layers={layers} d_model={d_model} seed={seed} samples={} max_rel_error={:.3e}",
                report.samples.len(),
                report.max_rel_error
            );
            if !(report.max_rel_error < tolerance) {
                return Err(Failure::Domain(format!(
                    "max relative error {:.3e} exceeds {tolerance:e}",
                    report.max_rel_error
                )));
            }
        }
    }
    Ok(())
}

fn load_model_data(data: &ModelData) -> Result<(TrainedClassifier, Dataset)> {
    let model = TrainedClassifier::from_json(&read_file(&data.model).map_err(domain_err)?)
        .map_err(|e| Failure::Domain(format!("{}: {e}", data.model.display())))?;
    let ds = load_corpus(&data.corpus, data.domain.clone()).map_err(domain_err)?;
    Ok((model, ds))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
