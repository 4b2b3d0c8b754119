use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use lmattr::attribute::{attribute, AttributeOptions, Method};
use lmattr::corpus::{load_corpus, save_corpus};
use lmattr::exec::{with_threads, Execution};
use lmattr::harness::{run_cv, run_simulation, CorpusSpec, CvBackend, ExperimentConfig, FamilySource};
use lmattr::interrogator::{
    list_models, load_store, save_store, InterrogationConfig, Interrogator, ModelEndpoint,
    ModelKind, RetryPolicy,
};
use lmattr::simnet::{serve, SyntheticFamily};

#[derive(Parser)]
#[command(name = "lmattr", version, about = "Attribute fine-tuned text generators to their base models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a query corpus from a corpus spec.
    Sample {
        /// Corpus spec (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a synthetic model family over HTTP until killed.
    Serve {
        /// Family source (JSON: {"template": ...} or {"fixed": ...}).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed used to instantiate a template.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Writes the endpoint list here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Writes the fine-tuned to base ground truth here.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Query every endpoint with every corpus query.
    Interrogate {
        /// Endpoint list (JSON array).
        #[arg(long, conflicts_with = "server", required_unless_present = "server")]
        endpoints: Option<PathBuf>,
        /// Server root to discover endpoints from via `GET /models`.
        #[arg(long)]
        server: Option<String>,
        #[arg(long)]
        corpus: PathBuf,
        /// Existing transcripts; cached pairs are not queried again.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Interrogation config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 8)]
        parallelism: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pair every fine-tuned model in a transcript file with a base.
    Attribute {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Use base responses as references for bleu/ter.
        #[arg(long)]
        swap_ref_hyp: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full experiment from a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's request parallelism.
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stratified k-fold accuracy of predicting the model behind a response.
    Cv {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "multiclass", value_parser = parse_backend)]
        backend: CvBackend,
        /// Restrict to one model kind.
        #[arg(long, value_parser = parse_kind)]
        kind: Option<ModelKind>,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: lmattr::Error| e.to_string())
}

fn parse_backend(s: &str) -> Result<CvBackend, String> {
    s.parse().map_err(|e: lmattr::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    match s {
        "base" => Ok(ModelKind::Base),
        "finetuned" => Ok(ModelKind::Finetuned),
        other => Err(format!("unknown model kind `{other}`")),
    }
}

/// Exit 1 for bad input, 2 for anything the environment broke.
enum Failure {
    Invalid(String),
    Io(String),
}

impl From<lmattr::Error> for Failure {
    fn from(e: lmattr::Error) -> Self {
        if e.is_io() || matches!(e, lmattr::Error::Protocol(_)) {
            Failure::Io(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Outcome<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Io(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

/// Writes to `out`, or stdout when absent.
fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| Failure::Io(format!("writing {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Sample { config, seed, out } => {
            let mut spec: CorpusSpec = match config {
                Some(path) => read_json(&path)?,
                None => CorpusSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let corpus = spec.build()?;
            save_corpus(&corpus, &out)?;
            eprintln!(
                "{} queries from {} datasets, hash {}",
                corpus.num_queries(),
                corpus.num_datasets(),
                corpus.content_hash()
            );
            Ok(())
        }

        Command::Serve { config, seed, bind, out, truth } => {
            let source = match config {
                Some(path) => read_json(&path)?,
                None => FamilySource::Template(Default::default()),
            };
            let spec = match source {
                FamilySource::Template(t) => t.instantiate(seed)?,
                FamilySource::Fixed(spec) => spec,
            };
            let family = Arc::new(SyntheticFamily::from_spec(&spec)?);
            if let Some(path) = truth {
                emit(Some(&path), &pretty(family.ground_truth()))?;
            }
            let server = serve(family, &bind)?;
            if let Some(path) = out {
                emit(Some(&path), &pretty(&server.endpoints()))?;
            }
            eprintln!("serving {} on {}", spec.bases.len() + spec.children.len(), server.base_url());
            server.wait();
            Ok(())
        }

        Command::Interrogate {
            endpoints,
            server,
            corpus,
            cache,
            config,
            seed,
            parallelism,
            out,
        } => {
            let mut interrogation: InterrogationConfig = match config {
                Some(path) => read_json(&path)?,
                None => InterrogationConfig::default(),
            };
            if let Some(seed) = seed {
                interrogation.seed = seed;
            }
            let endpoints: Vec<ModelEndpoint> = match (endpoints, server) {
                (Some(path), _) => read_json(&path)?,
                (None, Some(url)) => {
                    let root = url.trim_end_matches('/');
                    list_models(root, Duration::from_secs(30))?
                        .into_iter()
                        .map(|d| ModelEndpoint {
                            base_url: format!("{root}/models/{}", d.model_id),
                            model_id: d.model_id,
                            kind: d.kind,
                            auth_token: None,
                        })
                        .collect()
                }
                (None, None) => unreachable!("clap requires one of --endpoints/--server"),
            };
            let corpus = load_corpus(&corpus)?;
            let client = Interrogator::new(interrogation, RetryPolicy::default());
            if let Some(path) = cache.filter(|p| p.exists()) {
                client.warm(&load_store(&path)?);
            }
            let store = client.interrogate_all(&endpoints, &corpus, parallelism)?;
            save_store(&store, &out)?;
            let failed = store.records().filter(|r| r.failed).count();
            eprintln!(
                "{} records, {} new queries, {} requests, {failed} failed",
                store.len(),
                client.queries_sent(),
                client.requests_sent()
            );
            if failed > 0 {
                return Err(Failure::Io(format!("{failed} of {} queries failed", store.len())));
            }
            Ok(())
        }

        Command::Attribute {
            method,
            transcripts,
            corpus,
            swap_ref_hyp,
            seed,
            parallelism,
            out,
        } => {
            let store = load_store(&transcripts)?;
            let corpus = load_corpus(&corpus)?;
            let options = AttributeOptions {
                swap_ref_hyp,
                execution: Execution::Parallel,
                seed,
            };
            let base = store.of_kind(ModelKind::Base);
            let ft = store.of_kind(ModelKind::Finetuned);
            let result = with_threads(parallelism.max(1), || {
                attribute(method, &base, &ft, &corpus, &options)
            })?;
            emit(out.as_deref(), &pretty(&result))
        }

        Command::Simulate { config, seed, parallelism, out } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                config.master_seed = seed;
            }
            if let Some(p) = parallelism {
                config.parallelism = p;
            }
            let report = run_simulation(&config)?;
            for s in &report.summary {
                eprintln!(
                    "{:<11} mean {:.3}  min {:.3}  max {:.3}",
                    s.method.name(),
                    s.mean,
                    s.min,
                    s.max
                );
            }
            emit(out.as_deref(), &report.to_json())?;
            if report.partial {
                eprintln!("warning: some repetitions failed; see `error` fields");
            }
            Ok(())
        }

        Command::Cv {
            transcripts,
            k,
            seed,
            backend,
            kind,
            parallelism,
            out,
        } => {
            let mut store = load_store(&transcripts)?;
            if let Some(kind) = kind {
                store = store.of_kind(kind);
            }
            let accuracy = with_threads(parallelism.max(1), || run_cv(&store, k, seed, backend))?;
            let summary = serde_json::json!({
                "backend": backend,
                "k": k,
                "seed": seed,
                "records": store.len(),
                "accuracy": accuracy,
            });
            emit(out.as_deref(), &pretty(&summary))
        }
    }
}

fn main() -> ExitCode {
    // clap's own usage errors exit with 2, which is reserved for I/O here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(match failure {
                Failure::Invalid(_) => 1,
                Failure::Io(_) => 2,
            })
        }
    }
}
