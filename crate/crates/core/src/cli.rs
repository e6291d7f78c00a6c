//! The `horse` command line.
//!
//! Exit codes: 0 success, 2 malformed input (annotations, config, flags),
//! 3 I/O or unusable index, 4 bad query.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{ConfigError, EngineConfig};
use crate::index::{IndexError, IndexHandle};
use crate::ingest::{self, IngestError, IngestOptions};
use crate::matcher::{ConstraintCheck, MatchMode, MatchResult};
use crate::priors::{PriorsError, RelationPriors, TypicalityReport};
use crate::query::GRAMMAR_HINT;
use crate::service::{self, ApiError, AppState, Engine, EngineError};
use crate::synth::{generate_synthetic, GeneratorSpec};
use crate::vocab::{VocabError, Vocabulary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_QUERY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "horse", version, about = "Scene-graph image retrieval over object annotations")]
struct Cli {
    /// TOML engine configuration; defaults apply to anything not set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load annotation files, fit relation priors and build an index.
    Ingest {
        #[arg(long, required = true, num_args = 1..)]
        annotations: Vec<PathBuf>,
        /// Index directory (default: `index_dir` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a query against an index.
    Search {
        #[arg(long)]
        index: Option<PathBuf>,
        query: String,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value = "ranked")]
        mode: MatchMode,
        #[arg(long)]
        json: bool,
    },
    /// List the most unusual images.
    Anomalies {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        json: bool,
    },
    /// Show why an image does or does not match a query.
    Explain {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        image: String,
        query: String,
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic annotation file and its `.truth.json` sidecar.
    Gen {
        #[arg(long)]
        scenes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        anomaly_rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        addr: Option<String>,
        /// Directory against which relative image URIs are resolved.
        #[arg(long, default_value = ".")]
        image_root: PathBuf,
    },
    /// Print the effective configuration.
    Config {
        /// Ignore `--config` and print the built-in defaults.
        #[arg(long)]
        print_defaults: bool,
    },
    /// Print relation priors.
    Priors {
        #[arg(long)]
        index: Option<PathBuf>,
        /// Print every label pair.
        #[arg(long)]
        dump: bool,
        #[arg(long, requires = "object")]
        subject: Option<String>,
        #[arg(long, requires = "subject")]
        object: Option<String>,
    },
    /// Print corpus and dictionary counts.
    Stats {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Io { .. } => EXIT_IO,
            _ => EXIT_PARSE,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<IndexError> for Failure {
    fn from(e: IndexError) -> Self {
        let code = match e {
            IndexError::EmptyCorpus | IndexError::DuplicateImage(_) => EXIT_PARSE,
            _ => EXIT_IO,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<VocabError> for Failure {
    fn from(e: VocabError) -> Self {
        let code = match e {
            VocabError::Io { .. } => EXIT_IO,
            _ => EXIT_PARSE,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Index(e) => e.into(),
            EngineError::Vocab(e) => e.into(),
        }
    }
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        let mut message = e.message.clone();
        if e.error == "parse_error" {
            message.push_str("\nhint: ");
            message.push_str(GRAMMAR_HINT);
        }
        Failure::new(EXIT_QUERY, message)
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

/// Runs the CLI with `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_PARSE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match dispatch(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig, Failure> {
    match path {
        Some(p) => Ok(EngineConfig::load(p)?),
        None => Ok(EngineConfig::default()),
    }
}

fn open_engine(index: Option<PathBuf>, cfg: &EngineConfig, err: &mut dyn Write) -> Result<Engine, Failure> {
    let dir = index.unwrap_or_else(|| cfg.index_dir.clone());
    let engine = Engine::open(&dir, cfg)?;
    for w in engine.warnings() {
        let _ = writeln!(err, "warning: {w}");
    }
    Ok(engine)
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("response serializes");
    writeln!(out, "{text}").map_err(|e| Failure::new(EXIT_IO, e.to_string()))
}

fn line(out: &mut dyn Write, text: impl AsRef<str>) -> Result<(), Failure> {
    writeln!(out, "{}", text.as_ref()).map_err(|e| Failure::new(EXIT_IO, e.to_string()))
}

fn checks(list: &[ConstraintCheck]) -> String {
    list.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join(", ")
}

fn summary(r: &MatchResult) -> String {
    let mut s = format!("{}  score={:.3}  matched: {}", r.image_id, r.score, checks(&r.satisfied));
    if !r.violated.is_empty() {
        s.push_str(&format!("  missed: {}", checks(&r.violated)));
    }
    s
}

fn report_line(r: &TypicalityReport) -> String {
    let top: Vec<String> = r
        .triple_surprisals
        .iter()
        .take(3)
        .map(|t| {
            format!(
                "{} {} {} (p={:.4})",
                t.subject_label,
                t.predicate,
                t.object_label,
                t.probability
            )
        })
        .collect();
    format!("{}  uniqueness={:.3}  {}", r.image_id, r.uniqueness, top.join("; "))
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Config { print_defaults } => {
            let cfg = if print_defaults {
                EngineConfig::default()
            } else {
                load_config(cli.config.as_deref())?
            };
            write!(out, "{}", cfg.to_toml()).map_err(|e| Failure::new(EXIT_IO, e.to_string()))
        }
        Command::Gen {
            scenes,
            seed,
            anomaly_rate,
            out: path,
        } => {
            let corpus = generate_synthetic(&GeneratorSpec {
                n_scenes: scenes,
                seed,
                anomaly_rate,
                ..GeneratorSpec::default()
            })
            .map_err(|e| Failure::new(EXIT_PARSE, e.to_string()))?;
            let doc = serde_json::to_string_pretty(&corpus.document).expect("document serializes");
            std::fs::write(&path, doc).map_err(|e| io_failure(&path, e))?;
            let truth_path = truth_path(&path);
            let truth = serde_json::to_string_pretty(&corpus.truth).expect("truth serializes");
            std::fs::write(&truth_path, truth).map_err(|e| io_failure(&truth_path, e))?;
            line(
                out,
                format!(
                    "scenes={} anomalies={} out={} truth={}",
                    scenes,
                    corpus.anomalous_ids().len(),
                    path.display(),
                    truth_path.display()
                ),
            )
        }
        Command::Ingest { annotations, out: dir } => {
            let cfg = load_config(cli.config.as_deref())?;
            let vocab = match &cfg.vocab_path {
                Some(p) => Vocabulary::load(p)?,
                None => Vocabulary::default(),
            };
            let opts = IngestOptions {
                min_confidence: cfg.min_confidence,
                relations: cfg.relations.clone(),
                salience: cfg.salience.clone(),
            };
            let mut batches = Vec::new();
            for path in &annotations {
                let file = File::open(path).map_err(|e| io_failure(path, e))?;
                let loaded = ingest::load_annotations(BufReader::new(file), &vocab, &opts).map_err(|e| {
                    let code = match e {
                        IngestError::Io(_) => EXIT_IO,
                        _ => EXIT_PARSE,
                    };
                    Failure::new(code, format!("{}: {e}", path.display()))
                })?;
                for w in &loaded.report.warnings {
                    let _ = writeln!(err, "warning: {}: {w}", path.display());
                }
                batches.push(loaded.graphs);
            }
            let graphs = ingest::merge(batches).map_err(|e| Failure::new(EXIT_PARSE, e.to_string()))?;
            let priors = RelationPriors::fit(&graphs, cfg.alpha).map_err(|e| match e {
                PriorsError::EmptyCorpus => Failure::new(EXIT_PARSE, e.to_string()),
            })?;
            let dir = dir.unwrap_or_else(|| cfg.index_dir.clone());
            let handle = IndexHandle::build_to_dir(graphs, priors, cfg, &dir)?;
            let s = handle.stats();
            line(
                out,
                format!(
                    "images={} objects={} triples={} terms={}",
                    s.images, s.objects, s.triples, s.terms
                ),
            )
        }
        Command::Search {
            index,
            query,
            k,
            mode,
            json,
        } => {
            let cfg = load_config(cli.config.as_deref())?;
            let engine = open_engine(index, &cfg, err)?;
            let response = engine.search(&query, k, mode)?;
            if json {
                return emit_json(out, &response);
            }
            for (i, r) in response.results.iter().enumerate() {
                line(out, format!("{:>3}. {}", i + 1, summary(r)))?;
            }
            Ok(())
        }
        Command::Anomalies { index, k, json } => {
            let cfg = load_config(cli.config.as_deref())?;
            let engine = open_engine(index, &cfg, err)?;
            let reports = engine.anomalies(k);
            if json {
                return emit_json(out, &reports);
            }
            for (i, r) in reports.iter().enumerate() {
                line(out, format!("{:>3}. {}", i + 1, report_line(r)))?;
            }
            Ok(())
        }
        Command::Explain {
            index,
            image,
            query,
            json,
        } => {
            let cfg = load_config(cli.config.as_deref())?;
            let engine = open_engine(index, &cfg, err)?;
            let result = engine.explain(&image, &query)?;
            if json {
                return emit_json(out, &result);
            }
            line(out, format!("{}  score={:.3}", result.image_id, result.score))?;
            let binding: Vec<String> = result
                .binding
                .iter()
                .map(|(n, o)| format!("node {n} -> object {o}"))
                .collect();
            if binding.is_empty() {
                line(out, "binding: (none)")?;
            } else {
                line(out, format!("binding: {}", binding.join(", ")))?;
            }
            for (mark, list) in [("+", &result.satisfied), ("-", &result.violated)] {
                for c in list {
                    line(out, format!("{mark} {}", c.text))?;
                    if let Some(d) = &c.detail {
                        line(out, format!("    {d}"))?;
                    }
                    for clause in &c.evidence {
                        line(out, format!("    {clause}"))?;
                    }
                }
            }
            Ok(())
        }
        Command::Serve {
            index,
            port,
            addr,
            image_root,
        } => {
            let cfg = load_config(cli.config.as_deref())?;
            let engine = match open_engine(index, &cfg, err) {
                Ok(e) => Some(Arc::new(e)),
                Err(f) => {
                    let _ = writeln!(err, "warning: serving without an index: {}", f.message);
                    None
                }
            };
            let addr = addr.unwrap_or_else(|| cfg.listen_addr.clone());
            let port = port.unwrap_or(cfg.port);
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
            let _ = writeln!(err, "listening on {addr}:{port}");
            runtime
                .block_on(service::serve(AppState::new(engine, image_root), &addr, port))
                .map_err(|e| Failure::new(EXIT_IO, format!("{addr}:{port}: {e}")))
        }
        Command::Priors {
            index,
            dump,
            subject,
            object,
        } => {
            let cfg = load_config(cli.config.as_deref())?;
            let engine = open_engine(index, &cfg, err)?;
            if !dump && subject.is_none() {
                return Err(Failure::new(EXIT_PARSE, "give --dump or --subject and --object"));
            }
            let value = engine.priors(subject.as_deref(), object.as_deref())?;
            emit_json(out, &value)
        }
        Command::Stats { index, json } => {
            let cfg = load_config(cli.config.as_deref())?;
            let engine = open_engine(index, &cfg, err)?;
            let s = engine.stats();
            if json {
                return emit_json(out, s);
            }
            line(
                out,
                format!(
                    "images={} empty_images={} objects={} triples={} terms={} label_terms={} attr_terms={} rel_terms={} postings={}",
                    s.images, s.empty_images, s.objects, s.triples, s.terms, s.label_terms, s.attr_terms, s.rel_terms, s.postings
                ),
            )
        }
    }
}

/// `scenes.json` -> `scenes.truth.json`.
pub fn truth_path(annotations: &Path) -> PathBuf {
    let stem = annotations
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "annotations".into());
    annotations.with_file_name(format!("{stem}.truth.json"))
}
