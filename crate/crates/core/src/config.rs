//! Declarative run configuration: flat `key=value` lines with dotted
//! section prefixes.
//!
//! ```text
//! seed=0
//! corpus.laptop=mini_laptop.xml
//! corpus.restaurant=mini_restaurant.xml
//! knowledge.file=knowledge.tsv
//! extract.backend=mock
//! extract.mock_fixture=mock_predictions.json
//! classifier.kind=nb
//! matrix.mode=both
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! Values given as overrides (`--set key=value` on the command line) replace
//! file values; the cache directory falls back to `ABSA_CACHE_DIR`, then to
//! `.absa-cache`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::classifier::ClassifierSpec;
use crate::corpus::{parse_semeval, CorpusError, Dataset, Domain};
use crate::eval::{EvalMode, MatrixConfig, ReportFormat, SpanMatch};
use crate::extract::{
    ExtractError, ExtractionBackend, LexiconExtractor, LlmExtractor, LlmSettings, MockExtractor, PromptTemplate,
    DEFAULT_MAX_NGRAM,
};
use crate::knowledge::{KnowledgeError, KnowledgeSource};
use crate::llmclient::{LlmClient, RetryPolicy};
use crate::sentiment::{LrHyper, DEFAULT_WINDOW};

pub const CACHE_DIR_ENV: &str = "ABSA_CACHE_DIR";
pub const DEFAULT_CACHE_DIR: &str = ".absa-cache";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}, line {line}: {message}")]
    Syntax { origin: String, line: usize, message: String },
    #[error("{origin}: unknown key {key:?}")]
    UnknownKey { origin: String, key: String },
    #[error("key {key}: {message}")]
    Value { key: String, message: String },
    #[error("{key}: file {} does not exist", path.display())]
    MissingFile { key: String, path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Corpus { path: PathBuf, source: CorpusError },
    #[error("{}: {source}", path.display())]
    Knowledge { path: PathBuf, source: KnowledgeError },
    #[error("{}: {source}", path.display())]
    Extract { path: PathBuf, source: ExtractError },
}

pub fn read_file(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

pub fn load_corpus(path: &Path, domain: Domain) -> Result<Dataset, ConfigError> {
    parse_semeval(&read_file(path)?, domain).map_err(|source| ConfigError::Corpus { path: path.to_path_buf(), source })
}

pub fn load_knowledge(path: &Path) -> Result<KnowledgeSource, ConfigError> {
    KnowledgeSource::parse(&read_file(path)?)
        .map_err(|source| ConfigError::Knowledge { path: path.to_path_buf(), source })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Mock,
    Lexicon,
    Llm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub cache_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub corpora: Vec<(Domain, PathBuf)>,
    pub knowledge: Option<PathBuf>,
    pub backend: Backend,
    pub mock_fixture: Option<PathBuf>,
    pub max_ngram: usize,
    pub prompt: Option<PathBuf>,
    pub llm: LlmConfig,
    pub classifier: ClassifierSpec,
    pub modes: Vec<EvalMode>,
    pub span_match: SpanMatch,
    pub output_dir: Option<PathBuf>,
    pub formats: Vec<ReportFormat>,
    pub probe_fractions: Vec<f64>,
}

const SCALAR_KEYS: &[&str] = &[
    "seed",
    "knowledge.file",
    "extract.backend",
    "extract.mock_fixture",
    "extract.max_ngram",
    "extract.prompt",
    "llm.endpoint",
    "llm.model",
    "llm.max_tokens",
    "llm.max_in_flight",
    "llm.cache_dir",
    "classifier.kind",
    "classifier.window",
    "classifier.alpha",
    "classifier.lr",
    "classifier.epochs",
    "classifier.batch_size",
    "classifier.l2",
    "classifier.d_model",
    "classifier.n_layers",
    "classifier.max_len",
    "matrix.mode",
    "matrix.span_match",
    "output.dir",
    "output.formats",
    "probe.fractions",
];

fn known_key(key: &str) -> bool {
    SCALAR_KEYS.contains(&key) || key.strip_prefix("corpus.").is_some_and(|d| d.parse::<Domain>().is_ok())
}

/// Parses `key=value` lines; `#` starts a comment line. Duplicate keys are
/// an error.
pub fn parse_pairs(text: &str, origin: &str) -> Result<BTreeMap<String, (usize, String)>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let syntax = |message: String| ConfigError::Syntax { origin: origin.to_string(), line, message };
        let (k, v) = trimmed.split_once('=').ok_or_else(|| syntax(format!("expected key=value, got {trimmed:?}")))?;
        let key = k.trim().to_string();
        if !known_key(&key) {
            return Err(ConfigError::UnknownKey { origin: format!("{origin}, line {line}"), key });
        }
        if out.insert(key.clone(), (line, v.trim().to_string())).is_some() {
            return Err(syntax(format!("duplicate key {key}")));
        }
    }
    Ok(out)
}

struct Values {
    map: BTreeMap<String, String>,
    base: PathBuf,
}

impl Values {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|e: T::Err| ConfigError::Value { key: key.to_string(), message: format!("{raw:?}: {e}") }),
        }
    }

    fn path(&self, key: &str) -> Result<Option<PathBuf>, ConfigError> {
        let Some(raw) = self.get(key) else { return Ok(None) };
        let path = self.base.join(raw);
        if !path.exists() {
            return Err(ConfigError::MissingFile { key: key.to_string(), path });
        }
        Ok(Some(path))
    }
}

impl RunConfig {
    /// Reads `path` and applies `overrides` on top.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = read_file(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        RunConfig::parse(&text, &path.display().to_string(), &base, overrides)
    }

    pub fn parse(text: &str, origin: &str, base: &Path, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut map: BTreeMap<String, String> =
            parse_pairs(text, origin)?.into_iter().map(|(k, (_, v))| (k, v)).collect();
        for (k, v) in overrides {
            if !known_key(k) {
                return Err(ConfigError::UnknownKey { origin: "override".into(), key: k.clone() });
            }
            map.insert(k.clone(), v.clone());
        }
        RunConfig::from_values(Values { map, base: base.to_path_buf() })
    }

    fn from_values(v: Values) -> Result<Self, ConfigError> {
        let bad = |key: &str, message: String| ConfigError::Value { key: key.to_string(), message };

        let mut corpora = Vec::new();
        for key in v.map.keys().filter(|k| k.starts_with("corpus.")) {
            let domain: Domain = key["corpus.".len()..].parse().expect("checked by known_key");
            corpora.push((domain, v.path(key)?.expect("key present")));
        }

        let backend = match v.get("extract.backend").unwrap_or("lexicon") {
            "mock" => Backend::Mock,
            "lexicon" => Backend::Lexicon,
            "llm" => Backend::Llm,
            other => return Err(bad("extract.backend", format!("{other:?} (mock | lexicon | llm)"))),
        };
        let mock_fixture = v.path("extract.mock_fixture")?;
        if backend == Backend::Mock && mock_fixture.is_none() {
            return Err(bad("extract.mock_fixture", "required by the mock backend".into()));
        }

        let cache_dir = match v.get("llm.cache_dir") {
            Some(raw) => v.base.join(raw),
            None => std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| DEFAULT_CACHE_DIR.into()),
        };
        let llm = LlmConfig {
            endpoint: v.get("llm.endpoint").unwrap_or("http://127.0.0.1:8080").to_string(),
            model: v.get("llm.model").unwrap_or("llama").to_string(),
            max_tokens: v.parsed("llm.max_tokens", 512)?,
            max_in_flight: v.parsed("llm.max_in_flight", 2)?,
            cache_dir,
        };
        if llm.max_in_flight == 0 {
            return Err(bad("llm.max_in_flight", "must be positive".into()));
        }

        let window = v.parsed("classifier.window", DEFAULT_WINDOW)?;
        let classifier = match v.get("classifier.kind").unwrap_or("nb") {
            "nb" => ClassifierSpec::NaiveBayes { alpha: v.parsed("classifier.alpha", 1.0)?, window },
            "lr" => {
                let d = LrHyper::default();
                let hyper = LrHyper {
                    lr: v.parsed("classifier.lr", d.lr)?,
                    epochs: v.parsed("classifier.epochs", d.epochs)?,
                    batch_size: v.parsed("classifier.batch_size", d.batch_size)?,
                    l2: v.parsed("classifier.l2", d.l2)?,
                    seed: 0,
                };
                ClassifierSpec::Logistic { hyper, window }
            }
            "encoder" => ClassifierSpec::Encoder {
                d_model: v.parsed("classifier.d_model", 8)?,
                n_layers: v.parsed("classifier.n_layers", 2)?,
                max_len: v.parsed("classifier.max_len", 2 * window + 8)?,
                lr: v.parsed("classifier.lr", 1.0)?,
                epochs: v.parsed("classifier.epochs", 100)?,
                window,
            },
            other => return Err(bad("classifier.kind", format!("{other:?} (nb | lr | encoder)"))),
        };

        let modes = match v.get("matrix.mode").unwrap_or("both") {
            "both" => EvalMode::ALL.to_vec(),
            raw => vec![raw.parse().map_err(|e| bad("matrix.mode", e))?],
        };
        let formats = match v.get("output.formats") {
            None => ReportFormat::ALL.to_vec(),
            Some(raw) => raw
                .split(',')
                .map(|f| f.trim().parse())
                .collect::<Result<Vec<ReportFormat>, String>>()
                .map_err(|e| bad("output.formats", e))?,
        };
        let probe_fractions = match v.get("probe.fractions") {
            None => vec![0.0, 0.5],
            Some(raw) => parse_fractions(raw).map_err(|e| bad("probe.fractions", e))?,
        };

        Ok(RunConfig {
            seed: v.parsed("seed", 0)?,
            corpora,
            knowledge: v.path("knowledge.file")?,
            backend,
            mock_fixture,
            max_ngram: v.parsed("extract.max_ngram", DEFAULT_MAX_NGRAM)?,
            prompt: v.path("extract.prompt")?,
            llm,
            classifier,
            modes,
            span_match: v.parsed("matrix.span_match", SpanMatch::Exact)?,
            output_dir: v.get("output.dir").map(|d| v.base.join(d)),
            formats,
            probe_fractions,
        })
    }

    pub fn load_corpora(&self) -> Result<Vec<Dataset>, ConfigError> {
        self.corpora.iter().map(|(d, p)| load_corpus(p, d.clone())).collect()
    }

    pub fn load_knowledge(&self) -> Result<KnowledgeSource, ConfigError> {
        match &self.knowledge {
            Some(p) => load_knowledge(p),
            None => Ok(KnowledgeSource::default()),
        }
    }

    /// `corpora` are used to validate mock fixture spans.
    pub fn build_extractor(&self, corpora: &[&Dataset]) -> Result<Arc<dyn ExtractionBackend>, ConfigError> {
        Ok(match self.backend {
            Backend::Lexicon => Arc::new(LexiconExtractor { max_ngram: self.max_ngram }),
            Backend::Mock => {
                let path = self.mock_fixture.as_ref().expect("checked at load");
                let ex = MockExtractor::from_json(&read_file(path)?, corpora)
                    .map_err(|source| ConfigError::Extract { path: path.clone(), source })?;
                Arc::new(ex)
            }
            Backend::Llm => {
                let template = match &self.prompt {
                    Some(p) => PromptTemplate::parse(&read_file(p)?)
                        .map_err(|source| ConfigError::Extract { path: p.clone(), source })?,
                    None => PromptTemplate::default(),
                };
                let client =
                    LlmClient::new(Some(self.llm.cache_dir.clone()), RetryPolicy::default(), self.llm.max_in_flight);
                Arc::new(LlmExtractor {
                    client: Arc::new(client),
                    template,
                    settings: LlmSettings {
                        endpoint: self.llm.endpoint.clone(),
                        model: self.llm.model.clone(),
                        max_tokens: self.llm.max_tokens,
                    },
                })
            }
        })
    }

    pub fn matrix_config(&self) -> Result<MatrixConfig, ConfigError> {
        if self.corpora.is_empty() {
            return Err(ConfigError::Value { key: "corpus.<domain>".into(), message: "no corpus configured".into() });
        }
        let corpora = self.load_corpora()?;
        let extractor = self.build_extractor(&corpora.iter().collect::<Vec<_>>())?;
        Ok(MatrixConfig {
            corpora,
            knowledge: self.load_knowledge()?,
            extractor,
            classifier: self.classifier.clone(),
            modes: self.modes.clone(),
            span_match: self.span_match,
            seed: self.seed,
        })
    }
}

pub fn parse_fractions(raw: &str) -> Result<Vec<f64>, String> {
    raw.split(',')
        .map(|f| {
            let x: f64 = f.trim().parse().map_err(|_| format!("bad fraction {f:?}"))?;
            if (0.0..=1.0).contains(&x) {
                Ok(x)
            } else {
                Err(format!("fraction {x} outside [0, 1]"))
            }
        })
        .collect()
}

/// Splits `key=value` as given to `--set`.
pub fn parse_override(raw: &str) -> Result<(String, String), String> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got {raw:?}"))
}
