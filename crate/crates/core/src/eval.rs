//! Metrics, the train-on-A/test-on-B matrix, masking probes and report
//! emission.
//!
//! Accuracy is measured per opinion, not per sentence. Two modes are scored
//! for every cell: `polarity` classifies each gold opinion at its gold span,
//! `joint` classifies the extracted aspects and credits a gold opinion only
//! when an extracted span matches it and the polarity is right.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::{ClassifierSpec, TrainedClassifier};
use crate::corpus::{mask_tokens, serialize_semeval, Dataset, Domain, Polarity, Span};
use crate::extract::ExtractionBackend;
use crate::knowledge::KnowledgeSource;
use crate::seed::derive_seed;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction for {0} has no gold opinion")]
    DanglingKey(OpinionKey),
    #[error("invalid matrix config: {0}")]
    Config(String),
    #[error("run train={train} test={test}, {stage}: {message}")]
    Run { train: Domain, test: Domain, stage: &'static str, message: String },
    #[error("probe fraction {0} outside [0, 1]")]
    Fraction(f64),
}

/// Identifies one gold opinion: sentence id plus position in its list.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OpinionKey {
    pub sentence_id: String,
    pub index: usize,
}

impl OpinionKey {
    pub fn new(sentence_id: impl Into<String>, index: usize) -> Self {
        OpinionKey { sentence_id: sentence_id.into(), index }
    }
}

impl fmt::Display for OpinionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.sentence_id, self.index)
    }
}

fn gold_labels(gold: &Dataset, spans_only: bool) -> Vec<(OpinionKey, Polarity)> {
    gold.sentences()
        .flat_map(|s| {
            s.opinions
                .iter()
                .enumerate()
                .filter(move |(_, o)| !spans_only || o.span.is_some())
                .map(move |(i, o)| (OpinionKey::new(s.id.clone(), i), o.polarity))
        })
        .collect()
}

/// Lines gold labels up with predictions; missing predictions are `None`.
fn align(
    preds: &[(OpinionKey, Polarity)],
    gold: &[(OpinionKey, Polarity)],
) -> Result<Vec<(Polarity, Option<Polarity>)>, EvalError> {
    let index: HashMap<&OpinionKey, usize> = gold.iter().enumerate().map(|(i, (k, _))| (k, i)).collect();
    let mut predicted = vec![None; gold.len()];
    for (key, p) in preds {
        let i = *index.get(key).ok_or_else(|| EvalError::DanglingKey(key.clone()))?;
        predicted[i] = Some(*p);
    }
    Ok(gold.iter().map(|(_, g)| *g).zip(predicted).collect())
}

fn accuracy_of(pairs: &[(Polarity, Option<Polarity>)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let hits = pairs.iter().filter(|(g, p)| Some(*g) == *p).count();
    hits as f64 / pairs.len() as f64
}

fn macro_f1_of(pairs: &[(Polarity, Option<Polarity>)]) -> f64 {
    let mut f1s = Vec::new();
    for c in Polarity::ALL {
        let tp = pairs.iter().filter(|(g, p)| *g == c && *p == Some(c)).count();
        let n_gold = pairs.iter().filter(|(g, _)| *g == c).count();
        let n_pred = pairs.iter().filter(|(_, p)| *p == Some(c)).count();
        if n_gold == 0 && n_pred == 0 {
            continue;
        }
        let precision = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
        let recall = if n_gold == 0 { 0.0 } else { tp as f64 / n_gold as f64 };
        f1s.push(harmonic(precision, recall));
    }
    if f1s.is_empty() {
        0.0
    } else {
        f1s.iter().sum::<f64>() / f1s.len() as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Fraction of all gold opinions whose predicted polarity is right. Gold
/// opinions without a prediction count as wrong.
pub fn polarity_accuracy(preds: &[(OpinionKey, Polarity)], gold: &Dataset) -> Result<f64, EvalError> {
    Ok(accuracy_of(&align(preds, &gold_labels(gold, false))?))
}

/// Unweighted mean of per-class F1 over the classes present in gold or
/// predictions.
pub fn macro_f1(preds: &[(OpinionKey, Polarity)], gold: &Dataset) -> Result<f64, EvalError> {
    Ok(macro_f1_of(&align(preds, &gold_labels(gold, false))?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SpanMatch {
    #[default]
    Exact,
    Overlap,
}

impl SpanMatch {
    fn accepts(self, pred: &Span, gold: &Span) -> bool {
        match self {
            SpanMatch::Exact => pred == gold,
            SpanMatch::Overlap => pred.overlaps(gold),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpanMatch::Exact => "exact",
            SpanMatch::Overlap => "overlap",
        }
    }
}

impl FromStr for SpanMatch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(SpanMatch::Exact),
            "overlap" => Ok(SpanMatch::Overlap),
            other => Err(format!("unknown span match {other:?} (exact | overlap)")),
        }
    }
}

/// Greedy matching: predictions are visited left to right and each takes
/// the first still-unmatched gold span it is accepted by. Returns the gold
/// index matched by every prediction.
pub fn match_spans(preds: &[Span], gold: &[Span], mode: SpanMatch) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by_key(|&i| (preds[i].start, preds[i].end, i));
    let mut taken = vec![false; gold.len()];
    let mut out = vec![None; preds.len()];
    for i in order {
        if let Some(j) = (0..gold.len()).find(|&j| !taken[j] && mode.accepts(&preds[i], &gold[j])) {
            taken[j] = true;
            out[i] = Some(j);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Span-level precision, recall and F1 against gold opinions that carry a
/// span. Predictions keyed by a sentence id absent from `gold` are spurious.
pub fn aspect_prf(preds: &BTreeMap<String, Vec<Span>>, gold: &Dataset, mode: SpanMatch) -> Prf {
    let mut n_pred = 0;
    let mut n_gold = 0;
    let mut hits = 0;
    let mut seen = 0;
    for s in gold.sentences() {
        let g: Vec<Span> = s.opinions.iter().filter_map(|o| o.span).collect();
        n_gold += g.len();
        if let Some(p) = preds.get(&s.id) {
            seen += 1;
            n_pred += p.len();
            hits += match_spans(p, &g, mode).iter().flatten().count();
        }
    }
    if seen < preds.len() {
        let ids: std::collections::HashSet<&str> = gold.sentences().map(|s| s.id.as_str()).collect();
        n_pred += preds.iter().filter(|(k, _)| !ids.contains(k.as_str())).map(|(_, v)| v.len()).sum::<usize>();
    }
    let precision = if n_pred == 0 { 0.0 } else { hits as f64 / n_pred as f64 };
    let recall = if n_gold == 0 { 0.0 } else { hits as f64 / n_gold as f64 };
    Prf { precision, recall, f1: harmonic(precision, recall) }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EvalMode {
    Polarity,
    Joint,
}

impl EvalMode {
    pub const ALL: [EvalMode; 2] = [EvalMode::Polarity, EvalMode::Joint];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Polarity => "polarity",
            EvalMode::Joint => "joint",
        }
    }
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "polarity" => Ok(EvalMode::Polarity),
            "joint" => Ok(EvalMode::Joint),
            other => Err(format!("unknown evaluation mode {other:?} (polarity | joint)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub train_domain: Domain,
    pub test_domain: Domain,
    pub extractor: String,
    pub classifier: String,
    pub mode: EvalMode,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub aspect_precision: f64,
    pub aspect_recall: f64,
    pub aspect_f1: f64,
    /// Gold opinions scored in this mode.
    pub n_gold: usize,
    /// Extracted aspects kept after category translation.
    pub n_predicted: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Baseline {
    pub label: &'static str,
    pub domain: &'static str,
    /// Percent.
    pub accuracy: f64,
}

const fn baseline(label: &'static str, domain: &'static str, accuracy: f64) -> Baseline {
    Baseline { label, domain, accuracy }
}

/// Published reference accuracies the report is printed next to.
pub const BASELINES: [Baseline; 10] = [
    baseline("Deep Memory Network", "laptop", 72.21),
    baseline("Deep Memory Network", "restaurant", 80.95),
    baseline("12-layer BERT, fine-tuned", "laptop", 82.3),
    baseline("12-layer BERT, fine-tuned", "restaurant", 81.5),
    baseline("LLM aspects + 12-layer BERT, trained on laptop", "laptop", 92.1),
    baseline("LLM aspects + 12-layer BERT, trained on laptop", "restaurant", 88.9),
    baseline("LLM aspects + 12-layer BERT, trained on restaurant", "laptop", 90.4),
    baseline("LLM aspects + 12-layer BERT, trained on restaurant", "restaurant", 91.4),
    baseline("LLM aspects + 12-layer BERT, trained on laptop and restaurant", "laptop", 91.1),
    baseline("LLM aspects + 12-layer BERT, trained on laptop and restaurant", "restaurant", 90.6),
];

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub seed: u64,
    pub config_digest: String,
    pub runs: Vec<RunResult>,
    pub baselines: Vec<Baseline>,
}

impl EvalReport {
    pub fn new(seed: u64, config_digest: String, runs: Vec<RunResult>) -> Self {
        EvalReport { seed, config_digest, runs, baselines: BASELINES.to_vec() }
    }
}

#[derive(Clone)]
pub struct MatrixConfig {
    pub corpora: Vec<Dataset>,
    pub knowledge: KnowledgeSource,
    pub extractor: Arc<dyn ExtractionBackend>,
    pub classifier: ClassifierSpec,
    pub modes: Vec<EvalMode>,
    pub span_match: SpanMatch,
    pub seed: u64,
}

impl fmt::Debug for MatrixConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixConfig")
            .field("domains", &self.corpora.iter().map(|d| d.domain.name()).collect::<Vec<_>>())
            .field("extractor", &self.extractor.name())
            .field("classifier", &self.classifier)
            .field("modes", &self.modes)
            .field("span_match", &self.span_match)
            .field("seed", &self.seed)
            .finish()
    }
}

impl MatrixConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.corpora.is_empty() {
            return Err(EvalError::Config("no corpora".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for ds in &self.corpora {
            if !seen.insert(&ds.domain) {
                return Err(EvalError::Config(format!("domain {} appears twice", ds.domain)));
            }
        }
        if self.modes.is_empty() {
            return Err(EvalError::Config("no evaluation mode".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical form of every input that affects results.
    /// File locations do not enter the digest, only their contents.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut field = |name: &str, value: &str| {
            h.update(name.as_bytes());
            h.update((value.len() as u64).to_le_bytes());
            h.update(value.as_bytes());
        };
        field("format_version", &REPORT_FORMAT_VERSION.to_string());
        for ds in self.sorted_corpora() {
            field("corpus", ds.domain.name());
            field("xml", &serialize_semeval(ds));
        }
        field("knowledge", &self.knowledge.canonical_text());
        field("extractor", &self.extractor.fingerprint());
        field("classifier", &self.classifier.describe());
        let modes: Vec<&str> = self.modes.iter().map(|m| m.as_str()).collect();
        field("modes", &modes.join(","));
        field("span_match", self.span_match.as_str());
        field("seed", &self.seed.to_string());
        hex::encode(h.finalize())
    }

    fn sorted_corpora(&self) -> Vec<&Dataset> {
        let mut v: Vec<&Dataset> = self.corpora.iter().collect();
        v.sort_by(|a, b| a.domain.name().cmp(b.domain.name()));
        v
    }

    fn modes_sorted(&self) -> Vec<EvalMode> {
        let mut m = self.modes.clone();
        m.sort();
        m.dedup();
        m
    }
}

fn run_err(train: &Domain, test: &Domain, stage: &'static str, e: impl fmt::Display) -> EvalError {
    EvalError::Run { train: train.clone(), test: test.clone(), stage, message: e.to_string() }
}

fn train_all(cfg: &MatrixConfig) -> Result<Vec<(Domain, TrainedClassifier)>, EvalError> {
    cfg.sorted_corpora()
        .into_iter()
        .map(|ds| {
            let seed = derive_seed(cfg.seed, &format!("train/{}", ds.domain));
            TrainedClassifier::train(&cfg.classifier, ds, seed)
                .map(|m| (ds.domain.clone(), m))
                .map_err(|e| run_err(&ds.domain, &ds.domain, "train", e))
        })
        .collect()
}

/// Extraction runs with the training domain's knowledge; categories are then
/// translated into the test domain. Aspects whose category has no
/// counterpart there are dropped.
fn extract_cell(
    cfg: &MatrixConfig,
    train: &Domain,
    test: &Dataset,
) -> Result<BTreeMap<String, Vec<Option<Span>>>, EvalError> {
    let mut out = BTreeMap::new();
    for s in test.sentences() {
        let preds = cfg
            .extractor
            .extract(s, &cfg.knowledge, train)
            .map_err(|e| run_err(train, &test.domain, "extract", format!("sentence {}: {e}", s.id)))?;
        let kept = preds
            .into_iter()
            .filter(|p| match &p.category {
                None => true,
                Some(c) => cfg.knowledge.map_category(c, train, &test.domain).is_some(),
            })
            .map(|p| p.span)
            .collect();
        out.insert(s.id.clone(), kept);
    }
    Ok(out)
}

fn evaluate_cell(
    cfg: &MatrixConfig,
    train: &Domain,
    model: &TrainedClassifier,
    test: &Dataset,
) -> Result<Vec<RunResult>, EvalError> {
    let extracted = extract_cell(cfg, train, test)?;
    let spans: BTreeMap<String, Vec<Span>> =
        extracted.iter().map(|(k, v)| (k.clone(), v.iter().flatten().copied().collect())).collect();
    let prf = aspect_prf(&spans, test, cfg.span_match);
    let n_predicted = extracted.values().map(Vec::len).sum();
    let classify = |s: &crate::corpus::Sentence, span: Option<Span>| {
        model.predict(s, span).map_err(|e| run_err(train, &test.domain, "classify", format!("sentence {}: {e}", s.id)))
    };

    let mut results = Vec::new();
    for mode in cfg.modes_sorted() {
        let (gold, preds) = match mode {
            EvalMode::Polarity => {
                let mut preds = Vec::new();
                for s in test.sentences() {
                    for (i, o) in s.opinions.iter().enumerate() {
                        preds.push((OpinionKey::new(s.id.clone(), i), classify(s, o.span)?));
                    }
                }
                (gold_labels(test, false), preds)
            }
            EvalMode::Joint => {
                let mut preds = Vec::new();
                for s in test.sentences() {
                    let gold_idx: Vec<usize> =
                        (0..s.opinions.len()).filter(|&i| s.opinions[i].span.is_some()).collect();
                    let gold_spans: Vec<Span> = gold_idx.iter().filter_map(|&i| s.opinions[i].span).collect();
                    let pred_spans = &spans[&s.id];
                    for (p, m) in pred_spans.iter().zip(match_spans(pred_spans, &gold_spans, cfg.span_match)) {
                        if let Some(j) = m {
                            preds.push((OpinionKey::new(s.id.clone(), gold_idx[j]), classify(s, Some(*p))?));
                        }
                    }
                }
                (gold_labels(test, true), preds)
            }
        };
        let pairs = align(&preds, &gold)?;
        results.push(RunResult {
            train_domain: train.clone(),
            test_domain: test.domain.clone(),
            extractor: cfg.extractor.name().to_string(),
            classifier: model.kind().to_string(),
            mode,
            accuracy: accuracy_of(&pairs),
            macro_f1: macro_f1_of(&pairs),
            aspect_precision: prf.precision,
            aspect_recall: prf.recall,
            aspect_f1: prf.f1,
            n_gold: gold.len(),
            n_predicted,
        });
    }
    Ok(results)
}

fn evaluate_all(
    cfg: &MatrixConfig,
    models: &[(Domain, TrainedClassifier)],
    tests: &[Dataset],
) -> Result<Vec<RunResult>, EvalError> {
    let mut runs = Vec::new();
    for (train, model) in models {
        for test in tests {
            runs.extend(evaluate_cell(cfg, train, model, test)?);
        }
    }
    Ok(runs)
}

/// Every (train, test) pair in lexicographic domain order, same-domain pairs
/// included. Each classifier is trained once on its domain's gold opinions
/// and reused unchanged on every test corpus.
pub fn run_matrix(cfg: &MatrixConfig) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    let models = train_all(cfg)?;
    let tests: Vec<Dataset> = cfg.sorted_corpora().into_iter().cloned().collect();
    let runs = evaluate_all(cfg, &models, &tests)?;
    Ok(EvalReport::new(cfg.seed, cfg.digest(), runs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub fraction: f64,
    pub run: RunResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub seed: u64,
    pub config_digest: String,
    pub results: Vec<ProbeResult>,
}

/// Re-scores every cell with the test corpora masked at each fraction
/// (context tokens only, one seed for all fractions). Training data is left
/// alone and classifiers are trained once. Output is sorted by fraction.
pub fn mask_probe(cfg: &MatrixConfig, fractions: &[f64]) -> Result<ProbeReport, EvalError> {
    cfg.validate()?;
    if let Some(&f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(EvalError::Fraction(f));
    }
    let mut sorted = fractions.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let models = train_all(cfg)?;
    let mask_seed = derive_seed(cfg.seed, "mask");
    let mut results = Vec::new();
    for fraction in sorted {
        let tests = cfg
            .sorted_corpora()
            .into_iter()
            .map(|ds| mask_tokens(ds, fraction, mask_seed, false).map_err(|e| EvalError::Config(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        for run in evaluate_all(cfg, &models, &tests)? {
            results.push(ProbeResult { fraction, run });
        }
    }
    Ok(ProbeReport { seed: cfg.seed, config_digest: cfg.digest(), results })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Table,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Table];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Table => "txt",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "table" => Ok(ReportFormat::Table),
            other => Err(format!("unknown report format {other:?} (json | csv | table)")),
        }
    }
}

fn fixed4(x: f64) -> String {
    format!("{x:.4}")
}

fn run_json(r: &RunResult) -> Value {
    json!({
        "train_domain": r.train_domain.name(),
        "test_domain": r.test_domain.name(),
        "extractor": r.extractor,
        "classifier": r.classifier,
        "mode": r.mode.as_str(),
        "accuracy": fixed4(r.accuracy),
        "macro_f1": fixed4(r.macro_f1),
        "aspect_precision": fixed4(r.aspect_precision),
        "aspect_recall": fixed4(r.aspect_recall),
        "aspect_f1": fixed4(r.aspect_f1),
        "n_gold": r.n_gold,
        "n_predicted": r.n_predicted,
    })
}

fn baseline_json(b: &Baseline) -> Value {
    json!({ "label": b.label, "domain": b.domain, "accuracy": b.accuracy.to_string() })
}

fn pretty(v: &Value) -> String {
    // serde_json's map is ordered by key unless `preserve_order` is enabled.
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

const CSV_HEADER: &str =
    "train_domain,test_domain,extractor,classifier,mode,accuracy,macro_f1,aspect_p,aspect_r,aspect_f1";

fn csv_row(r: &RunResult) -> String {
    [
        r.train_domain.name().to_string(),
        r.test_domain.name().to_string(),
        r.extractor.clone(),
        r.classifier.clone(),
        r.mode.as_str().to_string(),
        fixed4(r.accuracy),
        fixed4(r.macro_f1),
        fixed4(r.aspect_precision),
        fixed4(r.aspect_recall),
        fixed4(r.aspect_f1),
    ]
    .join(",")
}

const TABLE_WIDTH: usize = 96;

fn table_runs(out: &mut String, runs: &[&RunResult], prefix: &str) {
    let mut blocks: Vec<(&Domain, Vec<&RunResult>)> = Vec::new();
    for r in runs {
        match blocks.last_mut() {
            Some((d, v)) if *d == &r.train_domain && v[0].classifier == r.classifier => v.push(r),
            _ => blocks.push((&r.train_domain, vec![r])),
        }
    }
    for (train, rows) in blocks {
        let head = rows[0];
        let _ = writeln!(out, "{prefix}{} + {} aspects, trained on {train}", head.classifier, head.extractor);
        for r in rows {
            let label = format!("  For {}", r.test_domain);
            let _ = writeln!(
                out,
                "{prefix}{label:<44}{:<10}{:>9}{:>10}{:>11}{:>11}",
                r.mode.as_str(),
                fixed4(r.accuracy),
                fixed4(r.macro_f1),
                fixed4(r.aspect_f1),
                format!("{}/{}", r.n_gold, r.n_predicted),
            );
        }
    }
}

fn table_header(out: &mut String, title: &str, seed: u64, digest: &str) {
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "seed {seed}, config {}", &digest[..digest.len().min(16)]);
    let _ = writeln!(out, "{}", "=".repeat(TABLE_WIDTH));
    let _ = writeln!(
        out,
        "{:<44}{:<10}{:>9}{:>10}{:>11}{:>11}",
        "Architecture and details", "Mode", "Accuracy", "Macro-F1", "Aspect-F1", "Gold/Pred"
    );
    let _ = writeln!(out, "{}", "-".repeat(TABLE_WIDTH));
}

fn table_baselines(out: &mut String, baselines: &[Baseline]) {
    let _ = writeln!(out, "Reference accuracies (%)");
    let mut last = "";
    for b in baselines {
        if b.label != last {
            let _ = writeln!(out, "  {}", b.label);
            last = b.label;
        }
        let label = format!("    For {}", b.domain);
        let _ = writeln!(out, "{label:<54}{:>9.2}", b.accuracy);
    }
}

pub fn emit_report(r: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => pretty(&json!({
            "format_version": REPORT_FORMAT_VERSION,
            "seed": r.seed,
            "config_digest": r.config_digest,
            "accuracy_unit": "opinion",
            "runs": r.runs.iter().map(run_json).collect::<Vec<_>>(),
            "baselines": r.baselines.iter().map(baseline_json).collect::<Vec<_>>(),
        })),
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for run in &r.runs {
                out.push_str(&csv_row(run));
                out.push('\n');
            }
            out
        }
        ReportFormat::Table => {
            let mut out = String::new();
            table_header(&mut out, "Cross-domain evaluation", r.seed, &r.config_digest);
            table_runs(&mut out, &r.runs.iter().collect::<Vec<_>>(), "");
            let _ = writeln!(out, "{}", "-".repeat(TABLE_WIDTH));
            table_baselines(&mut out, &r.baselines);
            let _ = writeln!(out, "{}", "=".repeat(TABLE_WIDTH));
            out
        }
    }
}

pub fn emit_probe(p: &ProbeReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => pretty(&json!({
            "format_version": REPORT_FORMAT_VERSION,
            "seed": p.seed,
            "config_digest": p.config_digest,
            "masked": "context tokens",
            "results": p.results.iter().map(|r| json!({ "fraction": fixed4(r.fraction), "run": run_json(&r.run) })).collect::<Vec<_>>(),
        })),
        ReportFormat::Csv => {
            let mut out = format!("fraction,{CSV_HEADER}\n");
            for r in &p.results {
                let _ = writeln!(out, "{},{}", fixed4(r.fraction), csv_row(&r.run));
            }
            out
        }
        ReportFormat::Table => {
            let mut out = String::new();
            table_header(&mut out, "Masking probe", p.seed, &p.config_digest);
            let mut fractions: Vec<f64> = p.results.iter().map(|r| r.fraction).collect();
            fractions.dedup();
            for f in fractions {
                let _ = writeln!(out, "Masked fraction {}", fixed4(f));
                let runs: Vec<&RunResult> = p.results.iter().filter(|r| r.fraction == f).map(|r| &r.run).collect();
                table_runs(&mut out, &runs, "  ");
            }
            let _ = writeln!(out, "{}", "=".repeat(TABLE_WIDTH));
            out
        }
    }
}
