#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use absa::config::RunConfig;
use absa::corpus::Review;
use absa::encoder::{EncoderConfig, EncoderInput, EncoderParams};
use absa::eval::MatrixConfig;
use absa::{Category, Dataset, Domain, Opinion, Polarity, Sentence, Span};
use proptest::prelude::*;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn golden_matrix() -> (RunConfig, MatrixConfig) {
    let run = RunConfig::load(&fixture("golden.cfg"), &[]).expect("golden.cfg loads");
    let matrix = run.matrix_config().expect("golden matrix config");
    (run, matrix)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------------------
// Naive Bayes oracle: expands count vectors back into token occurrences and
// counts them one by one.

pub struct NbOracle {
    pub log_prior: [f64; 3],
    pub log_lik: Vec<[f64; 3]>,
}

pub fn nb_oracle(examples: &[(Vec<(usize, u32)>, usize)], vocab_size: usize, alpha: f64) -> NbOracle {
    let mut docs = [0usize; 3];
    let mut occurrences: Vec<Vec<usize>> = vec![Vec::new(); 3];
    for (counts, label) in examples {
        docs[*label] += 1;
        for &(tok, n) in counts {
            for _ in 0..n {
                occurrences[*label].push(tok);
            }
        }
    }
    let total_docs = examples.len() as f64;
    let mut log_prior = [0.0; 3];
    let mut log_lik = vec![[0.0; 3]; vocab_size];
    for c in 0..3 {
        log_prior[c] = if docs[c] == 0 { f64::NEG_INFINITY } else { (docs[c] as f64 / total_docs).ln() };
        let class_total = occurrences[c].len() as f64;
        for (t, row) in log_lik.iter_mut().enumerate() {
            let hits = occurrences[c].iter().filter(|&&o| o == t).count() as f64;
            row[c] = ((hits + alpha) / (class_total + alpha * vocab_size as f64)).ln();
        }
    }
    NbOracle { log_prior, log_lik }
}

impl NbOracle {
    pub fn scores(&self, counts: &[(usize, u32)]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for c in 0..3 {
            let mut s = self.log_prior[c];
            for &(t, n) in counts {
                for _ in 0..n {
                    s += self.log_lik[t][c];
                }
            }
            out[c] = s;
        }
        out
    }
}

pub fn first_argmax(scores: &[f64; 3]) -> usize {
    let mut best = 0;
    for c in 1..3 {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Scalar attention and encoder forward, written against plain vectors.

pub type Rows = Vec<Vec<f64>>;

pub fn scalar_attention(q: &Rows, k: &Rows, v: &Rows) -> Rows {
    let d_k = q[0].len() as f64;
    let mut out = Vec::new();
    for qi in q {
        let mut scores = Vec::new();
        for kj in k {
            let mut dot = 0.0;
            for t in 0..qi.len() {
                dot += qi[t] * kj[t];
            }
            scores.push(dot / d_k.sqrt());
        }
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut row = vec![0.0; v[0].len()];
        for (j, e) in exps.iter().enumerate() {
            for c in 0..row.len() {
                row[c] += e / z * v[j][c];
            }
        }
        out.push(row);
    }
    out
}

fn mat_rows(m: &absa::encoder::Mat) -> Rows {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn matmul(a: &Rows, b: &Rows) -> Rows {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            let mut s = 0.0;
            for t in 0..b.len() {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn layer_norm_rows(x: &Rows, gain: &[f64], bias: &[f64]) -> Rows {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let sd = (var + 1e-5).sqrt();
            row.iter().enumerate().map(|(j, v)| (v - mean) / sd * gain[j] + bias[j]).collect()
        })
        .collect()
}

fn add_rows(a: &Rows, b: &Rows) -> Rows {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn scalar_encoder_logits(p: &EncoderParams, x: &EncoderInput) -> [f64; 3] {
    let d = p.token_emb.ncols();
    let mut h: Rows = Vec::new();
    for (i, (&t, &s)) in x.token_ids.iter().zip(&x.segment_ids).enumerate() {
        h.push((0..d).map(|j| p.token_emb[(t, j)] + p.pos_emb[(i, j)] + p.seg_emb[(s as usize, j)]).collect());
    }
    for l in &p.layers {
        let q = matmul(&h, &mat_rows(&l.w_q));
        let k = matmul(&h, &mat_rows(&l.w_k));
        let v = matmul(&h, &mat_rows(&l.w_v));
        let ctx = scalar_attention(&q, &k, &v);
        let r1 = add_rows(&h, &matmul(&ctx, &mat_rows(&l.w_o)));
        let h1 = layer_norm_rows(&r1, &mat_rows(&l.ln1_gain)[0], &mat_rows(&l.ln1_bias)[0]);
        let b1 = &mat_rows(&l.b1)[0];
        let pre = matmul(&h1, &mat_rows(&l.w1));
        let act: Rows = pre.iter().map(|r| r.iter().enumerate().map(|(j, v)| (v + b1[j]).max(0.0)).collect()).collect();
        let b2 = &mat_rows(&l.b2)[0];
        let ff: Rows = matmul(&act, &mat_rows(&l.w2))
            .iter()
            .map(|r| r.iter().enumerate().map(|(j, v)| v + b2[j]).collect())
            .collect();
        h = layer_norm_rows(&add_rows(&h1, &ff), &mat_rows(&l.ln2_gain)[0], &mat_rows(&l.ln2_bias)[0]);
    }
    let mut logits = [0.0; 3];
    for (c, z) in logits.iter_mut().enumerate() {
        *z = p.head_b[c];
        for j in 0..d {
            *z += h[0][j] * p.head_w[(j, c)];
        }
    }
    logits
}

/// 32 sequences `[CLS] cue` whose cue token (three per class) decides the label.
pub fn overfit_fixture() -> (EncoderConfig, Vec<(EncoderInput, Polarity)>) {
    let cfg = EncoderConfig { max_len: 6, ..EncoderConfig::new(12) }.with_dims(8, 2);
    let examples = (0..32)
        .map(|i| {
            let class = i % 3;
            let cue = 1 + 3 * class + (i / 3) % 3;
            (EncoderInput { token_ids: vec![0, cue], segment_ids: vec![0, 0] }, Polarity::ALL[class])
        })
        .collect();
    (cfg, examples)
}

// ---------------------------------------------------------------------------
// Dataset generators.

const WORDS: &[&str] = &[
    "the",
    "battery",
    "life",
    "is",
    "great",
    "screen",
    "naïve",
    "café",
    "R&D",
    "<b>",
    "\"quoted\"",
    "don't",
    "日本",
    "service",
    "!",
    "was",
    "slow",
    ",",
    "food",
    "price",
    "über",
    "a>b",
];

const CATEGORIES: &[&str] = &["LAPTOP#GENERAL", "BATTERY#OPERATION_PERFORMANCE", "FOOD#QUALITY", "SERVICE#GENERAL"];

#[derive(Clone, Debug)]
struct OpinionSpec {
    first_word: usize,
    n_words: usize,
    category: usize,
    polarity: usize,
    implicit: bool,
}

fn sentence_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<OpinionSpec>)> {
    let words = prop::collection::vec(0..WORDS.len(), 1..9);
    let opinion = (0usize..16, 1usize..3, 0..CATEGORIES.len(), 0usize..3, prop::bool::weighted(0.2)).prop_map(
        |(first_word, n_words, category, polarity, implicit)| OpinionSpec {
            first_word,
            n_words,
            category,
            polarity,
            implicit,
        },
    );
    (words, prop::collection::vec(opinion, 0..4))
}

fn build_sentence(id: String, words: &[usize], ops: &[OpinionSpec]) -> Sentence {
    let mut text = String::new();
    let mut starts = Vec::new();
    for (i, &w) in words.iter().enumerate() {
        if i > 0 {
            text.push(' ');
        }
        starts.push(text.chars().count());
        text.push_str(WORDS[w]);
    }
    let ends: Vec<usize> = words.iter().zip(&starts).map(|(&w, s)| s + WORDS[w].chars().count()).collect();
    let opinions = ops
        .iter()
        .map(|o| {
            let category: Category = CATEGORIES[o.category].parse().unwrap();
            let polarity = Polarity::ALL[o.polarity];
            if o.implicit {
                return Opinion::implicit(category, polarity);
            }
            let a = o.first_word % words.len();
            let b = (a + o.n_words - 1).min(words.len() - 1);
            let span = Span::new(starts[a], ends[b]);
            let target: String = text.chars().skip(span.start).take(span.len()).collect();
            Opinion::explicit(&target, span, category, polarity)
        })
        .collect();
    Sentence { id, text, opinions }
}

/// Valid datasets with unique ids, Unicode text, markup characters and
/// implicit opinions.
pub fn dataset_strategy(domain: Domain) -> impl Strategy<Value = Dataset> {
    prop::collection::vec(prop::collection::vec(sentence_strategy(), 1..4), 0..4).prop_map(move |reviews| Dataset {
        domain: domain.clone(),
        reviews: reviews
            .iter()
            .enumerate()
            .map(|(r, sents)| Review {
                id: format!("{r}"),
                sentences: sents
                    .iter()
                    .enumerate()
                    .map(|(s, (w, o))| build_sentence(format!("{r}:{s}"), w, o))
                    .collect(),
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Scripted HTTP stub for the chat client.

pub struct StubServer {
    pub url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<String>>>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Answers the `i`-th request with `script[i]`; requests past the end of
    /// the script get a 500.
    pub fn start(script: Vec<(u16, String)>) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind stub"));
        let port = server.server_addr().to_ip().expect("ip listener").port();
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let auth = Arc::new(Mutex::new(Vec::new()));
        let handle = {
            let (server, hits, bodies, auth) = (server.clone(), hits.clone(), bodies.clone(), auth.clone());
            std::thread::spawn(move || {
                for mut req in server.incoming_requests() {
                    let i = hits.fetch_add(1, Ordering::SeqCst);
                    let mut body = String::new();
                    let _ = req.as_reader().read_to_string(&mut body);
                    bodies.lock().unwrap().push(body);
                    let bearer = req.headers().iter().find(|h| h.field.equiv("Authorization"));
                    auth.lock().unwrap().push(bearer.map(|h| h.value.to_string()));
                    let (status, reply) = script.get(i).cloned().unwrap_or((500, "script exhausted".into()));
                    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                    let _ = req
                        .respond(tiny_http::Response::from_string(reply).with_status_code(status).with_header(header));
                }
            })
        };
        StubServer { url: format!("http://127.0.0.1:{port}"), hits, bodies, auth, server, handle: Some(handle) }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn bodies(&self) -> Vec<String> {
        self.bodies.lock().unwrap().clone()
    }

    pub fn auth_headers(&self) -> Vec<Option<String>> {
        self.auth.lock().unwrap().clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

pub fn completion(content: &str) -> String {
    serde_json::json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 5}
    })
    .to_string()
}
