mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use absa::corpus::Review;
use absa::eval::*;
use absa::extract::LexiconExtractor;
use absa::{Dataset, Domain, Opinion, Polarity, Sentence, Span};
use common::*;

use Polarity::{Negative as N, Neutral as U, Positive as P};

fn labelled(labels: &[Polarity]) -> Dataset {
    let mut ds = Dataset::new(Domain::Laptop);
    ds.reviews.push(Review {
        id: "r".into(),
        sentences: labels
            .iter()
            .enumerate()
            .map(|(i, &p)| Sentence {
                id: format!("s{i}"),
                text: "fine".into(),
                opinions: vec![Opinion::implicit("LAPTOP#GENERAL".parse().unwrap(), p)],
            })
            .collect(),
    });
    ds
}

fn preds(labels: &[Polarity]) -> Vec<(OpinionKey, Polarity)> {
    labels.iter().enumerate().map(|(i, &p)| (OpinionKey::new(format!("s{i}"), 0), p)).collect()
}

/// Per-class precision/recall/F1 counted pair by pair, averaged over the
/// classes present in gold or predictions.
fn macro_f1_oracle(gold: &[Polarity], pred: &[Polarity]) -> f64 {
    let mut f1s = Vec::new();
    for c in Polarity::ALL {
        let tp = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p == c).count() as f64;
        let n_pred = pred.iter().filter(|p| **p == c).count() as f64;
        let n_gold = gold.iter().filter(|g| **g == c).count() as f64;
        if n_pred == 0.0 && n_gold == 0.0 {
            continue;
        }
        let p = if n_pred > 0.0 { tp / n_pred } else { 0.0 };
        let r = if n_gold > 0.0 { tp / n_gold } else { 0.0 };
        f1s.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
    }
    f1s.iter().sum::<f64>() / f1s.len() as f64
}

#[test]
fn accuracy_examples() {
    let gold = labelled(&[P, N, U]);
    assert_eq!(polarity_accuracy(&preds(&[P, N, U]), &gold).unwrap(), 1.0);
    let two_of_three = polarity_accuracy(&preds(&[P, N, P]), &gold).unwrap();
    assert_eq!(format!("{two_of_three:.4}"), "0.6667");
    assert_eq!(polarity_accuracy(&[], &gold).unwrap(), 0.0);
    assert!(polarity_accuracy(&[(OpinionKey::new("zz", 0), P)], &gold).is_err());
}

#[test]
fn macro_f1_confusion_fixture() {
    let gold = [P, P, N, N, U, U];
    let pred = [P, P, P, U, U, U];
    let oracle = macro_f1_oracle(&gold, &pred);
    let got = macro_f1(&preds(&pred), &labelled(&gold)).unwrap();
    assert!((got - oracle).abs() < 1e-12);
    assert_eq!(format!("{got:.4}"), "0.5333");
}

#[test]
fn macro_f1_edge_cases() {
    let gold = labelled(&[P, N, P]);
    assert_eq!(macro_f1(&preds(&[P, N, P]), &gold).unwrap(), 1.0);
    assert_eq!(macro_f1(&preds(&[N, P, N]), &gold).unwrap(), 0.0);
}

#[test]
fn aspect_prf_examples() {
    let gold = {
        let mut ds = Dataset::new(Domain::Laptop);
        let cat = "LAPTOP#GENERAL".parse().unwrap();
        ds.reviews.push(Review {
            id: "r".into(),
            sentences: vec![Sentence {
                id: "a".into(),
                text: "screen and keyboard".into(),
                opinions: vec![
                    Opinion::explicit("screen", Span::new(0, 6), Clone::clone(&cat), P),
                    Opinion::explicit("keyboard", Span::new(11, 19), cat, N),
                ],
            }],
        });
        ds
    };
    let exact = |p: Vec<Span>| aspect_prf(&BTreeMap::from([("a".to_string(), p)]), &gold, SpanMatch::Exact);
    let same = exact(vec![Span::new(0, 6), Span::new(11, 19)]);
    assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
    let none = aspect_prf(&BTreeMap::new(), &gold, SpanMatch::Exact);
    assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    let half = exact(vec![Span::new(0, 6), Span::new(7, 10)]);
    assert_eq!((half.precision, half.recall, half.f1), (0.5, 0.5, 0.5));
    let loose = aspect_prf(&BTreeMap::from([("a".to_string(), vec![Span::new(0, 3)])]), &gold, SpanMatch::Overlap);
    assert_eq!(loose.precision, 1.0);
}

#[test]
fn greedy_matching_is_left_to_right() {
    let gold = [Span::new(0, 10)];
    let preds = [Span::new(5, 12), Span::new(2, 4)];
    assert_eq!(match_spans(&preds, &gold, SpanMatch::Overlap), vec![None, Some(0)]);
}

#[test]
fn baselines_match_published_accuracies() {
    let expect = [
        ("laptop", 72.21),
        ("restaurant", 80.95),
        ("laptop", 82.3),
        ("restaurant", 81.5),
        ("laptop", 92.1),
        ("restaurant", 88.9),
        ("laptop", 90.4),
        ("restaurant", 91.4),
        ("laptop", 91.1),
        ("restaurant", 90.6),
    ];
    assert_eq!(BASELINES.len(), 10);
    for (b, (d, acc)) in BASELINES.iter().zip(expect) {
        assert_eq!((b.domain, b.accuracy), (d, acc));
    }
    assert!(BASELINES[0].label.contains("Deep Memory Network"));
    let r = EvalReport::new(0, "x".into(), vec![]);
    let json = emit_report(&r, ReportFormat::Json);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 0);
    assert_eq!(v["baselines"].as_array().unwrap().len(), 10);
    assert_eq!(v["baselines"][0]["accuracy"], "72.21");
}

#[test]
fn golden_report_is_reproduced_byte_for_byte() {
    let (_, cfg) = golden_matrix();
    let report = run_matrix(&cfg).unwrap();
    for format in ReportFormat::ALL {
        let name = format!("golden/report.{}", format.extension());
        assert_eq!(emit_report(&report, format), read_fixture(&name), "{name}");
    }
    assert_eq!(run_matrix(&cfg).unwrap(), report);
    for b in &report.baselines {
        assert!(BASELINES.contains(b));
    }
    for run in &report.runs {
        for m in [run.accuracy, run.macro_f1, run.aspect_precision, run.aspect_recall, run.aspect_f1] {
            assert!((0.0..=1.0).contains(&m));
        }
    }
}

#[test]
fn golden_probe_and_zero_fraction_identity() {
    let (run, cfg) = golden_matrix();
    let probe = mask_probe(&cfg, &run.probe_fractions).unwrap();
    for format in ReportFormat::ALL {
        let name = format!("golden/probe.{}", format.extension());
        assert_eq!(emit_probe(&probe, format), read_fixture(&name), "{name}");
    }
    let plain = run_matrix(&cfg).unwrap();
    let zero: Vec<_> = probe.results.iter().filter(|r| r.fraction == 0.0).map(|r| r.run.clone()).collect();
    assert_eq!(zero, plain.runs);
    let reversed = mask_probe(&cfg, &[0.5, 0.0]).unwrap();
    assert_eq!(reversed, probe);
}

#[test]
fn self_evaluation_is_perfect() {
    let gold = labelled(&[P, N, U, P]);
    let all: Vec<_> = preds(&[P, N, U, P]);
    assert_eq!(polarity_accuracy(&all, &gold).unwrap(), 1.0);
    assert_eq!(macro_f1(&all, &gold).unwrap(), 1.0);
}

fn cross_domain_f1(cfg: &MatrixConfig) -> Vec<f64> {
    run_matrix(cfg).unwrap().runs.iter().filter(|r| r.train_domain != r.test_domain).map(|r| r.aspect_f1).collect()
}

#[test]
fn category_map_raises_cross_domain_aspect_f1() {
    let (_, base) = golden_matrix();
    let cfg = MatrixConfig { extractor: Arc::new(LexiconExtractor::default()), modes: vec![EvalMode::Joint], ..base };
    let with_map = cross_domain_f1(&cfg);
    let identity = cross_domain_f1(&MatrixConfig { knowledge: cfg.knowledge.without_category_map(), ..cfg.clone() });
    assert_eq!(with_map.len(), 2);
    for (a, b) in with_map.iter().zip(&identity) {
        assert!(a > b, "{with_map:?} vs {identity:?}");
    }
}

#[test]
fn single_domain_gives_one_cell_per_mode() {
    let (_, base) = golden_matrix();
    let cfg = MatrixConfig { corpora: vec![base.corpora[0].clone()], ..base };
    let r = run_matrix(&cfg).unwrap();
    assert_eq!(r.runs.len(), 2);
    assert!(r.runs.iter().all(|x| x.train_domain == x.test_domain));
}

#[test]
fn digest_ignores_file_locations() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["golden.cfg", "mini_laptop.xml", "mini_restaurant.xml", "knowledge.tsv", "mock_predictions.json"] {
        std::fs::copy(fixture(f), dir.path().join(f)).unwrap();
    }
    let moved = absa::config::RunConfig::load(&dir.path().join("golden.cfg"), &[]).unwrap().matrix_config().unwrap();
    let (_, here) = golden_matrix();
    assert_eq!(moved.digest(), here.digest());
    let reseeded = MatrixConfig { seed: 1, ..here.clone() };
    assert_ne!(reseeded.digest(), here.digest());
}

#[test]
fn invalid_matrix_configs() {
    let (_, base) = golden_matrix();
    assert!(run_matrix(&MatrixConfig { corpora: vec![], ..base.clone() }).is_err());
    assert!(run_matrix(&MatrixConfig { modes: vec![], ..base.clone() }).is_err());
    let twice = vec![base.corpora[0].clone(), base.corpora[0].clone()];
    assert!(run_matrix(&MatrixConfig { corpora: twice, ..base.clone() }).is_err());
    assert!(mask_probe(&base, &[1.5]).is_err());
}
