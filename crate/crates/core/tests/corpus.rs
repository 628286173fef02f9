mod common;

use absa::corpus::{
    augment, mask_tokens, parse_semeval, serialize_semeval, slice_chars, split, tokenize, MASK_LITERAL,
};
use absa::{Dataset, Domain, KnowledgeSource, Opinion, Sentence, Span};
use common::*;
use proptest::prelude::*;

fn assert_spans_slice_targets(ds: &Dataset) {
    for s in ds.sentences() {
        for o in &s.opinions {
            if let (Some(span), Some(t)) = (o.span, &o.target) {
                assert_eq!(slice_chars(&s.text, span), t, "sentence {}", s.id);
            }
        }
    }
}

#[test]
fn minimal_fixture_parses() {
    let ds = parse_semeval(&read_fixture("minimal.xml"), Domain::Laptop).unwrap();
    assert_eq!(ds.reviews.len(), 1);
    assert_eq!(ds.sentence_count(), 1);
    let s = ds.sentences().next().unwrap();
    assert_eq!(s.opinions.len(), 1);
    let op = &s.opinions[0];
    assert_eq!(op.span, Some(Span::new(4, 16)));
    assert_eq!(slice_chars(&s.text, op.span.unwrap()), "battery life");
}

#[test]
fn minimal_fixture_serializes_to_committed_canonical_form() {
    let ds = parse_semeval(&read_fixture("minimal.xml"), Domain::Laptop).unwrap();
    let out = serialize_semeval(&ds);
    if std::env::var_os("ABSA_BLESS").is_some() {
        std::fs::write(fixture("minimal.canonical.xml"), &out).unwrap();
    }
    assert_eq!(out, read_fixture("minimal.canonical.xml"));
}

#[test]
fn empty_document() {
    let ds = parse_semeval("<Reviews/>", Domain::Restaurant).unwrap();
    assert!(ds.reviews.is_empty());
    let out = serialize_semeval(&ds);
    assert!(out.trim_end().ends_with("<Reviews/>"));
    assert_eq!(parse_semeval(&out, Domain::Restaurant).unwrap(), ds);
}

fn one_opinion(attrs: &str) -> String {
    format!(
        "<Reviews><Review rid=\"1\"><sentences><sentence id=\"1:0\"><text>The battery life rocks</text>\
         <Opinions><Opinion {attrs}/></Opinions></sentence></sentences></Review></Reviews>"
    )
}

#[test]
fn parse_errors_name_the_sentence() {
    let cases = [
        (r#"target="battery life" category="LAPTOP#GENERAL" polarity="positive" from="4" to="3""#, "invalid span"),
        (r#"target="battery" category="LAPTOP#GENERAL" polarity="positive" from="4" to="16""#, "slices"),
        (r#"target="battery life" category="LAPTOP#GENERAL" polarity="great" from="4" to="16""#, "polarity"),
        (r#"target="battery life" category="laptop" polarity="positive" from="4" to="16""#, "category"),
    ];
    for (attrs, needle) in cases {
        let err = parse_semeval(&one_opinion(attrs), Domain::Laptop).unwrap_err().to_string();
        assert!(err.contains("1:0") && err.contains(needle), "{err}");
    }
    assert!(parse_semeval("<Reviews><Review>", Domain::Laptop).is_err());
    assert!(parse_semeval("<Other/>", Domain::Laptop).is_err());
    let dup = "<Reviews><Review rid=\"1\"><sentences><sentence id=\"a\"><text>x</text></sentence>\
               <sentence id=\"a\"><text>y</text></sentence></sentences></Review></Reviews>";
    assert!(parse_semeval(dup, Domain::Laptop).unwrap_err().to_string().contains("duplicate"));
}

#[test]
fn null_target_has_no_span() {
    let xml = one_opinion(r#"target="NULL" category="LAPTOP#GENERAL" polarity="neutral" from="0" to="0""#);
    let ds = parse_semeval(&xml, Domain::Laptop).unwrap();
    let op = &ds.sentences().next().unwrap().opinions[0];
    assert_eq!(op.span, None);
    let again = parse_semeval(&serialize_semeval(&ds), Domain::Laptop).unwrap();
    assert_eq!(again, ds);
}

#[test]
fn committed_fixtures_round_trip() {
    for (name, domain) in [
        ("mini_laptop.xml", Domain::Laptop),
        ("mini_restaurant.xml", Domain::Restaurant),
        ("minimal.xml", Domain::Laptop),
    ] {
        let first = parse_semeval(&read_fixture(name), domain.clone()).unwrap();
        let text = serialize_semeval(&first);
        let second = parse_semeval(&text, domain).unwrap();
        assert_eq!(first, second, "{name}");
        assert_eq!(serialize_semeval(&second), text, "{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn generated_datasets_round_trip(ds in dataset_strategy(Domain::Laptop)) {
        prop_assert!(ds.validate().is_ok());
        let first = parse_semeval(&serialize_semeval(&ds), Domain::Laptop).unwrap();
        let text = serialize_semeval(&first);
        let second = parse_semeval(&text, Domain::Laptop).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(serialize_semeval(&second), text);
    }

    #[test]
    fn tokens_cover_non_whitespace(text in "[a-zA-Zé日 ,.!?'\\[\\]MASK-]{0,40}") {
        let toks = tokenize(&text);
        let chars: Vec<char> = text.chars().collect();
        let mut covered = vec![false; chars.len()];
        let mut last_end = 0;
        for t in &toks {
            prop_assert!(t.span.start >= last_end && t.span.start < t.span.end);
            last_end = t.span.end;
            let surface: String = chars[t.span.start..t.span.end].iter().collect();
            prop_assert_eq!(surface.to_lowercase(), t.text.clone());
            for c in &mut covered[t.span.start..t.span.end] {
                *c = true;
            }
        }
        for (c, hit) in chars.iter().zip(covered) {
            prop_assert_eq!(hit, !c.is_whitespace());
        }
    }

    #[test]
    fn masking_keeps_spans_and_is_reproducible(
        ds in dataset_strategy(Domain::Laptop), fraction in 0.0f64..=1.0, seed in any::<u64>(), flag in any::<bool>()
    ) {
        let a = mask_tokens(&ds, fraction, seed, flag).unwrap();
        let b = mask_tokens(&ds, fraction, seed, flag).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.validate().is_ok());
        if !flag {
            for (s, m) in ds.sentences().zip(a.sentences()) {
                for (o, p) in s.opinions.iter().zip(&m.opinions) {
                    prop_assert_eq!(&o.target, &p.target);
                }
            }
        }
        prop_assert_eq!(mask_tokens(&ds, 0.0, seed, flag).unwrap(), ds);
    }

    #[test]
    fn augmentation_keeps_spans(ds in dataset_strategy(Domain::Laptop), seed in any::<u64>(), ops in 0usize..4) {
        let ks = KnowledgeSource::parse(&read_fixture("knowledge.tsv")).unwrap();
        let out = augment(&ds, seed, ops, &ks);
        prop_assert!(out.validate().is_ok());
        prop_assert_eq!(&out.reviews[..ds.reviews.len()], &ds.reviews[..]);
        prop_assert_eq!(&out, &augment(&ds, seed, ops, &ks));
        if ops == 0 {
            prop_assert_eq!(&out, &ds);
        }
        assert_spans_slice_targets(&out);
    }
}

#[test]
fn tokenizer_examples() {
    let pairs = |t: &str| tokenize(t).into_iter().map(|t| (t.text, t.span.start, t.span.end)).collect::<Vec<_>>();
    assert_eq!(pairs("Great screen!"), vec![("great".into(), 0, 5), ("screen".into(), 6, 12), ("!".into(), 12, 13)]);
    assert!(pairs("").is_empty());
    assert_eq!(pairs("  a  "), vec![("a".into(), 2, 3)]);
    assert_eq!(pairs("a [MASK] b").len(), 3);
}

fn great_screen() -> Dataset {
    let text = "great screen";
    let op =
        Opinion::explicit("screen", Span::new(6, 12), "DISPLAY#QUALITY".parse().unwrap(), absa::Polarity::Positive);
    let mut ds = Dataset::new(Domain::Laptop);
    ds.reviews.push(absa::corpus::Review {
        id: "1".into(),
        sentences: vec![Sentence { id: "1:0".into(), text: text.into(), opinions: vec![op] }],
    });
    ds
}

#[test]
fn full_masking_spares_the_aspect() {
    let out = mask_tokens(&great_screen(), 1.0, 0, false).unwrap();
    let s = out.sentences().next().unwrap();
    assert_eq!(s.text, format!("{MASK_LITERAL} screen"));
    assert_eq!(slice_chars(&s.text, s.opinions[0].span.unwrap()), "screen");
    assert!(mask_tokens(&great_screen(), 1.5, 0, false).is_err());
}

#[test]
fn substitution_uses_a_same_category_peer() {
    let ks =
        KnowledgeSource::parse("[lexicon]\nbattery life\tlaptop\tBATTERY#GENERAL\nscreen\tlaptop\tBATTERY#GENERAL\n")
            .unwrap();
    let text = "the battery life is long";
    let op = Opinion::explicit(
        "battery life",
        Span::new(4, 16),
        "BATTERY#GENERAL".parse().unwrap(),
        absa::Polarity::Positive,
    );
    let mut ds = Dataset::new(Domain::Laptop);
    ds.reviews.push(absa::corpus::Review {
        id: "1".into(),
        sentences: vec![Sentence { id: "1:0".into(), text: text.into(), opinions: vec![op] }],
    });
    let out = augment(&ds, 0, 3, &ks);
    assert_eq!(out.reviews.len(), 4);
    let substituted: Vec<_> =
        out.sentences().filter(|s| s.opinions.iter().any(|o| o.target.as_deref() == Some("screen"))).collect();
    assert_eq!(substituted.len(), 1);
    let s = substituted[0];
    assert_eq!(slice_chars(&s.text, s.opinions[0].span.unwrap()), "screen");
}

#[test]
fn split_by_review() {
    let mut ds = Dataset::new(Domain::Laptop);
    for r in 0..10 {
        ds.reviews.push(absa::corpus::Review {
            id: r.to_string(),
            sentences: vec![Sentence { id: format!("{r}:0"), text: "ok".into(), opinions: vec![] }],
        });
    }
    let (train, test) = split(&ds, 0.8, 4).unwrap();
    assert_eq!((train.reviews.len(), test.reviews.len()), (8, 2));
    let mut ids: Vec<_> = train.reviews.iter().chain(&test.reviews).map(|r| r.id.clone()).collect();
    ids.sort_by_key(|i| i.parse::<u32>().unwrap());
    assert_eq!(ids, (0..10).map(|i| i.to_string()).collect::<Vec<_>>());
    assert_eq!(split(&ds, 0.8, 4).unwrap(), (train, test));
    ds.reviews.truncate(1);
    assert!(split(&ds, 0.5, 0).is_err());
}
