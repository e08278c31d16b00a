use proptest::prelude::*;
use steerkit_core::backend::{
    Backend, BackendError, GenerateRequest, SyntheticBackend, SyntheticConfig,
};
use steerkit_core::dataset::{
    build_steering_vector, locate_style_span, parse_jsonl, pool_dataset, ContrastiveDataset, ContrastivePair,
    DatasetError,
};
use steerkit_core::select::{
    resolve_selection, select_tokens_rules, ConceptEntry, ConceptLexicon, EditType, PromptClass, SelectError,
};
use steerkit_core::tensor::{
    apply_steering, difference_of_means, PromptEmbedding, SteeringVector, TensorError, Token, TokenSpan,
};

fn backend() -> SyntheticBackend {
    SyntheticBackend::new(SyntheticConfig {
        positive_words: vec!["bright".into()],
        negative_words: vec!["dark".into()],
        ..SyntheticConfig::default()
    })
    .unwrap()
}

const ROOMS: [&str; 6] = ["living room", "kitchen", "hallway", "bedroom", "office", "studio"];

fn pairs(n: usize) -> Vec<ContrastivePair> {
    ROOMS[..n]
        .iter()
        .map(|r| {
            ContrastivePair::new(
                "bright",
                "dark",
                format!("A bright {r} with large windows."),
                format!("A dark {r} with large windows."),
            )
        })
        .collect()
}

#[test]
fn vector_matches_independent_composition() {
    let b = backend();
    let ds = ContrastiveDataset::new("bright vs dark", pairs(4)).unwrap();
    let v = build_steering_vector(&ds, &b).unwrap();
    let dim = b.world().concept_axis().len();
    let mut pos_mean = vec![0.0; dim];
    let mut neg_mean = vec![0.0; dim];
    for p in ds.pairs() {
        for (sentence, style, acc) in [(&p.pos, &p.pos_style, &mut pos_mean), (&p.neg, &p.neg_style, &mut neg_mean)] {
            let emb = b.encode(sentence).unwrap();
            let i = emb.tokens().iter().position(|t| t.text.eq_ignore_ascii_case(style)).unwrap();
            for (a, x) in acc.iter_mut().zip(emb.row(i)) {
                *a += x / 4.0;
            }
        }
    }
    let s: Vec<f64> = pos_mean.iter().zip(&neg_mean).map(|(p, n)| p - n).collect();
    let raw = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((v.raw_norm() - raw).abs() < 1e-12);
    for (d, x) in v.direction().iter().zip(&s) {
        assert!((d - x / raw).abs() < 1e-12);
    }
    assert_eq!(v.pair_count(), 4);
    assert_eq!(v.encoder_id(), b.capabilities().encoder_id);
    let feats = pool_dataset(&ds, &b).unwrap();
    let proj = feats.pos.iter().map(|p| p.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>()).fold(f64::MIN, f64::max);
    assert!((v.projection_max().unwrap() - proj).abs() < 1e-12);
}

#[test]
fn vector_tracks_concept_axis() {
    let b = backend();
    let v = build_steering_vector(&ContrastiveDataset::new("bright vs dark", pairs(6)).unwrap(), &b).unwrap();
    let cos: f64 = v.direction().iter().zip(b.world().concept_axis()).map(|(a, b)| a * b).sum();
    assert!(cos > 0.5, "cosine with the axis {cos}");
}

#[test]
fn identical_sentences_are_degenerate() {
    let b = backend();
    let same = ContrastivePair {
        pos_style: "room".into(),
        neg_style: "room".into(),
        pos: "A bright room.".into(),
        neg: "A bright room.".into(),
    };
    assert!(matches!(same.validate(1), Err(DatasetError::IdenticalSentences { line: 1 })));
    let (s, raw) = difference_of_means(
        &[b.encode(&same.pos).unwrap().row(2).to_vec()],
        &[b.encode(&same.neg).unwrap().row(2).to_vec()],
    )
    .unwrap();
    assert!(s.iter().all(|x| *x == 0.0) && raw == 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn vector_order_invariant(perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle()) {
        let b = backend();
        let base = pairs(6);
        let shuffled: Vec<ContrastivePair> = perm.iter().map(|&i| base[i].clone()).collect();
        let v1 = build_steering_vector(&ContrastiveDataset::new("c", base).unwrap(), &b).unwrap();
        let v2 = build_steering_vector(&ContrastiveDataset::new("c", shuffled).unwrap(), &b).unwrap();
        for (x, y) in v1.direction().iter().zip(v2.direction()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn round_trip_and_invariants(n in 1usize..=6) {
        let ds = ContrastiveDataset::new("bright vs dark", pairs(n)).unwrap();
        let text = ds.to_jsonl();
        let back = parse_jsonl(&text).unwrap();
        prop_assert_eq!(&back, &ds.pairs().to_vec());
        for (i, p) in back.iter().enumerate() {
            prop_assert!(p.validate(i + 1).is_ok());
        }
    }
}

#[test]
fn duplicating_pairs_keeps_direction() {
    let b = backend();
    let base = pairs(3);
    let doubled: Vec<ContrastivePair> = base.iter().chain(&base).cloned().collect();
    let v1 = build_steering_vector(&ContrastiveDataset::new("c", base).unwrap(), &b).unwrap();
    let v2 = build_steering_vector(&ContrastiveDataset::new("c", doubled).unwrap(), &b).unwrap();
    assert_eq!(v2.pair_count(), 6);
    for (x, y) in v1.direction().iter().zip(v2.direction()) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn jsonl_errors() {
    assert!(matches!(parse_jsonl(""), Err(DatasetError::EmptyDataset)));
    let bad = r#"{"pos_style": "smiling", "neg_style": "neutral", "pos": "A calm face.", "neg": "A neutral face."}"#;
    assert!(matches!(
        parse_jsonl(bad),
        Err(DatasetError::StyleNotInSentence { line: 1, .. })
    ));
    let missing = r#"{"pos_style": "a", "neg_style": "b", "pos": "a x"}"#;
    assert!(parse_jsonl(missing).is_err());
    assert!(matches!(parse_jsonl("{not json"), Err(DatasetError::MalformedLine { line: 1, .. })));
    let mixed = format!(
        "{}\n{}\n",
        r#"{"pos_style": "bright", "neg_style": "dark", "pos": "A bright room.", "neg": "A dark room."}"#,
        r#"{"pos_style": "light", "neg_style": "dark", "pos": "A light room.", "neg": "A dark room."}"#
    );
    assert!(matches!(
        parse_jsonl(&mixed),
        Err(DatasetError::InconsistentIdentifiers { .. })
    ));
}

fn subword_embedding() -> PromptEmbedding {
    // "a smiling man" tokenized as a | smil | ing | man
    let tokens = vec![
        Token::new("a", 0, 1),
        Token::new("smil", 2, 6),
        Token::new("ing", 6, 9),
        Token::new("man", 10, 13),
    ];
    let rows = (0..4).map(|i| vec![i as f64, 1.0]).collect();
    PromptEmbedding::new("a smiling man", tokens, rows, "enc").unwrap()
}

#[test]
fn style_span_covers_subwords() {
    let emb = subword_embedding();
    let span = locate_style_span(&emb, "Smiling").unwrap();
    assert_eq!(span.indices().collect::<Vec<_>>(), vec![1, 2]);
    assert!(matches!(locate_style_span(&emb, "gloomy"), Err(DatasetError::StyleNotFound { .. })));
    let both = resolve_selection(&["smiling".into(), "man".into()], &emb).unwrap();
    assert_eq!(both.indices().collect::<Vec<_>>(), vec![1, 2, 3]);
    let whole = resolve_selection(&["a smiling man".into()], &emb).unwrap();
    assert_eq!(whole.len(), 4);
    assert!(matches!(
        resolve_selection(&["dog".into()], &emb),
        Err(SelectError::Unresolvable { .. })
    ));
}

#[test]
fn selection_spans_on_synthetic_encoder() {
    let b = backend();
    let emb = b.encode("a woman in a park").unwrap();
    let span = resolve_selection(&["woman".into(), "park".into()], &emb).unwrap();
    let words: Vec<&str> = span.indices().map(|i| emb.tokens()[i].text.as_str()).collect();
    assert_eq!(words, vec!["woman", "park"]);
}

fn lexicon() -> ConceptLexicon {
    let mut lx = ConceptLexicon::default();
    lx.insert(
        "smile",
        ConceptEntry {
            poles: vec!["sad".into(), "happy".into(), "smiling".into()],
            edit_type: EditType::Local,
            attributes: vec![],
        },
    );
    lx
}

#[test]
fn rule_engine_cases() {
    let lx = lexicon();
    let s = select_tokens_rules("a sad man", "smile", EditType::Local, &lx).unwrap();
    assert_eq!((s.words, s.class), (vec!["sad".to_string()], Some(PromptClass::Explicit)));
    let s = select_tokens_rules("a man", "smile", EditType::Local, &lx).unwrap();
    assert_eq!((s.words, s.class), (vec!["man".to_string()], Some(PromptClass::Implicit)));
    assert!(matches!(
        select_tokens_rules("the of a", "smile", EditType::Local, &lx),
        Err(SelectError::NoSelectableToken(_))
    ));
    assert!(matches!(
        select_tokens_rules("   ", "smile", EditType::Local, &lx),
        Err(SelectError::EmptyPrompt)
    ));
}

proptest! {
    #[test]
    fn rule_engine_deterministic_and_classified(
        words in prop::collection::vec(prop::sample::select(vec!["a", "sad", "happy", "man", "dog", "in", "park", "tall", "the"]), 1..8),
        edit in prop::sample::select(EditType::ALL.to_vec()),
    ) {
        let lx = lexicon();
        let prompt = words.join(" ");
        let first = select_tokens_rules(&prompt, "smile", edit, &lx);
        let second = select_tokens_rules(&prompt, "smile", edit, &lx);
        prop_assert_eq!(format!("{first:?}"), format!("{second:?}"));
        if let Ok(sel) = first {
            let poles = ["sad", "happy", "smiling"];
            let n_poles = sel.words.iter().filter(|w| poles.contains(&w.as_str())).count();
            match sel.class {
                Some(PromptClass::Explicit) => prop_assert!(n_poles >= 1),
                _ => prop_assert_eq!(n_poles, 0),
            }
            for w in &sel.words {
                prop_assert!(words.contains(&w.as_str()));
            }
        }
    }
}

#[test]
fn synthetic_backend_closed_form() {
    let b = SyntheticBackend::new(SyntheticConfig {
        saturation_tau: 20.0,
        max_distance: 0.5,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let emb = b.encode("a photo of a dog").unwrap();
    let v = SteeringVector::from_parts(b.world().concept_axis().to_vec(), 1.0, "c", 1, emb.encoder_id(), None).unwrap();
    let span = TokenSpan::single(4);
    let render = |a: f64| {
        let e = apply_steering(&emb, &span, &v, a).unwrap();
        b.generate(&GenerateRequest::new(e, 3).with_alpha(a)).unwrap()
    };
    let (g0, g20, g5) = (render(0.0), render(20.0), render(5.0));
    let want = 0.5 * (1.0 - (-1.0f64).exp());
    assert!((b.distance(&g0, &g20).unwrap() - want).abs() < 1e-9);
    assert!((want - 0.3161).abs() < 1e-4);
    assert_eq!(b.distance(&g5, &g5).unwrap(), 0.0);
    assert_eq!(b.distance(&g0, &g5).unwrap(), b.distance(&g5, &g0).unwrap());
    let tri = b.distance(&g0, &g5).unwrap() + b.distance(&g5, &g20).unwrap();
    assert!(b.distance(&g0, &g20).unwrap() <= tri + 1e-12);

    // Unsteered and zero-steered renders coincide.
    let plain = b.generate(&GenerateRequest::new(emb.clone(), 3)).unwrap();
    assert_eq!(plain.id, g0.id);
    assert_eq!(render(5.0).id, g5.id);
    assert!(matches!(b.encode(""), Err(BackendError::EmptyPrompt)));
    assert_eq!(b.encode("a dog").unwrap(), b.encode("a dog").unwrap());
}

#[test]
fn batch_limits() {
    let b = SyntheticBackend::new(SyntheticConfig {
        max_batch: 3,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let emb = b.encode("a cat").unwrap();
    let reqs: Vec<GenerateRequest> = (0..4).map(|s| GenerateRequest::new(emb.clone(), s)).collect();
    let seq: Vec<String> = reqs[..3].iter().map(|r| b.generate(r).unwrap().id).collect();
    let batch: Vec<String> = b.generate_batch(&reqs[..3]).unwrap().into_iter().map(|r| r.id).collect();
    assert_eq!(seq, batch);
    assert_eq!(b.generate_batch(&reqs[..1]).unwrap()[0].id, seq[0]);
    assert!(matches!(b.generate_batch(&reqs), Err(BackendError::BatchTooLarge { len: 4, max: 3 })));
    let _ = TensorError::EmptySpan;
}
