use proptest::prelude::*;
use steerkit_core::tensor::{
    apply_steering, difference_of_means, max_positive_projection, normalize, pool_span, schedule_alpha,
    PromptEmbedding, ScheduleMode, SteeringVector, TensorContainer, ContainerDtype, TensorError, Token,
    TokenSpan,
};

fn embedding(rows: Vec<Vec<f64>>) -> PromptEmbedding {
    let words: Vec<String> = (0..rows.len()).map(|i| format!("t{i}")).collect();
    let mut tokens = Vec::new();
    let mut at = 0;
    for w in &words {
        tokens.push(Token::new(w.clone(), at, at + w.len()));
        at += w.len() + 1;
    }
    PromptEmbedding::new(words.join(" "), tokens, rows, "enc").unwrap()
}

fn matrix(max_rows: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0..10.0f64, dim), 1..=max_rows)
}

fn unit(dim: usize) -> impl Strategy<Value = SteeringVector> {
    prop::collection::vec(-5.0..5.0f64, dim)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        .prop_map(|s| {
            let n = s.iter().map(|x| x * x).sum::<f64>().sqrt();
            normalize(&s, n, "c", 1, "enc").unwrap()
        })
}

fn case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>, SteeringVector)> {
    (1usize..=16).prop_flat_map(|dim| {
        matrix(8, dim).prop_flat_map(move |rows| {
            let n = rows.len();
            (
                Just(rows),
                prop::collection::btree_set(0..n, 1..=n).prop_map(|s| s.into_iter().collect()),
                unit(dim),
            )
        })
    })
}

fn pools(k: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0..10.0f64, dim), k)
}

proptest! {
    #[test]
    fn pooling_is_mean_of_single_pools((rows, span, _v) in case()) {
        let emb = embedding(rows);
        let pooled = pool_span(&emb, &TokenSpan::new(span.clone()).unwrap()).unwrap();
        let singles: Vec<Vec<f64>> = span
            .iter()
            .map(|&i| pool_span(&emb, &TokenSpan::single(i)).unwrap())
            .collect();
        for j in 0..emb.dim() {
            let mean = singles.iter().map(|s| s[j]).sum::<f64>() / singles.len() as f64;
            prop_assert!((pooled[j] - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn dom_antisymmetric_and_matches_double_loop(
        (pos, neg) in (1usize..=10, 1usize..=16).prop_flat_map(|(k, d)| (pools(k, d), pools(k, d)))
    ) {
        let (s, raw) = difference_of_means(&pos, &neg).unwrap();
        let (t, raw_t) = difference_of_means(&neg, &pos).unwrap();
        prop_assert!(s.iter().zip(&t).all(|(a, b)| *a == -*b));
        prop_assert_eq!(raw, raw_t);
        let k = pos.len();
        let mut sq = 0.0;
        for j in 0..s.len() {
            let (mut p, mut q) = (0.0, 0.0);
            for i in 0..k {
                p += pos[i][j];
                q += neg[i][j];
            }
            let want = p / k as f64 - q / k as f64;
            sq += want * want;
            prop_assert!((s[j] - want).abs() <= 1e-12);
        }
        prop_assert!((raw - sq.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn steering_touches_only_span_rows((rows, span, v) in case(), alpha in -50.0..50.0f64) {
        let emb = embedding(rows);
        let out = apply_steering(&emb, &TokenSpan::new(span.clone()).unwrap(), &v, alpha).unwrap();
        for r in 0..emb.num_tokens() {
            if span.contains(&r) {
                for (j, x) in out.row(r).iter().enumerate() {
                    prop_assert!((x - (emb.row(r)[j] + alpha * v.direction()[j])).abs() <= 1e-12);
                }
            } else {
                prop_assert!(out.row(r).iter().zip(emb.row(r)).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }

    #[test]
    fn steering_additive_in_alpha((rows, span, v) in case(), a1 in -20.0..20.0f64, a2 in -20.0..20.0f64) {
        let emb = embedding(rows);
        let span = TokenSpan::new(span).unwrap();
        let twice = apply_steering(&apply_steering(&emb, &span, &v, a1).unwrap(), &span, &v, a2).unwrap();
        let once = apply_steering(&emb, &span, &v, a1 + a2).unwrap();
        for (x, y) in twice.rows().iter().flatten().zip(once.rows().iter().flatten()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn steering_zero_is_identity((rows, span, v) in case()) {
        let emb = embedding(rows);
        let out = apply_steering(&emb, &TokenSpan::new(span).unwrap(), &v, 0.0).unwrap();
        prop_assert_eq!(out, emb);
    }

    #[test]
    fn normalize_gives_unit_norm(s in prop::collection::vec(-1e3..1e3f64, 1..=16)) {
        let raw = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(raw > 1e-10);
        let v = normalize(&s, raw, "c", 1, "enc").unwrap();
        let n = v.direction().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn linear_ramp_nondecreasing(alpha in 0.001..100.0f64, total in 1usize..60) {
        let vals: Vec<f64> = (0..total)
            .map(|s| schedule_alpha(alpha, ScheduleMode::LinearRamp, s, total).unwrap())
            .collect();
        prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!((vals[total - 1] - alpha).abs() <= 1e-12);
    }

    #[test]
    fn container_round_trip_f64(rows in matrix(6, 5)) {
        let emb = embedding(rows);
        let c = TensorContainer::from_embedding(&emb, ContainerDtype::F64);
        let back = TensorContainer::from_json(&c.to_json_pretty()).unwrap().to_embedding(Some(emb.prompt_text())).unwrap();
        prop_assert_eq!(back, emb);
    }
}

#[test]
fn hand_examples() {
    let (s, raw) = difference_of_means(&[vec![2.0, 0.0]], &[vec![0.0, 2.0]]).unwrap();
    assert_eq!(s, vec![2.0, -2.0]);
    assert!((raw - 2.0 * 2f64.sqrt()).abs() < 1e-15);
    let (s, _) = difference_of_means(&[vec![1.0, 0.0], vec![3.0, 0.0]], &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
    assert_eq!(s, vec![2.0, 0.0]);
    let (s, raw) = difference_of_means(&[vec![1.0, 1.0]], &[vec![1.0, 1.0]]).unwrap();
    assert_eq!((s, raw), (vec![0.0, 0.0], 0.0));

    let v = normalize(&[3.0, 4.0], 5.0, "c", 1, "enc").unwrap();
    assert!((v.direction()[0] - 0.6).abs() < 1e-15 && (v.direction()[1] - 0.8).abs() < 1e-15);
    let u = normalize(&[0.0, 1.0], 1.0, "c", 1, "enc").unwrap();
    assert_eq!(u.direction(), &[0.0, 1.0]);
    assert!(matches!(
        normalize(&[0.0, 0.0], 0.0, "c", 1, "enc"),
        Err(TensorError::DegenerateDirection { .. })
    ));

    let e0 = normalize(&[1.0, 0.0], 1.0, "c", 1, "enc").unwrap();
    let emb = embedding(vec![vec![0.5, 0.5], vec![1.0, 1.0]]);
    let out = apply_steering(&emb, &TokenSpan::single(0), &e0, 1.0).unwrap();
    assert_eq!(out.row(0), &[1.5, 0.5]);
    assert_eq!(out.row(1), &[1.0, 1.0]);

    assert_eq!(schedule_alpha(3.0, ScheduleMode::Uniform, 7, 30).unwrap(), 3.0);
    assert_eq!(schedule_alpha(5.0, ScheduleMode::NegatedUniform, 0, 30).unwrap(), -5.0);
    assert_eq!(schedule_alpha(5.0, ScheduleMode::LinearRamp, 29, 30).unwrap(), 5.0);
    assert!(matches!(
        schedule_alpha(5.0, ScheduleMode::LinearRamp, 30, 30),
        Err(TensorError::StepOutOfRange { .. })
    ));

    assert_eq!(max_positive_projection(&[2.0, 0.0], &[vec![1.0, 0.0]]).unwrap(), 2.0);
    assert_eq!(max_positive_projection(&[1.0, 0.0], &[vec![1.0, 0.0], vec![3.0, 0.0]]).unwrap(), 3.0);
    assert_eq!(max_positive_projection(&[1.0, 0.0], &[vec![-1.0, 0.0], vec![-3.0, 0.0]]).unwrap(), -1.0);
    assert!(matches!(max_positive_projection(&[1.0], &[]), Err(TensorError::EmptyPools)));
}

#[test]
fn encoder_mismatch_rejected() {
    let emb = embedding(vec![vec![0.0, 1.0]]);
    let v = SteeringVector::from_parts(vec![1.0, 0.0], 1.0, "c", 1, "other", None).unwrap();
    assert!(matches!(
        apply_steering(&emb, &TokenSpan::single(0), &v, 1.0),
        Err(TensorError::EncoderMismatch { .. })
    ));
    let ok = SteeringVector::from_parts(vec![1.0, 0.0], 1.0, "c", 1, "enc", None).unwrap();
    assert!(apply_steering(&emb, &TokenSpan::single(3), &ok, 1.0).is_err());
}
