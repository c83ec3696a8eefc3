use acclick::eval::{dwell_analysis, DwellAccumulator, DwellConfig, EvalAccumulator};
use acclick::eventlog::{EventLogReader, EventLogWriter};
use acclick::model::{cross_entropy, logloss, sigmoid, Hyper, LatentFactorModel, ParamId};
use acclick::schema::{FeatureField, FeatureSchema, FeatureValue, Side, ValueId};
use acclick::{Event, Scorer};
use proptest::prelude::*;

fn schema() -> FeatureSchema {
    FeatureSchema::new(vec![
        FeatureField::single("involvement", Side::User),
        FeatureField::multi("tech", Side::User),
        FeatureField::single("ad_id", Side::Ad),
        FeatureField::multi("keywords", Side::Ad),
    ])
    .unwrap()
}

fn value() -> impl Strategy<Value = ValueId> {
    prop_oneof![
        (-5i64..40).prop_map(ValueId::Int),
        "[a-z:]{1,6}".prop_map(ValueId::Str)
    ]
}

fn sides() -> impl Strategy<Value = (Vec<FeatureValue>, Vec<FeatureValue>)> {
    (
        proptest::option::of(value()),
        proptest::collection::vec(value(), 0..4),
        value(),
        proptest::collection::vec(value(), 0..3),
    )
        .prop_filter_map("user side needs a feature", |(inv, tech, ad, kw)| {
            let mut user: Vec<FeatureValue> = inv
                .into_iter()
                .map(|v| FeatureValue { field: 0, value: v })
                .collect();
            user.extend(
                tech.into_iter()
                    .map(|v| FeatureValue { field: 1, value: v }),
            );
            if user.is_empty() {
                return None;
            }
            let mut ad_side = vec![FeatureValue {
                field: 2,
                value: ad,
            }];
            ad_side.extend(kw.into_iter().map(|v| FeatureValue { field: 3, value: v }));
            Some((user, ad_side))
        })
}

fn event() -> impl Strategy<Value = Event> {
    (
        sides(),
        any::<u64>(),
        "[a-z0-9]{1,5}",
        any::<bool>(),
        any::<bool>(),
        0.0f64..1e4,
    )
        .prop_map(
            |((user, ad), event_id, segment, clicked, logged, dwell)| Event {
                event_id,
                user,
                ad,
                segment,
                clicked,
                dwell_s: (clicked && logged).then_some(dwell),
                dwell_logged: logged,
            },
        )
}

/// A model with every vector the event touches materialised at random values.
fn random_model(seed: u64, dim: usize, lambda: f64) -> LatentFactorModel {
    let hyper = Hyper {
        l2_lambda: lambda,
        init_sigma: 0.4,
        ..Hyper::default()
    };
    LatentFactorModel::new(schema(), dim, hyper, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn cross_entropy_is_non_negative_and_zero_only_at_its_label(p in 1e-6f64..1.0 - 1e-6, l in 0.0f64..=1.0) {
        let ce = cross_entropy(p, l);
        prop_assert!(ce >= 0.0);
        prop_assert!(cross_entropy(l.clamp(1e-12, 1.0 - 1e-12), l) < 1e-12);
        if (p - l).abs() > 1e-3 {
            prop_assert!(ce > 0.0);
        }
    }

    #[test]
    fn cross_entropy_equals_logloss_on_binary_labels(p in 0.0f64..=1.0, clicked in any::<bool>()) {
        let l = if clicked { 1.0 } else { 0.0 };
        prop_assert!((cross_entropy(p, l) - logloss(p, clicked)).abs() <= 1e-12);
    }

    #[test]
    fn entity_vectors_ignore_multi_value_order((user, ad) in sides(), seed in any::<u64>()) {
        let m = random_model(seed, 3, 0.0);
        let mut u2 = user.clone();
        u2.reverse();
        let mut a2 = ad.clone();
        a2.rotate_left(1);
        // single-value fields stay unique; only the listing order changes
        prop_assert_eq!(m.score(&user, &ad).unwrap(), m.score(&u2, &a2).unwrap());
    }

    #[test]
    fn event_log_round_trips(mut events in proptest::collection::vec(event(), 0..20)) {
        for (i, e) in events.iter_mut().enumerate() {
            e.event_id = i as u64;
        }
        let mut w = EventLogWriter::new(Vec::new(), &schema()).unwrap();
        for e in &events {
            w.write(e).unwrap();
        }
        let bytes = w.finish().unwrap();
        let text = std::str::from_utf8(&bytes).unwrap();
        prop_assert!(text.lines().all(|l| l == l.trim_end()));
        let back: Vec<Event> = EventLogReader::new(bytes.as_slice()).unwrap().collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back, events);
    }

    #[test]
    fn sgd_update_is_deterministic((user, ad) in sides(), seed in any::<u64>(), label in 0.0f64..=1.0) {
        let mut a = random_model(seed, 2, 1e-3);
        let mut b = random_model(seed, 2, 1e-3);
        for _ in 0..3 {
            a.sgd_update(&user, &ad, label).unwrap();
            b.sgd_update(&user, &ad, label).unwrap();
        }
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Grouping events by identical prediction, LogLoss is bounded below by
    /// the group-weighted entropy of the click rate (Gibbs). With a single
    /// constant prediction this is the entropy of the overall click rate.
    #[test]
    fn logloss_is_bounded_by_grouped_entropy(
        rows in proptest::collection::vec((0usize..4, any::<bool>()), 1..200),
        levels in proptest::collection::vec(0.001f64..0.999, 4),
    ) {
        let mut acc = EvalAccumulator::new(false);
        let mut groups = [(0.0f64, 0.0f64); 4];
        for &(g, clicked) in &rows {
            acc.add("s", levels[g], clicked);
            groups[g].0 += 1.0;
            groups[g].1 += f64::from(u8::from(clicked));
        }
        let n = rows.len() as f64;
        let h = |q: f64| if q <= 0.0 || q >= 1.0 { 0.0 } else { -(q * q.ln() + (1.0 - q) * (1.0 - q).ln()) };
        let bound: f64 = groups.iter().filter(|g| g.0 > 0.0).map(|g| g.0 * h(g.1 / g.0)).sum::<f64>() / n;
        let ll = acc.finish().unwrap().overall.logloss_mean;
        prop_assert!(ll >= bound - 1e-9, "{ll} < {bound}");
    }

    #[test]
    fn dwell_pmf_sums_to_one_and_ignores_order_and_sharding(
        events in proptest::collection::vec(event(), 1..80),
        split in 0usize..80,
    ) {
        prop_assume!(events.iter().any(|e| e.clicked));
        let cfg = DwellConfig { slices: vec!["involvement".parse().unwrap()], ..DwellConfig::default() };
        let whole = dwell_analysis(&schema(), &events, &cfg).unwrap();
        prop_assert!((whole.pmf.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(whole.pmf.iter().all(|&p| p >= 0.0));
        prop_assert_eq!(whole.ac_share_at.iter().find(|s| s.tau_s == 1.0).map(|s| s.percent <= 100.0), Some(true));

        let mut reversed = events.clone();
        reversed.reverse();
        prop_assert_eq!(&dwell_analysis(&schema(), &reversed, &cfg).unwrap(), &whole);

        let cut = split.min(events.len());
        let mut a = DwellAccumulator::new(&schema(), &cfg).unwrap();
        let mut b = DwellAccumulator::new(&schema(), &cfg).unwrap();
        events[..cut].iter().for_each(|e| a.add(e));
        events[cut..].iter().for_each(|e| b.add(e));
        b.merge(&a).unwrap();
        prop_assert_eq!(&b.finish().unwrap(), &whole);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences(
        (user, ad) in sides(),
        seed in any::<u64>(),
        label in 0.0f64..=1.0,
        lambda in prop_oneof![Just(0.0), 1e-4f64..1e-1],
    ) {
        let m = random_model(seed, 3, lambda);
        let (_, grads) = m.gradient(&user, &ad, label).unwrap();
        for (id, g) in grads {
            let numeric = central_difference(&m, &id, &user, &ad, label);
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-3);
            prop_assert!(rel <= 1e-5, "{id:?}: analytic {g} numeric {numeric}");
        }
    }
}

fn central_difference(
    m: &LatentFactorModel,
    id: &ParamId,
    user: &[FeatureValue],
    ad: &[FeatureValue],
    label: f64,
) -> f64 {
    let h = 1e-6;
    let x = m.param(id).unwrap_or_else(|| match id {
        ParamId::Bias => m.bias(),
        ParamId::Vector {
            field,
            value,
            component,
        } => m.init_vector(*field, value)[*component],
    });
    let mut plus = m.clone();
    plus.set_param(id, x + h).unwrap();
    let mut minus = m.clone();
    minus.set_param(id, x - h).unwrap();
    (plus.objective(user, ad, label).unwrap() - minus.objective(user, ad, label).unwrap())
        / (2.0 * h)
}

#[test]
fn sigmoid_saturates_without_overflow() {
    assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
    assert_eq!(sigmoid(800.0), 1.0);
}
