use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::ModelConfig;

fn engine(seed: u64) -> Engine {
    Engine::new(ModelParams::init(&ModelConfig::micro(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap())
}

fn ev(i: u16, p: u8, t: f32, v: f32) -> Event {
    Event::new(i, p, t, v).unwrap()
}

fn heads(e: &Engine) -> Vec<Vec<u64>> {
    let known = PartialEvent { pitch: Some(60), ..Default::default() };
    let mut out = Vec::new();
    for m in Modality::ALL {
        let k = if m == Modality::Pitch { PartialEvent::default() } else { known };
        let bits = match e.distribution(m, &k).unwrap() {
            HeadOutput::Categorical(c) => c.logits.iter().map(|x| x.to_bits()).collect(),
            HeadOutput::Dmol(d) => d
                .weight_logits
                .iter()
                .chain(&d.locations)
                .chain(&d.log_scales)
                .map(|x| x.to_bits())
                .collect(),
        };
        out.push(bits);
    }
    out.push(vec![e.eos_prob().to_bits()]);
    out
}

#[test]
fn feed_tracks_held_notes() {
    let mut e = engine(1);
    e.feed(&ev(1, 60, 0.0, 80.0)).unwrap();
    assert!(e.is_held(1, 60));
    e.feed(&ev(1, 60, 0.5, 0.0)).unwrap();
    assert!(!e.is_held(1, 60));
    // an unmatched off is tolerated
    e.feed(&ev(2, 61, 0.1, 0.0)).unwrap();
    assert!(e.held().is_empty());
    assert_eq!(e.events_fed(), 3);
}

#[test]
fn feed_changes_the_heads() {
    let mut e = engine(1);
    let before = heads(&e);
    e.feed(&ev(1, 60, 0.0, 80.0)).unwrap();
    assert_ne!(before, heads(&e));
}

#[test]
fn long_gaps_are_clamped_not_rejected() {
    let mut a = engine(2);
    let mut b = engine(2);
    a.feed(&ev(1, 60, 25.0, 80.0)).unwrap();
    b.feed(&ev(1, 60, 10.0, 80.0)).unwrap();
    assert_eq!(heads(&a), heads(&b));
}

#[test]
fn fully_fixed_query_echoes_and_repeats() {
    let mut e = engine(3);
    e.feed(&ev(1, 60, 0.0, 80.0)).unwrap();
    let x = ev(130, 38, 0.25, 99.0);
    let spec = QuerySpec::new().fix_event(&x);
    let a = e.query(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = e.query(&spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(a.event, x);
    assert_eq!(a, b);
    assert!(a.log_probs.iter().all(|l| l.is_finite() && *l <= 0.0));
    assert_eq!(a.order, AUTO_ORDER.to_vec());
}

#[test]
fn query_is_pure() {
    let mut e = engine(4);
    e.feed(&ev(5, 70, 0.0, 64.0)).unwrap();
    let state = e.state().clone();
    let before = heads(&e);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        e.query(&QuerySpec::new(), &mut rng).unwrap();
        e.query(&QuerySpec { end_held: true, ..Default::default() }, &mut rng).unwrap();
        e.event_log_prob(&ev(5, 70, 0.1, 0.0), &AUTO_ORDER).unwrap();
        e.pitch_ranking(&QuerySpec::new()).unwrap();
    }
    assert_eq!(e.state(), &state);
    assert_eq!(heads(&e), before);
}

#[test]
fn query_scores_agree_with_event_log_prob() {
    let mut e = engine(5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for step in 0..40 {
        let order = all_orders()[step % 24].clone();
        let p = e.query(&QuerySpec::new().with_order(order.clone()), &mut rng).unwrap();
        let lp = e.event_log_prob(&p.event, &order).unwrap();
        assert_eq!(p.log_probs.map(f64::to_bits), lp.log_probs.map(f64::to_bits));
        assert_eq!(p.order, order);
        assert!((lp.total - lp.log_probs.iter().sum::<f64>()).abs() < 1e-9);
        e.feed(&p.event).unwrap();
    }
}

fn all_orders() -> Vec<Vec<Modality>> {
    crate::trainer::eval::all_orders().into_iter().map(|o| o.to_vec()).collect()
}

#[test]
fn orders_give_different_finite_totals() {
    let mut e = engine(6);
    e.feed(&ev(1, 60, 0.0, 80.0)).unwrap();
    let x = ev(1, 64, 0.5, 70.0);
    let totals: Vec<f64> = all_orders().iter().map(|o| e.event_log_prob(&x, o).unwrap().total).collect();
    assert!(totals.iter().all(|t| t.is_finite()));
    assert!(totals.iter().any(|t| (t - totals[0]).abs() > 1e-6));
    assert!(e.event_log_prob(&x, &parse_order("ipt").unwrap()).is_err());
}

#[test]
fn untrained_pitch_is_near_uniform() {
    let e = engine(7);
    let lp = e.event_log_prob(&ev(1, 60, 0.0, 80.0), &AUTO_ORDER).unwrap();
    assert!((lp.log_probs[1] + 128f64.ln()).abs() < 0.1, "{}", lp.log_probs[1]);
}

#[test]
fn note_off_of_a_held_note() {
    let mut e = engine(8);
    e.feed(&ev(1, 60, 0.0, 80.0)).unwrap();
    e.feed(&ev(33, 40, 0.0, 80.0)).unwrap();
    e.feed(&ev(1, 67, 0.0, 80.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let spec = QuerySpec { end_held: true, ..Default::default() };
    for _ in 0..300 {
        let p = e.query(&spec, &mut rng).unwrap();
        assert!(p.event.is_noteoff());
        assert!(e.is_held(p.event.instrument.get(), p.event.pitch));
    }
    // pitch whitelist form with velocity fixed to 0
    let spec = QuerySpec {
        pitches: Some(vec![60, 67]),
        instruments: Some(vec![1]),
        ..QuerySpec::new().fix_velocity(0.0)
    };
    let p = e.query(&spec, &mut rng).unwrap();
    assert!(p.event.is_noteoff() && e.is_held(1, p.event.pitch));
}

#[test]
fn end_held_with_nothing_sounding_is_empty_support() {
    let e = engine(9);
    let spec = QuerySpec { end_held: true, ..Default::default() };
    let err = e.query(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(&err, Error::EmptySupport(m) if m == "instrument"), "{err}");
    let spec = QuerySpec { pitches: Some(vec![3]), exclude_pitches: vec![3], ..Default::default() };
    let err = e.query(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(&err, Error::EmptySupport(m) if m == "pitch"), "{err}");
}

#[test]
fn excluded_instruments_never_appear() {
    let e = engine(10);
    let banned: Vec<u16> = (1..=200).collect();
    let spec = QuerySpec { exclude_instruments: banned.clone(), ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10_000 {
        let p = e.query(&spec, &mut rng).unwrap();
        assert!(p.event.instrument.get() > 200);
    }
}

#[test]
fn low_velocity_samples_become_note_offs() {
    let e = engine(11);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = QuerySpec { velocity_range: Some((0.0, 0.49)), ..Default::default() };
    for _ in 0..100 {
        assert_eq!(e.query(&spec, &mut rng).unwrap().event.velocity, 0.0);
    }
    for _ in 0..1000 {
        let v = e.query(&QuerySpec::new().note_on(), &mut rng).unwrap().event.velocity;
        assert!(v >= 0.5);
    }
}

#[test]
fn include_eos_reports_the_cached_probability() {
    let e = engine(12);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    assert_eq!(e.query(&QuerySpec::new(), &mut rng).unwrap().eos_prob, None);
    let spec = QuerySpec { include_eos: true, ..Default::default() };
    let p = e.query(&spec, &mut rng).unwrap().eos_prob.unwrap();
    assert_eq!(p, e.model().eos_prob(e.state().hidden.top()));
}

#[test]
fn pitch_ranking_contract() {
    let mut e = engine(13);
    e.feed(&ev(1, 60, 0.0, 80.0)).unwrap();
    let spec = QuerySpec::new().fix_instrument(1).fix_velocity(90.0);
    let r = e.pitch_ranking(&spec).unwrap();
    assert_eq!(r.len(), 128);
    for w in r.windows(2) {
        assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
    }
    let mass: f64 = r.iter().map(|(_, l)| l.exp()).sum();
    assert!((mass - 1.0).abs() < 1e-6);
    let head = e.distribution(Modality::Pitch, &spec.fixed).unwrap();
    let logits = &head.categorical().unwrap().logits;
    let argmax = (0..128).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
    assert_eq!(r[0].0 as usize, argmax);
    assert!(e.pitch_ranking(&QuerySpec::new().fix_pitch(3)).is_err());
}

#[test]
fn snapshot_round_trip() {
    let mut e = engine(14);
    e.feed(&ev(1, 60, 0.0, 80.0)).unwrap();
    let before = heads(&e);
    let t = e.snapshot();
    e.restore(t).unwrap();
    assert_eq!(heads(&e), before);
    e.feed(&ev(1, 62, 0.2, 80.0)).unwrap();
    assert_ne!(heads(&e), before);
    e.restore(t).unwrap();
    assert_eq!(heads(&e), before);
    assert!(e.is_held(1, 60) && !e.is_held(1, 62));
    assert_eq!(e.events_fed(), 1);
}

#[test]
fn interleaved_snapshots() {
    let mut e = engine(15);
    let a = e.snapshot();
    let ha = heads(&e);
    e.feed(&ev(1, 60, 0.0, 80.0)).unwrap();
    let b = e.snapshot();
    let hb = heads(&e);
    e.feed(&ev(2, 61, 0.1, 80.0)).unwrap();
    e.restore(a).unwrap();
    assert_eq!(heads(&e), ha);
    e.restore(b).unwrap();
    assert_eq!(heads(&e), hb);
    e.restore(a).unwrap();
    assert_eq!(heads(&e), ha);
    e.forget(a).unwrap();
    assert!(matches!(e.restore(a), Err(Error::UnknownToken(_))));
    assert!(matches!(e.restore(99), Err(Error::UnknownToken(99))));
}

#[test]
fn reset_matches_a_fresh_engine() {
    let mut e = engine(16);
    for k in 0..5 {
        e.feed(&ev(1, 60 + k, 0.1, 80.0)).unwrap();
    }
    e.reset();
    let fresh = engine(16);
    assert_eq!(heads(&e), heads(&fresh));
    assert!(e.held().is_empty());
    assert_eq!(e.events_fed(), 0);
    let q = |x: &Engine| x.query(&QuerySpec::new(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(q(&e), q(&fresh));
}

#[test]
fn rounding_stays_inside_the_interval() {
    let y = f32_within(0.1, 0.0, 0.1);
    assert!(y as f64 <= 0.1);
    let y = f32_within(0.1, 0.1, 0.2);
    assert!(y as f64 >= 0.1);
    assert_eq!(f32_within(0.5, 0.5, 127.0), 0.5);
}

fn arb_spec() -> impl Strategy<Value = QuerySpec> {
    (
        proptest::option::of(proptest::collection::vec(1u16..=272, 1..6)),
        proptest::option::of(proptest::collection::vec(0u8..=127, 1..6)),
        proptest::option::of((0.0f64..10.0, 0.0f64..2.0)),
        proptest::option::of((0.0f64..127.0, 0.0f64..40.0)),
        proptest::sample::subsequence(Modality::ALL.to_vec(), 0..=4),
        0u64..1000,
    )
        .prop_map(|(inst, pitch, time, vel, order, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order = order;
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            let mut spec = QuerySpec {
                instruments: inst,
                pitches: pitch,
                time_range: time.map(|(a, w)| (a, (a + w).min(10.0))),
                velocity_range: vel.map(|(a, w)| (a, (a + w).min(127.0))),
                temperatures: Temperatures { timing: 2.0, pitch: 1.5, ..Default::default() },
                ..Default::default()
            };
            // fix whatever the order leaves out
            for m in Modality::ALL {
                if !order.contains(&m) {
                    match m {
                        Modality::Instrument => spec.fixed.instrument = spec.instruments.as_ref().map_or(Some(7), |w| Some(w[0])),
                        Modality::Pitch => spec.fixed.pitch = spec.pitches.as_ref().map_or(Some(60), |w| Some(w[0])),
                        Modality::Time => spec.fixed.time = Some(spec.time_range.map_or(0.25, |r| r.0)),
                        Modality::Velocity => spec.fixed.velocity = Some(spec.velocity_range.map_or(64.0, |r| r.1)),
                    }
                }
            }
            spec.order = Some(order);
            spec
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sampled_events_satisfy_their_spec(spec in arb_spec(), seed in 0u64..1000) {
        let e = engine(17);
        let p = e.query(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let x = p.event;
        if let Some(w) = &spec.instruments { prop_assert!(w.contains(&x.instrument.get())); }
        if let Some(w) = &spec.pitches { prop_assert!(w.contains(&x.pitch)); }
        if let Some((lo, hi)) = spec.time_range {
            prop_assert!((lo..=hi).contains(&(x.time_delta as f64)) || spec.fixed.time.is_some());
        }
        if let (Some((lo, hi)), None) = (spec.velocity_range, spec.fixed.velocity) {
            let v = x.velocity as f64;
            // the zero bin swallows samples below one half
            prop_assert!((lo..=hi).contains(&v) || (v == 0.0 && lo < 0.5));
        }
        if let Some(i) = spec.fixed.instrument { prop_assert_eq!(x.instrument.get(), i); }
        if let Some(q) = spec.fixed.pitch { prop_assert_eq!(x.pitch, q); }
        if let Some(t) = spec.fixed.time { prop_assert_eq!(x.time_delta, t as f32); }
        if let Some(v) = spec.fixed.velocity { prop_assert_eq!(x.velocity, v as f32); }
        prop_assert!((p.total - p.log_probs.iter().sum::<f64>()).abs() < 1e-9);
    }
}
