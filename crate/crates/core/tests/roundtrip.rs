mod common;

use common::*;
use dysflux_core::config::Thresholds;
use dysflux_core::detect::{detect_phoneme, EventKind};
use dysflux_core::inventory::PhonemeInventory;
use dysflux_core::resegment::{urfa_iterate, zero_order};
use dysflux_core::search::{viterbi_decode, SearchConfig};
use dysflux_core::simulate::{CorpusSpec, InjectionSpec};

fn fluent_spec() -> CorpusSpec {
    CorpusSpec {
        injection: InjectionSpec::none(),
        seed: 5,
        ..CorpusSpec::default()
    }
}

#[test]
fn fluent_input_is_a_fixed_point() {
    let inv = PhonemeInventory::arpabet();
    let lm = lexicon_lm(&inv);
    let (search, th) = (SearchConfig::default(), Thresholds::default());
    for u in corpus(&fluent_spec(), 25) {
        let st = urfa_iterate(&u.emission, &u.reference, &lm, &inv, &search, &th, 3).unwrap();
        let zero = &st.orders[0].words;
        assert!(zero.omitted.is_empty(), "{}", u.id);
        for o in &st.orders[1..] {
            assert_eq!(&o.words, zero, "{} order {}", u.id, o.order);
        }
        let z = st.zero();
        assert!(
            detect_phoneme(&z.grid, z.dtw.as_ref().unwrap(), &inv, &th).is_empty(),
            "{}",
            u.id
        );
        assert_eq!(*zero, u.truth.word_segmentation(&u.reference, &inv).unwrap());
    }
}

#[test]
fn max_order_zero_is_the_zero_order_pipeline() {
    let inv = PhonemeInventory::arpabet();
    let lm = lexicon_lm(&inv);
    let (search, th) = (SearchConfig::default(), Thresholds::default());
    for u in corpus(&corpus_spec(0.3), 5) {
        let st = urfa_iterate(&u.emission, &u.reference, &lm, &inv, &search, &th, 0).unwrap();
        assert_eq!(st.orders.len(), 1);
        assert_eq!(
            st.orders[0],
            zero_order(&u.emission, &u.reference, &lm, &inv, &search, &th).unwrap()
        );
    }
}

#[test]
fn higher_orders_stay_inside_lower_spans() {
    let inv = PhonemeInventory::arpabet();
    let lm = lexicon_lm(&inv);
    let (search, th) = (SearchConfig::default(), Thresholds::default());
    for u in corpus(&corpus_spec(0.3), 40) {
        let st = urfa_iterate(&u.emission, &u.reference, &lm, &inv, &search, &th, 3).unwrap();
        for o in &st.orders {
            assert!(o.monotonic.is_monotonic(), "{} order {}", u.id, o.order);
            assert!(o.words.is_well_formed(), "{} order {}", u.id, o.order);
            assert_eq!(o.segments.total_frames(), u.emission.frames());
        }
        for pair in st.orders.windows(2) {
            for s in &pair[1].words.entries {
                let prev = pair[0].words.span_of(s.word_index).expect("no new words appear");
                assert!(
                    s.start_frame + 1 >= prev.start_frame && s.end_frame <= prev.end_frame + 1,
                    "{} word {} order {}: {:?} outside {:?}",
                    u.id,
                    s.word_index,
                    pair[1].order,
                    (s.start_frame, s.end_frame),
                    (prev.start_frame, prev.end_frame)
                );
            }
        }
    }
}

#[test]
fn injections_are_invertible_and_reproducible() {
    let inv = PhonemeInventory::arpabet();
    let spec = CorpusSpec {
        injection: InjectionSpec {
            repetition: 0.2,
            prolongation: 0.2,
            block: 0.2,
            deletion: 0.1,
            ..InjectionSpec::default()
        },
        seed: 11,
        ..CorpusSpec::default()
    };
    let a = corpus(&spec, 30);
    let b = corpus(&spec, 30);
    assert_eq!(a, b);
    let mut injected = 0;
    for u in &a {
        assert_eq!(u.truth.reconstruct_clean(&inv).unwrap(), u.truth.clean, "{}", u.id);
        injected += u.truth.injections.len();
    }
    assert!(injected > 30, "only {injected} injections");
}

#[test]
fn noiseless_decode_recovers_the_disfluent_alignment() {
    let inv = PhonemeInventory::arpabet();
    let lm = lexicon_lm(&inv);
    let th = Thresholds::default();
    let mut repeated = 0;
    for u in corpus(&corpus_spec(0.0), 30) {
        let dec = viterbi_decode(&u.emission, &lm, &SearchConfig::default()).unwrap();
        assert_eq!(dec, u.truth.disfluent, "{}", u.id);
        if u.truth.events.iter().any(|e| e.kind == EventKind::Repetition) {
            let st = zero_order(&u.emission, &u.reference, &lm, &inv, &SearchConfig::default(), &th).unwrap();
            let ev = detect_phoneme(&st.grid, st.dtw.as_ref().unwrap(), &inv, &th);
            assert!(ev.iter().any(|e| e.kind == EventKind::Repetition), "{}", u.id);
            repeated += 1;
        }
    }
    assert!(repeated > 0);
}
