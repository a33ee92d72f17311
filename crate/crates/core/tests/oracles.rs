mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use dysflux_core::grid::{dtw_align, dtw_on_grid};
use dysflux_core::inventory::{PhonemeId, PhonemeInventory};
use dysflux_core::metrics::{dper, iwer, per};
use dysflux_core::reference::ReferenceText;
use dysflux_core::search::{search_complexity_probe, viterbi};
use dysflux_core::segments::AlignmentSegments;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn viterbi_matches_enumeration(seed in any::<u64>(), idx in 0usize..12, t in 1usize..=6, n in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = random_viterbi_case(&mut rng, idx, t, n);
        let d = viterbi(&case.emission(), &case.lm(), &case.cfg).unwrap();
        let (best, winners) = brute_force_viterbi(&case);
        prop_assert_eq!(d.score, best);
        let got = frame_labels(&d.segments);
        prop_assert!(winners.contains(&got), "{:?} not among {:?}", got, winners);
        prop_assert_eq!(d.transitions, ((t - 1) * n * n) as u64);
    }

    #[test]
    fn dtw_matches_enumeration(seed in any::<u64>(), r in 1usize..=5, c in 1usize..=5) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sim: Vec<Vec<f64>> = (0..r)
            .map(|_| (0..c).map(|_| if rng.gen_bool(0.2) { 1.0 } else { rng.gen_range(0.0..1.0) }).collect())
            .collect();
        let flat: Vec<f64> = sim.iter().flatten().copied().collect();
        let p = dtw_on_grid(&flat, r, c);
        prop_assert_eq!(p.total_cost, brute_force_dtw(&sim));
        prop_assert_eq!(p.steps[0], (0, 0));
        prop_assert_eq!(*p.steps.last().unwrap(), (r - 1, c - 1));
        for w in p.steps.windows(2) {
            let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            prop_assert!(matches!((di, dj), (1, 1) | (0, 1) | (1, 0)));
        }
        let along: f64 = p.steps.iter().fold(0.0, |acc, &(i, j)| acc + (1.0 - sim[i][j]));
        prop_assert_eq!(along, p.total_cost);
    }

    #[test]
    fn edit_rates_match_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_segments(&mut rng, 5, 4);
        let h = random_segments(&mut rng, 5, 4);
        let (rl, hl) = (r.labels(), h.labels());
        prop_assert!((dper(&r, &h).unwrap() - brute_force_dper(&r, &h)).abs() <= 1e-12);
        prop_assert_eq!(per(&rl, &hl).unwrap(), brute_force_levenshtein(&rl, &hl) as f64 / rl.len() as f64);
    }

    #[test]
    fn equal_durations_reduce_dper_to_per(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat = |rng: &mut ChaCha8Rng| {
            let len = rng.gen_range(1..=5);
            let mut runs: Vec<(PhonemeId, usize)> = Vec::new();
            while runs.len() < len {
                let p = PhonemeId(rng.gen_range(0..4));
                if runs.last().is_some_and(|x| x.0 == p) { continue; }
                runs.push((p, 3));
            }
            AlignmentSegments::from_runs(&runs, 0.02).unwrap()
        };
        let (r, h) = (flat(&mut rng), flat(&mut rng));
        let p = per(&r.labels(), &h.labels()).unwrap();
        prop_assert!((dper(&r, &h).unwrap() - p).abs() < 1e-12);
    }
}

#[test]
fn complexity_is_t_minus_one_n_squared() {
    for (t, n) in [(1, 1), (2, 1), (1, 5), (2, 3), (10, 4), (37, 7), (100, 2), (5, 40)] {
        let probe = search_complexity_probe(t, n).unwrap();
        assert_eq!(probe.transitions, ((t - 1) * n * n) as u64, "t={t} n={n}");
    }
}

#[test]
fn dtw_align_on_phonemes_matches_enumeration() {
    use rand::Rng;
    let inv = PhonemeInventory::arpabet();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let speech: Vec<PhonemeId> = inv.ids().filter(|&p| !inv.is_sil(p)).collect();
    for _ in 0..100 {
        let r: Vec<PhonemeId> = (0..rng.gen_range(1..=5)).map(|_| speech[rng.gen_range(0..8)]).collect();
        let labels = r.iter().map(|&p| inv.label(p)).collect::<Vec<_>>().join(" ");
        let reference = ReferenceText::from_phonemes(&labels, &inv).unwrap();
        let segs = random_segments(&mut rng, 5, 8);
        let sim: Vec<Vec<f64>> = r
            .iter()
            .map(|&a| segs.labels().iter().map(|&b| inv.sim(a, b)).collect())
            .collect();
        let p = dtw_align(&reference, &segs, &inv).unwrap();
        assert_eq!(p.total_cost, brute_force_dtw(&sim));
    }
}

#[test]
fn ca_cat_dtw_cost() {
    // K AE T vs K AE K AE T: the best paths pass the repeat through one
    // mismatched cell pair, K–AE and AE–K both scoring 1 − sim
    let inv = PhonemeInventory::arpabet();
    let r = ReferenceText::from_phonemes("K AE T", &inv).unwrap();
    let runs: Vec<(PhonemeId, usize)> = ["K", "AE", "K", "AE", "T"]
        .iter()
        .map(|l| (inv.id(l).unwrap(), 2))
        .collect();
    let segs = AlignmentSegments::from_runs(&runs, 0.02).unwrap();
    let sim: Vec<Vec<f64>> = r
        .phonemes()
        .iter()
        .map(|&a| segs.labels().iter().map(|&b| inv.sim(a, b)).collect())
        .collect();
    let p = dtw_align(&r, &segs, &inv).unwrap();
    assert_eq!(p.total_cost, brute_force_dtw(&sim));
    assert_eq!(p.steps, vec![(0, 0), (0, 1), (0, 2), (1, 3), (2, 4)]);
}

#[test]
fn iwer_counts_disfluent_target() {
    let target = ["i", "i", "want", "it"];
    assert_eq!(iwer(&target, &["i", "want", "it"]).unwrap(), 0.25);
    assert_eq!(iwer(&target, &target).unwrap(), 0.0);
    assert_eq!(
        iwer(&target, &["a", "b"]).unwrap(),
        brute_force_levenshtein(&target, &["a", "b"]) as f64 / 4.0
    );
}
