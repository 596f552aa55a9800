use super::*;
use crate::Execution;

fn cfg() -> MetricConfig {
    MetricConfig::default()
}

#[path = "../../tests/support/metric_oracles.rs"]
mod oracles;
use oracles::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn randomized_corpora_match_brute_force_oracles() {
    for seed in 0..20 {
        let (h, r) = random_corpus(seed);
        let (hs, rs) = (as_strs(&h), as_strs(&r));
        let bleu = bleu_corpus(&hs, &rs, &cfg()).unwrap().score;
        assert!((bleu - oracle_bleu(&hs, &rs)).abs() < 1e-9, "bleu seed {seed}: {bleu} {h:?} {r:?}");
        let nist = nist_corpus(&hs, &rs, &cfg()).unwrap();
        assert!((nist - oracle_nist(&hs, &rs)).abs() < 1e-9, "nist seed {seed}");
        let chrf = chrf_corpus(&hs, &rs, &cfg()).unwrap();
        assert!((chrf - oracle_chrf(&hs, &rs)).abs() < 1e-9, "chrf seed {seed}");
    }
}

#[test]
fn identity_corpora_score_maximum() {
    for seed in 0..20 {
        let (_, r) = random_corpus(seed);
        if r.iter().all(|s| s.is_empty()) {
            continue;
        }
        assert!((bleu_corpus(&r, &r, &cfg()).unwrap().score - 100.0).abs() < 1e-9, "seed {seed}");
        assert!((chrf_corpus(&r, &r, &cfg()).unwrap() - 100.0).abs() < 1e-9, "seed {seed}");
    }
    let short = ["x y", "z"];
    assert!((bleu_corpus(&short, &short, &cfg()).unwrap().score - 100.0).abs() < 1e-9);
}

// sacrebleu 2.6.0 corpus BLEU (13a, exp smoothing, mixed case); the last two use its
// effective-order mode, which coincides with the default whenever 4-grams exist.
const FROZEN_BLEU: &[(&[&str], &[&str], f64)] = &[
    (&["the the the the"], &["the cat sat"], 15.97357760615681),
    (&["the cat sat on the mat", "a dog"], &["the cat sat on a mat", "the dog barked"], 44.12484512922978),
    (&["short"], &["a much longer reference sentence here"], 0.0),
    (
        &["The quick brown fox jumps over the lazy dog .", "Hello , world !"],
        &["The quick brown fox jumped over the lazy dog.", "Hello world!"],
        57.21248424548516,
    ),
    (&["a b c d e", "f g"], &["a b c d e", "f g"], 100.00000000000004),
    (&["x y", "z"], &["x y", "q"], 81.64965809277267),
    (&["a"], &["a"], 100.00000000000004),
];

#[test]
fn bleu_matches_reference_implementation() {
    for (h, r, expected) in FROZEN_BLEU {
        let got = bleu_corpus(h, r, &cfg()).unwrap().score;
        assert!((got - expected).abs() < 1e-9, "{h:?}: {got} vs {expected}");
    }
}

#[test]
fn bleu_clipping_and_smoothing() {
    let b = bleu_corpus(&["the the the the"], &["the cat sat"], &cfg()).unwrap();
    assert_eq!(b.precisions[0], 25.0);
    assert_eq!(b.brevity_penalty, 1.0);
    assert!((b.score - oracle_bleu(&["the the the the"], &["the cat sat"])).abs() < 1e-12);
    // 3-gram and 4-gram orders have no matches but are smoothed
    let b = bleu_corpus(&["a b c x e"], &["a b c d e"], &cfg()).unwrap();
    assert_eq!(b.precisions[3], 100.0 / (2.0 * 2.0));
    assert!(b.score > 0.0);
}

#[test]
fn bleu_edge_cases() {
    assert_eq!(bleu_corpus(&["", ""], &["a b", "c"], &cfg()).unwrap().score, 0.0);
    assert_eq!(bleu_corpus(&["a"], &["a", "b"], &cfg()), Err(MetricError::LengthMismatch { hyps: 1, refs: 2 }));
    let empty: [&str; 0] = [];
    assert_eq!(bleu_corpus(&empty, &empty, &cfg()), Err(MetricError::EmptyCorpus));
    let mut lower = cfg();
    lower.lowercase = true;
    assert_eq!(bleu_corpus(&["The Cat sat down"], &["the cat sat down"], &lower).unwrap().score.round(), 100.0);
    assert!(bleu_corpus(&["The Cat sat down"], &["the cat sat down"], &cfg()).unwrap().score < 100.0);
}

#[test]
fn nist_reference_points() {
    assert!((nist_brevity_penalty(2.0, 3.0) - 0.5).abs() < 1e-9);
    assert!((nist_beta() + 4.2163).abs() < 1e-3);
    assert_eq!(nist_brevity_penalty(5.0, 3.0), 1.0);
    assert_eq!(nist_corpus(&["x y z"], &["a b c"], &cfg()).unwrap(), 0.0);
    let hyps = ["the cat sat on the mat", "a dog barked", "it rained today"];
    let refs = ["the cat sat on a mat", "the dog barked loudly", "it rained all day"];
    let got = nist_corpus(&hyps, &refs, &cfg()).unwrap();
    assert!((got - oracle_nist(&hyps, &refs)).abs() < 1e-9);
    assert!(got > 0.0);
}

#[test]
fn chrf_reference_points() {
    let got = chrf_corpus(&["abc"], &["abd"], &cfg()).unwrap();
    // orders 1..3 are defined: P = R = (2/3 + 1/2 + 0) / 3
    let p = (2.0 / 3.0 + 0.5) / 3.0;
    assert!((got - 100.0 * p).abs() < 1e-9);
    assert_eq!(chrf_corpus(&[""], &["abc"], &cfg()).unwrap(), 0.0);
    assert_eq!(chrf_corpus(&["a b c"], &["abc"], &cfg()).unwrap(), 100.0);
    let mut ws = cfg();
    ws.chrf_whitespace = true;
    assert!(chrf_corpus(&["a b c"], &["abc"], &ws).unwrap() < 100.0);
}

#[test]
fn scores_ignore_sentence_order() {
    for seed in 0..10 {
        let (h, r) = random_corpus(seed + 100);
        let mut idx: Vec<usize> = (0..h.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let h2: Vec<String> = idx.iter().map(|&i| h[i].clone()).collect();
        let r2: Vec<String> = idx.iter().map(|&i| r[i].clone()).collect();
        for m in Metric::ALL {
            let a = score_corpus(m, &h, &r, &cfg()).unwrap();
            let b = score_corpus(m, &h2, &r2, &cfg()).unwrap();
            assert!((a - b).abs() < 1e-9, "{m}");
        }
    }
}

#[test]
fn scores_stay_in_range() {
    for seed in 0..30 {
        let (h, r) = random_corpus(seed + 200);
        for m in [Metric::Bleu, Metric::Chrf2] {
            let s = score_corpus(m, &h, &r, &cfg()).unwrap();
            assert!((0.0..=100.0 + 1e-9).contains(&s), "{m} {s}");
        }
        assert!(score_corpus(Metric::Nist, &h, &r, &cfg()).unwrap() >= 0.0);
    }
}

fn toy_corpus() -> (Vec<String>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut h, mut r) = (Vec::new(), Vec::new());
    for _ in 0..60 {
        let len = rng.random_range(4..10);
        let rf: Vec<String> = (0..len).map(|_| format!("w{}", rng.random_range(0..12))).collect();
        let hy: Vec<String> = rf
            .iter()
            .map(|w| if rng.random_bool(0.3) { format!("w{}", rng.random_range(0..12)) } else { w.clone() })
            .collect();
        h.push(hy.join(" "));
        r.push(rf.join(" "));
    }
    (h, r)
}

#[test]
fn bootstrap_is_deterministic_and_contains_point() {
    let (h, r) = toy_corpus();
    for m in Metric::ALL {
        let c = ScoredCorpus::new(m, &h, &r, &cfg()).unwrap();
        let a = bootstrap_ci(&c, 1000, 5, Execution::Sequential).unwrap();
        let b = bootstrap_ci(&c, 1000, 5, Execution::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.low <= a.point && a.point <= a.high, "{m}: {a:?}");
        assert!(a.half_width > 0.0);
        assert_ne!(bootstrap_ci(&c, 1000, 6, Execution::Sequential).unwrap(), a);
    }
}

#[test]
fn bootstrap_on_identical_sentences_has_zero_width() {
    let h = vec!["the cat sat on the mat"; 20];
    let r = vec!["the cat sat on a mat"; 20];
    for m in Metric::ALL {
        let c = ScoredCorpus::new(m, &h, &r, &cfg()).unwrap();
        let ci = bootstrap_ci(&c, 200, 1, Execution::default()).unwrap();
        assert_eq!(ci.half_width, 0.0, "{m}");
        assert!((ci.low - ci.point).abs() < 1e-9);
    }
}

#[test]
fn paired_bootstrap_extremes() {
    let (h, r) = toy_corpus();
    let disjoint: Vec<String> = r.iter().map(|s| s.replace('w', "q")).collect();
    let refs = ScoredCorpus::new(Metric::Bleu, &r, &r, &cfg()).unwrap();
    let sys = ScoredCorpus::new(Metric::Bleu, &h, &r, &cfg()).unwrap();
    let none = ScoredCorpus::new(Metric::Bleu, &disjoint, &r, &cfg()).unwrap();
    assert_eq!(bootstrap_paired(&sys, &sys, 300, 3, Execution::default()).unwrap(), 0.0);
    assert_eq!(bootstrap_paired(&refs, &none, 300, 3, Execution::default()).unwrap(), 1.0);
}

#[test]
fn paired_bootstrap_near_tie_is_fractional() {
    let (h, r) = toy_corpus();
    // second system differs from the first on a handful of sentences only
    let mut h2 = h.clone();
    for (i, s) in h2.iter_mut().enumerate().take(12) {
        *s = if i % 2 == 0 { r[i].clone() } else { "w0 w0 w0".to_string() };
    }
    for m in Metric::ALL {
        let a = ScoredCorpus::new(m, &h, &r, &cfg()).unwrap();
        let b = ScoredCorpus::new(m, &h2, &r, &cfg()).unwrap();
        let f = bootstrap_paired(&a, &b, 500, 9, Execution::Sequential).unwrap();
        assert!(f > 0.0 && f < 1.0, "{m}: {f}");
        assert_eq!(f, bootstrap_paired(&a, &b, 500, 9, Execution::default()).unwrap());
    }
}

#[test]
fn bootstrap_rejects_bad_input() {
    let one = ScoredCorpus::new(Metric::Bleu, &["a"], &["a"], &cfg()).unwrap();
    assert_eq!(bootstrap_ci(&one, 10, 0, Execution::default()), Err(MetricError::CorpusTooSmall(1)));
    let two = ScoredCorpus::new(Metric::Bleu, &["a", "b"], &["a", "b"], &cfg()).unwrap();
    let three = ScoredCorpus::new(Metric::Bleu, &["a", "b", "c"], &["a", "b", "c"], &cfg()).unwrap();
    assert!(matches!(
        bootstrap_paired(&two, &three, 10, 0, Execution::default()),
        Err(MetricError::LengthMismatch { .. })
    ));
}

#[test]
fn resamples_depend_only_on_seed_and_index() {
    assert_eq!(resample_indices(50, 1, 7), resample_indices(50, 1, 7));
    assert_ne!(resample_indices(50, 1, 7), resample_indices(50, 1, 8));
    assert!(resample_indices(50, 1, 7).iter().all(|&i| i < 50));
}

#[test]
fn report_format() {
    let rep = MetricReport {
        metric: Metric::Bleu,
        ci: ConfidenceInterval { point: 12.354, low: 11.5, high: 13.04, half_width: 0.77, samples: 1000, seed: 1 },
    };
    assert_eq!(rep.plus_minus(), "12.35 ± 0.77");
    assert_eq!(rep.tsv_row(), "bleu\t12.3540\t11.5000\t13.0400\t0.7700\t1000\t1");
    assert_eq!(MetricReport::TSV_HEADER.split('\t').count(), rep.tsv_row().split('\t').count());
}

#[test]
fn metric_names_parse() {
    for m in Metric::ALL {
        assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
    }
    assert!("ter".parse::<Metric>().is_err());
}

#[test]
fn config_validation() {
    assert!(MetricConfig { bleu_max_order: 0, ..cfg() }.validate().is_err());
    assert!(MetricConfig { chrf_beta: 0.0, ..cfg() }.validate().is_err());
    assert!(MetricConfig { bootstrap_samples: 0, ..cfg() }.validate().is_err());
}
