//! Brute-force metric oracles: linear scans over explicit n-gram lists.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn grams<T: Clone + PartialEq>(seq: &[T], n: usize) -> Vec<Vec<T>> {
    if seq.len() < n {
        return vec![];
    }
    (0..=seq.len() - n).map(|i| seq[i..i + n].to_vec()).collect()
}

pub fn occurrences<T: PartialEq>(list: &[Vec<T>], g: &[T]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

pub fn distinct<T: Clone + PartialEq>(list: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

pub fn clipped<T: Clone + PartialEq>(h: &[T], r: &[T], n: usize) -> usize {
    let (hg, rg) = (grams(h, n), grams(r, n));
    distinct(&hg).iter().map(|g| occurrences(&hg, g).min(occurrences(&rg, g))).sum()
}

pub fn words(s: &str) -> Vec<String> {
    s.split(' ').filter(|w| !w.is_empty()).map(String::from).collect()
}

pub fn oracle_bleu(hyps: &[&str], refs: &[&str]) -> f64 {
    let (mut c, mut r) = (0.0, 0.0);
    let mut m = [0.0; 4];
    let mut t = [0.0; 4];
    for (h, rf) in hyps.iter().zip(refs) {
        let (h, rf) = (words(h), words(rf));
        c += h.len() as f64;
        r += rf.len() as f64;
        for n in 1..=4 {
            m[n - 1] += clipped(&h, &rf, n) as f64;
            t[n - 1] += grams(&h, n).len() as f64;
        }
    }
    if m.iter().sum::<f64>() == 0.0 {
        return 0.0;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    let mut factor = 1.0;
    let mut logs = Vec::new();
    for n in 0..4 {
        if t[n] == 0.0 {
            break;
        }
        let p = if m[n] == 0.0 {
            factor *= 2.0;
            1.0 / (factor * t[n])
        } else {
            m[n] / t[n]
        };
        logs.push(p.ln());
    }
    100.0 * bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

pub fn oracle_nist(hyps: &[&str], refs: &[&str]) -> f64 {
    let hs: Vec<Vec<String>> = hyps.iter().map(|s| words(s)).collect();
    let rs: Vec<Vec<String>> = refs.iter().map(|s| words(s)).collect();
    let all_ref_grams = |n: usize| -> Vec<Vec<String>> { rs.iter().flat_map(|r| grams(r, n)).collect() };
    let total_words = rs.iter().map(Vec::len).sum::<usize>() as f64;
    let info = |g: &[String]| -> f64 {
        let num =
            if g.len() == 1 { total_words } else { occurrences(&all_ref_grams(g.len() - 1), &g[..g.len() - 1]) as f64 };
        (num / occurrences(&all_ref_grams(g.len()), g) as f64).log2()
    };
    let mut score = 0.0;
    for n in 1..=5 {
        let (mut gained, mut total) = (0.0, 0.0);
        for (h, r) in hs.iter().zip(&rs) {
            let (hg, rg) = (grams(h, n), grams(r, n));
            total += hg.len() as f64;
            for g in distinct(&hg) {
                let m = occurrences(&hg, &g).min(occurrences(&rg, &g));
                if m > 0 {
                    gained += m as f64 * info(&g);
                }
            }
        }
        if total > 0.0 {
            score += gained / total;
        }
    }
    let lh = hs.iter().map(Vec::len).sum::<usize>() as f64;
    let lr = rs.iter().map(Vec::len).sum::<usize>() as f64;
    if lh == 0.0 {
        return 0.0;
    }
    let beta = 0.5f64.ln() / (2.0f64 / 3.0).ln().powi(2);
    let ratio = if lr == 0.0 { 1.0 } else { (lh / lr).min(1.0) };
    score * (beta * ratio.ln().powi(2)).exp()
}

pub fn oracle_chrf(hyps: &[&str], refs: &[&str]) -> f64 {
    let strip = |s: &str| -> Vec<char> { s.chars().filter(|c| !c.is_whitespace()).collect() };
    let (mut ps, mut rs, mut used) = (0.0, 0.0, 0.0);
    for n in 1..=6 {
        let (mut hn, mut rn, mut mn) = (0.0, 0.0, 0.0);
        for (h, r) in hyps.iter().zip(refs) {
            let (h, r) = (strip(h), strip(r));
            hn += grams(&h, n).len() as f64;
            rn += grams(&r, n).len() as f64;
            mn += clipped(&h, &r, n) as f64;
        }
        if hn == 0.0 && rn == 0.0 {
            continue;
        }
        used += 1.0;
        ps += if hn > 0.0 { mn / hn } else { 0.0 };
        rs += if rn > 0.0 { mn / rn } else { 0.0 };
    }
    if used == 0.0 {
        return 0.0;
    }
    let (p, r) = (ps / used, rs / used);
    if 4.0 * p + r == 0.0 {
        0.0
    } else {
        100.0 * 5.0 * p * r / (4.0 * p + r)
    }
}

/// Up to 5 sentences of up to 8 tokens over a small vocabulary; hypotheses are
/// noisy copies of the references so that matches occur at every order.
pub fn random_corpus(seed: u64) -> (Vec<String>, Vec<String>) {
    const VOCAB: [&str; 7] = ["a", "b", "c", "the", "cat", "sat", "xy"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=5);
    let (mut hyps, mut refs) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let len = rng.random_range(0..=8);
        let r: Vec<&str> = (0..len).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect();
        let mut h: Vec<&str> = r.iter().copied().filter(|_| rng.random_bool(0.85)).collect();
        if rng.random_bool(0.5) {
            h.push(VOCAB[rng.random_range(0..VOCAB.len())]);
        }
        if rng.random_bool(0.3) {
            h.shuffle(&mut rng);
        }
        hyps.push(h.join(" "));
        refs.push(r.join(" "));
    }
    (hyps, refs)
}

pub fn as_strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}
