//! Pairwise human-judgment aggregation: item decisions, the pairwise score,
//! overall agreement and free-marginal kappa.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Number of vote categories (-1, 0, +1).
pub const CATEGORIES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HumanEvalError {
    #[error("vote {0} is not -1, 0 or 1")]
    InvalidVote(i64),
    #[error("rating matrix needs at least one item and two raters (got {items} x {raters})")]
    TooSmall { items: usize, raters: usize },
    #[error("row {row} has {got} votes, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("cannot sample {n} items from {size}")]
    SampleTooLarge { n: usize, size: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate vote for item {item:?} by rater {rater:?}")]
    DuplicateVote { item: String, rater: String },
    #[error("item {item:?} is missing a vote from rater {rater:?}")]
    MissingVote { item: String, rater: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Win,
    Loss,
    Tie,
}

/// Items × raters votes in {-1, 0, +1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatingMatrix {
    votes: Vec<Vec<i8>>,
}

fn check_vote(v: i64) -> Result<i8, HumanEvalError> {
    match v {
        -1..=1 => Ok(v as i8),
        _ => Err(HumanEvalError::InvalidVote(v)),
    }
}

impl RatingMatrix {
    pub fn new(rows: Vec<Vec<i64>>) -> Result<Self, HumanEvalError> {
        let raters = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || raters < 2 {
            return Err(HumanEvalError::TooSmall { items: rows.len(), raters });
        }
        let mut votes = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != raters {
                return Err(HumanEvalError::RaggedRow { row: i, got: row.len(), expected: raters });
            }
            votes.push(row.into_iter().map(check_vote).collect::<Result<Vec<_>, _>>()?);
        }
        Ok(RatingMatrix { votes })
    }

    pub fn items(&self) -> usize {
        self.votes.len()
    }

    pub fn raters(&self) -> usize {
        self.votes[0].len()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.votes.iter().map(Vec::as_slice)
    }

    pub fn negated(&self) -> Self {
        RatingMatrix { votes: self.votes.iter().map(|r| r.iter().map(|v| -v).collect()).collect() }
    }

    /// Parses a TSV with header `item_id rater_id vote`. Every item needs
    /// exactly one vote from every rater seen in the file.
    pub fn from_tsv(text: &str) -> Result<Self, HumanEvalError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(HumanEvalError::Parse { line: 1, msg: "empty file".into() })?;
        let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
        if cols != ["item_id", "rater_id", "vote"] {
            return Err(HumanEvalError::Parse {
                line: 1,
                msg: format!("expected header item_id, rater_id, vote; got {header:?}"),
            });
        }
        let mut cells: BTreeMap<String, BTreeMap<String, i8>> = BTreeMap::new();
        let mut raters: Vec<String> = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split('\t').map(str::trim).collect();
            if f.len() != 3 {
                return Err(HumanEvalError::Parse { line: i + 1, msg: format!("expected 3 columns, got {}", f.len()) });
            }
            let vote: i64 =
                f[2].parse().map_err(|_| HumanEvalError::Parse { line: i + 1, msg: format!("bad vote {:?}", f[2]) })?;
            let vote = check_vote(vote)?;
            if !raters.iter().any(|r| r == f[1]) {
                raters.push(f[1].to_string());
            }
            let row = cells.entry(f[0].to_string()).or_default();
            if row.insert(f[1].to_string(), vote).is_some() {
                return Err(HumanEvalError::DuplicateVote { item: f[0].into(), rater: f[1].into() });
            }
        }
        raters.sort();
        let mut rows = Vec::with_capacity(cells.len());
        for (item, row) in &cells {
            let mut out = Vec::with_capacity(raters.len());
            for r in &raters {
                let v =
                    row.get(r).ok_or_else(|| HumanEvalError::MissingVote { item: item.clone(), rater: r.clone() })?;
                out.push(i64::from(*v));
            }
            rows.push(out);
        }
        RatingMatrix::new(rows)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("item_id\trater_id\tvote\n");
        for (i, row) in self.votes.iter().enumerate() {
            for (r, v) in row.iter().enumerate() {
                s.push_str(&format!("i{i:04}\tr{r}\t{v}\n"));
            }
        }
        s
    }
}

pub fn decide_item(votes: &[i8]) -> Result<Decision, HumanEvalError> {
    let mut s = 0i64;
    for &v in votes {
        s += i64::from(check_vote(i64::from(v))?);
    }
    Ok(if s >= 2 {
        Decision::Win
    } else if s <= -2 {
        Decision::Loss
    } else {
        Decision::Tie
    })
}

/// `100 (W - L) / (W + L + T)`
pub fn pairwise_from_counts(wins: usize, losses: usize, ties: usize) -> f64 {
    let n = wins + losses + ties;
    if n == 0 {
        return 0.0;
    }
    100.0 * (wins as f64 - losses as f64) / n as f64
}

/// Free-marginal kappa for `k` categories.
pub fn kappa_from_agreement(p_o: f64, k: usize) -> f64 {
    let chance = 1.0 / k as f64;
    (p_o - chance) / (1.0 - chance)
}

/// Overall agreement over the full matrix and the free-marginal kappa.
pub fn agreement_and_kappa(m: &RatingMatrix) -> (f64, f64) {
    let r = m.raters();
    let mut pairs = 0usize;
    for row in m.rows() {
        let mut counts = [0usize; CATEGORIES];
        for &v in row {
            counts[(v + 1) as usize] += 1;
        }
        pairs += counts.iter().map(|&c| c * c.saturating_sub(1)).sum::<usize>();
    }
    let p_o = pairs as f64 / (m.items() * r * (r - 1)) as f64;
    (p_o, kappa_from_agreement(p_o, CATEGORIES))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseResult {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub score: f64,
    pub agreement: f64,
    pub kappa: f64,
}

impl fmt::Display for PairwiseResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "W={} L={} T={} Score={:.2} Agreement={:.2}% Kappa={:.4}",
            self.wins,
            self.losses,
            self.ties,
            self.score,
            100.0 * self.agreement,
            self.kappa
        )
    }
}

pub fn pairwise_score(m: &RatingMatrix) -> PairwiseResult {
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for row in m.rows() {
        match decide_item(row).expect("matrix holds valid votes") {
            Decision::Win => wins += 1,
            Decision::Loss => losses += 1,
            Decision::Tie => ties += 1,
        }
    }
    let (agreement, kappa) = agreement_and_kappa(m);
    PairwiseResult { wins, losses, ties, score: pairwise_from_counts(wins, losses, ties), agreement, kappa }
}

/// `n` distinct indices below `size`, seeded, ascending.
pub fn sample_eval_items(size: usize, n: usize, seed: u64) -> Result<Vec<usize>, HumanEvalError> {
    if n > size {
        return Err(HumanEvalError::SampleTooLarge { n, size });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = index::sample(&mut rng, size, n).into_vec();
    v.sort_unstable();
    Ok(v)
}

/// A matrix with the given item decisions: wins get two +1 votes, losses two
/// -1 votes, ties none; remaining raters vote 0.
pub fn matrix_from_counts(
    wins: usize,
    losses: usize,
    ties: usize,
    raters: usize,
) -> Result<RatingMatrix, HumanEvalError> {
    let mk = |v: i64| {
        let mut row = vec![0i64; raters];
        for x in row.iter_mut().take(2) {
            *x = v;
        }
        row
    };
    let mut rows = Vec::with_capacity(wins + losses + ties);
    rows.extend(std::iter::repeat_with(|| mk(1)).take(wins));
    rows.extend(std::iter::repeat_with(|| mk(-1)).take(losses));
    rows.extend(std::iter::repeat_with(|| mk(0)).take(ties));
    RatingMatrix::new(rows)
}
