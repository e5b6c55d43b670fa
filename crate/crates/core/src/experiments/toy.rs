//! "Guess the numbers": hidden `A in [N]^m`, and `f_A(B) = A_{<=i} 0^{m-i}`
//! where `i` is the largest index with `A_{<i} = B_{<i}`. The level-`j`
//! function replaces `A` by `A_{<=j} 0^{m-j}`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::game::{fnv1a_words, play, HidingFamily, QueryDigest};
use crate::error::{ClbError, Result};
use crate::optimizers::QueryPolicy;
use crate::rng::StreamId;
use crate::stats::Proportion;

/// Answer of the toy oracle (`0` marks an unrevealed position).
pub fn toy_answer(a: &[u32], b: &[u32]) -> Vec<u32> {
    let m = a.len();
    let mut i = 1;
    while i < m && a[i - 1] == b[i - 1] {
        i += 1;
    }
    let mut out = vec![0; m];
    out[..i].copy_from_slice(&a[..i]);
    out
}

#[derive(Debug, Clone)]
pub struct GuessTheNumbers {
    m: usize,
    n_values: u32,
    stream: StreamId,
    /// Revealed prefix of `A`; the fully informed copy holds all of it.
    hidden: Vec<u32>,
}

impl GuessTheNumbers {
    /// Family whose `A_i` is drawn from substream `i` of `stream` when revealed.
    pub fn new(m: usize, n_values: u32, stream: StreamId) -> Result<Self> {
        if m < 1 || n_values < 2 {
            return Err(ClbError::InvalidParameter(format!("need m >= 1 and N >= 2, got m = {m}, N = {n_values}")));
        }
        Ok(Self { m, n_values, stream, hidden: Vec::new() })
    }

    pub fn with_secret(secret: Vec<u32>, n_values: u32) -> Result<Self> {
        let mut fam = Self::new(secret.len(), n_values, StreamId::root(0))?;
        if secret.iter().any(|&a| a < 1 || a > n_values) {
            return Err(ClbError::InvalidParameter("secret entries must lie in 1..=N".into()));
        }
        fam.hidden = secret;
        Ok(fam)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_values(&self) -> u32 {
        self.n_values
    }

    pub fn secret(&self) -> &[u32] {
        &self.hidden
    }

    fn draw(&self, i: usize) -> u32 {
        self.stream.index(i as u64).rng().random_range(1..=self.n_values)
    }

    /// Analytic `(delta_1, delta_2) = (1/N, 1/N)`.
    pub fn hiding_parameters(&self) -> (f64, f64) {
        let p = 1.0 / f64::from(self.n_values);
        (p, p)
    }
}

impl HidingFamily for GuessTheNumbers {
    type Query = Vec<u32>;
    type Answer = Vec<u32>;

    fn steps(&self) -> usize {
        self.m
    }

    fn reveal(&mut self, level: usize) -> Result<()> {
        while self.hidden.len() < level.min(self.m) {
            let next = self.draw(self.hidden.len());
            self.hidden.push(next);
        }
        Ok(())
    }

    fn answer(&self, level: usize, query: &Vec<u32>, _round: usize, _index: usize) -> Result<Vec<u32>> {
        if level < 1 || level > self.hidden.len() {
            return Err(ClbError::IndexOutOfRange { index: level, max: self.hidden.len() });
        }
        if query.len() != self.m {
            return Err(ClbError::DimensionMismatch { expected: self.m, got: query.len() });
        }
        let mut a = vec![0; self.m];
        a[..level].copy_from_slice(&self.hidden[..level]);
        Ok(toy_answer(&a, query))
    }

    fn same_answer(a: &Vec<u32>, b: &Vec<u32>) -> bool {
        a == b
    }

    fn is_correct(&self, output: &Vec<u32>) -> Result<bool> {
        if self.hidden.len() < self.m {
            return Err(ClbError::InvalidParameter("correctness needs the full secret".into()));
        }
        Ok(*output == self.hidden)
    }

    fn digest(query: &Vec<u32>, answer: &Vec<u32>, agrees: bool) -> QueryDigest {
        let revealed = answer.iter().filter(|&&a| a != 0).count();
        QueryDigest {
            hash: fnv1a_words(query.iter().map(|&b| u64::from(b))),
            size: query.len() as f64,
            answer: revealed as f64,
            agrees,
        }
    }
}

pub fn encode_toy(q: &Vec<u32>) -> Vec<u64> {
    q.iter().map(|&b| u64::from(b)).collect()
}

/// Extends the known prefix with random guesses every round and outputs the
/// known prefix completed by random guesses.
#[derive(Debug, Clone)]
pub struct RandomGuessPolicy {
    m: usize,
    n_values: u32,
    known: Vec<u32>,
    rng: rand_chacha::ChaCha8Rng,
    final_guess: Vec<u32>,
}

impl RandomGuessPolicy {
    pub fn new(m: usize, n_values: u32, stream: StreamId) -> Self {
        let mut rng = stream.rng();
        let final_guess = (0..m).map(|_| rng.random_range(1..=n_values)).collect();
        Self { m, n_values, known: Vec::new(), rng, final_guess }
    }

    fn completed(&mut self) -> Vec<u32> {
        let mut b = self.known.clone();
        while b.len() < self.m {
            b.push(self.rng.random_range(1..=self.n_values));
        }
        b
    }
}

impl QueryPolicy<Vec<u32>, Vec<u32>> for RandomGuessPolicy {
    fn name(&self) -> String {
        "random-guess".into()
    }

    fn propose(&mut self) -> Vec<Vec<u32>> {
        vec![self.completed()]
    }

    fn observe(&mut self, queries: &[Vec<u32>], answers: &[Vec<u32>]) -> Result<()> {
        for a in answers.iter().take(queries.len()) {
            let revealed = a.iter().take_while(|&&x| x != 0).count();
            if revealed > self.known.len() {
                self.known = a[..revealed].to_vec();
            }
        }
        Ok(())
    }

    fn output(&self) -> Vec<u32> {
        let mut out = self.known.clone();
        out.extend_from_slice(&self.final_guess[out.len()..]);
        out
    }

    fn fork(&self) -> Box<dyn QueryPolicy<Vec<u32>, Vec<u32>>> {
        Box::new(self.clone())
    }
}

/// Deterministic one-query strategy: fixed query, output looked up from the answer.
#[derive(Debug, Clone)]
pub struct TableStrategy {
    pub query: Vec<u32>,
    /// `(answer, output)` pairs; unlisted answers output `fallback`.
    pub table: Vec<(Vec<u32>, Vec<u32>)>,
    pub fallback: Vec<u32>,
    asked: bool,
    seen: Option<Vec<u32>>,
}

impl TableStrategy {
    pub fn new(query: Vec<u32>, table: Vec<(Vec<u32>, Vec<u32>)>, fallback: Vec<u32>) -> Self {
        Self { query, table, fallback, asked: false, seen: None }
    }

    /// Exact success probability against a uniformly random secret.
    pub fn exact_success(&self, m: usize, n_values: u32) -> f64 {
        let secrets = all_sequences(m, n_values);
        let wins = secrets
            .iter()
            .filter(|a| self.lookup(&toy_answer(a, &self.query)) == a.as_slice())
            .count();
        wins as f64 / secrets.len() as f64
    }

    fn lookup(&self, answer: &[u32]) -> &[u32] {
        self.table.iter().find(|(a, _)| a == answer).map_or(&self.fallback, |(_, o)| o)
    }
}

impl QueryPolicy<Vec<u32>, Vec<u32>> for TableStrategy {
    fn name(&self) -> String {
        "table".into()
    }

    fn propose(&mut self) -> Vec<Vec<u32>> {
        if self.asked {
            return Vec::new();
        }
        self.asked = true;
        vec![self.query.clone()]
    }

    fn observe(&mut self, _q: &[Vec<u32>], answers: &[Vec<u32>]) -> Result<()> {
        self.seen = answers.first().cloned();
        Ok(())
    }

    fn output(&self) -> Vec<u32> {
        match &self.seen {
            Some(a) => self.lookup(a).to_vec(),
            None => self.fallback.clone(),
        }
    }

    fn fork(&self) -> Box<dyn QueryPolicy<Vec<u32>, Vec<u32>>> {
        Box::new(self.clone())
    }
}

/// All sequences in `[N]^m`, lexicographic.
pub fn all_sequences(m: usize, n_values: u32) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|p| {
                (1..=n_values).map(move |v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

/// Every deterministic one-query strategy, with outputs tabulated over the
/// answers that query can actually produce.
pub fn all_one_query_strategies(m: usize, n_values: u32) -> Vec<TableStrategy> {
    let seqs = all_sequences(m, n_values);
    let mut strategies = Vec::new();
    for b in &seqs {
        let mut answers: Vec<Vec<u32>> = seqs.iter().map(|a| toy_answer(a, b)).collect();
        answers.sort();
        answers.dedup();
        let choices = seqs.len();
        let total = choices.pow(answers.len() as u32);
        for code in 0..total {
            let mut rest = code;
            let table = answers
                .iter()
                .map(|ans| {
                    let o = seqs[rest % choices].clone();
                    rest /= choices;
                    (ans.clone(), o)
                })
                .collect();
            strategies.push(TableStrategy::new(b.clone(), table, seqs[0].clone()));
        }
    }
    strategies
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyGameSummary {
    pub m: usize,
    pub n_values: u32,
    pub rounds: usize,
    pub success: Proportion,
    pub divergences: u64,
}

/// Plays `make_policy(trial)` through the hybrid game for `trials` secrets.
pub fn simulate_toy<P>(m: usize, n_values: u32, rounds: usize, trials: u64, seed: u64, make_policy: P) -> Result<ToyGameSummary>
where
    P: Fn(u64) -> Box<dyn QueryPolicy<Vec<u32>, Vec<u32>>> + Sync,
{
    let outcomes: Vec<(bool, bool)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let secret = StreamId::root(seed).child("secret").index(trial);
            let mut hybrid = GuessTheNumbers::new(m, n_values, secret)?;
            let mut truth = GuessTheNumbers::new(m, n_values, secret)?;
            let tr = play(make_policy(trial), &mut hybrid, &mut truth, rounds, 1, encode_toy)?;
            Ok((tr.success, tr.divergence_round.is_some()))
        })
        .collect::<Result<_>>()?;
    let successes = outcomes.iter().filter(|o| o.0).count() as u64;
    let divergences = outcomes.iter().filter(|o| o.1).count() as u64;
    Ok(ToyGameSummary { m, n_values, rounds, success: Proportion::at_95(successes, trials), divergences })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyCheck {
    pub query: Vec<u32>,
    pub exact: f64,
    pub simulated: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactnessReport {
    pub m: usize,
    pub n_values: u32,
    pub trials_per_strategy: u64,
    /// Per-strategy confidence level after a Bonferroni correction.
    pub confidence: f64,
    pub checks: Vec<StrategyCheck>,
}

impl ExactnessReport {
    pub fn mismatches(&self) -> usize {
        self.checks.iter().filter(|c| c.exact < c.simulated.ci_low || c.exact > c.simulated.ci_high).count()
    }
}

/// Brute-force success probability of every deterministic one-query strategy
/// against its simulated frequency in the hybrid game, with exact
/// Bonferroni-corrected 95% intervals.
pub fn one_query_exactness(m: usize, n_values: u32, trials_per_strategy: u64, seed: u64) -> Result<ExactnessReport> {
    let strategies = all_one_query_strategies(m, n_values);
    let confidence = 1.0 - 0.05 / strategies.len() as f64;
    let checks = strategies
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let sim = simulate_toy(m, n_values, 1, trials_per_strategy, StreamId::root(seed).index(i as u64).key(), |_| Box::new(s.clone()))?;
            Ok(StrategyCheck {
                query: s.query.clone(),
                exact: s.exact_success(m, n_values),
                simulated: Proportion::new(sim.success.successes, trials_per_strategy, confidence),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ExactnessReport { m, n_values, trials_per_strategy, confidence, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_examples() {
        assert_eq!(toy_answer(&[3, 1, 2], &[3, 1, 2]), vec![3, 1, 2]);
        assert_eq!(toy_answer(&[3, 1, 2], &[1, 1, 2]), vec![3, 0, 0]);
        assert_eq!(toy_answer(&[3, 1, 2], &[3, 2, 2]), vec![3, 1, 0]);
    }

    #[test]
    fn partially_informed_level_hides_the_suffix() {
        let mut fam = GuessTheNumbers::with_secret(vec![2, 1, 2], 2).unwrap();
        fam.reveal(3).unwrap();
        assert_eq!(fam.answer(1, &vec![2, 1, 2], 1, 0).unwrap(), vec![2, 0, 0]);
        assert_eq!(fam.answer(2, &vec![2, 1, 2], 1, 0).unwrap(), vec![2, 1, 0]);
        assert_eq!(fam.answer(3, &vec![2, 1, 2], 1, 0).unwrap(), vec![2, 1, 2]);
    }

    #[test]
    fn lazy_reveal_matches_eager() {
        let s = StreamId::root(4);
        let mut lazy = GuessTheNumbers::new(5, 7, s).unwrap();
        let mut eager = GuessTheNumbers::new(5, 7, s).unwrap();
        eager.reveal(5).unwrap();
        lazy.reveal(2).unwrap();
        assert_eq!(lazy.secret(), &eager.secret()[..2]);
        lazy.reveal(5).unwrap();
        assert_eq!(lazy.secret(), eager.secret());
    }

    #[test]
    fn strategy_enumeration_size() {
        // 4 queries, 3 reachable answers each, 4 outputs per answer.
        assert_eq!(all_one_query_strategies(2, 2).len(), 4 * 64);
        let best = all_one_query_strategies(2, 2)
            .iter()
            .map(|s| s.exact_success(2, 2))
            .fold(0.0, f64::max);
        // The answer always shows a_1; a matching b_1 (chance 1/2) also shows a_2,
        // otherwise a_2 is a coin flip: 1/2 + 1/4.
        assert_eq!(best, 0.75);
    }
}
