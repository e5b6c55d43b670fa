//! The resisting-oracle game for any information-hiding family.
//!
//! A policy is played against two copies of the family in lockstep: the
//! hybrid copy reveals hidden piece `i` only at round `i` and answers round-`i`
//! queries with the level-`i` oracle, while the true copy answers everything
//! with the fully informed oracle. Both copies share random streams, so the
//! first round at which any answer differs is exactly the first round where
//! the two transcripts part ways. From that round on the policy is forked and
//! the fork continues against the true oracle alone.

use serde::{Deserialize, Serialize};

use crate::error::{ClbError, Result};
use crate::optimizers::QueryPolicy;

/// Summary of one query kept in a transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDigest {
    /// FNV-1a hash of the query's canonical encoding.
    pub hash: u64,
    /// Scalar summary of the query (norm for points).
    pub size: f64,
    /// Scalar summary of the true answer (value for function oracles).
    pub answer: f64,
    /// Whether hybrid and true answers were identical.
    pub agrees: bool,
}

pub(crate) fn fnv1a_words(words: impl IntoIterator<Item = u64>) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for w in words {
        for b in w.to_le_bytes() {
            h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}

/// A chain of partially informed functions `f_1, ..., f_m`.
pub trait HidingFamily {
    type Query: Clone + Send;
    type Answer: Send;

    /// Number of hidden pieces `m`.
    fn steps(&self) -> usize;
    /// Make level `level` answerable; the fully informed copy ignores this.
    fn reveal(&mut self, level: usize) -> Result<()>;
    /// Answer of the level-`level` oracle to query `index` of round `round`.
    fn answer(&self, level: usize, query: &Self::Query, round: usize, index: usize) -> Result<Self::Answer>;
    fn same_answer(a: &Self::Answer, b: &Self::Answer) -> bool;
    /// Whether `output` is a correct output for `f_m`.
    fn is_correct(&self, output: &Self::Query) -> Result<bool>;
    fn digest(query: &Self::Query, answer: &Self::Answer, agrees: bool) -> QueryDigest;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Oracle level used by the hybrid copy.
    pub hybrid_level: usize,
    pub queries: Vec<QueryDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameTranscript {
    pub policy: String,
    pub steps: usize,
    pub rounds_allowed: usize,
    pub per_round: usize,
    /// Rounds of the true run.
    pub rounds: Vec<RoundRecord>,
    /// First round whose hybrid and true answers differ.
    pub divergence_round: Option<usize>,
    /// Fewer than `steps` rounds were allowed.
    pub sub_budget: bool,
    pub output_digest: u64,
    pub success: bool,
    /// Correctness of the hybrid run's output.
    pub hybrid_success: bool,
}

/// Plays `policy` for at most `rounds` rounds of at most `per_round` queries.
pub fn play<F>(
    mut policy: Box<dyn QueryPolicy<F::Query, F::Answer>>,
    hybrid: &mut F,
    truth: &mut F,
    rounds: usize,
    per_round: usize,
    encode: impl Fn(&F::Query) -> Vec<u64>,
) -> Result<GameTranscript>
where
    F: HidingFamily,
{
    let m = truth.steps();
    if rounds > m {
        return Err(ClbError::Budget(format!("{rounds} rounds exceed the {m} hidden steps")));
    }
    if per_round < 1 {
        return Err(ClbError::Budget("at least one query per round is required".into()));
    }
    truth.reveal(m)?;
    let name = policy.name();
    let mut forked: Option<Box<dyn QueryPolicy<F::Query, F::Answer>>> = None;
    let mut divergence_round = None;
    let mut records = Vec::with_capacity(rounds);

    for round in 1..=rounds {
        hybrid.reveal(round)?;
        if let Some(true_policy) = forked.as_mut() {
            // Transcripts already differ: hybrid and true runs proceed separately.
            let hq = policy.propose();
            check_round(&hq, per_round, round)?;
            let ha = answer_all(hybrid, round, &hq, round)?;
            policy.observe(&hq, &ha)?;

            let tq = true_policy.propose();
            check_round(&tq, per_round, round)?;
            let ta = answer_all(truth, m, &tq, round)?;
            let queries = tq.iter().zip(&ta).map(|(q, a)| F::digest(q, a, false)).collect();
            true_policy.observe(&tq, &ta)?;
            records.push(RoundRecord { round, hybrid_level: round, queries });
            continue;
        }

        let qs = policy.propose();
        check_round(&qs, per_round, round)?;
        if qs.is_empty() {
            break;
        }
        let ha = answer_all(hybrid, round, &qs, round)?;
        let ta = answer_all(truth, m, &qs, round)?;
        let agree: Vec<bool> = ha.iter().zip(&ta).map(|(a, b)| F::same_answer(a, b)).collect();
        let queries = qs.iter().zip(&ta).zip(&agree).map(|((q, a), &ok)| F::digest(q, a, ok)).collect();
        records.push(RoundRecord { round, hybrid_level: round, queries });
        if agree.iter().all(|&ok| ok) {
            policy.observe(&qs, &ha)?;
        } else {
            divergence_round = Some(round);
            let mut true_policy = policy.fork();
            true_policy.observe(&qs, &ta)?;
            policy.observe(&qs, &ha)?;
            forked = Some(true_policy);
        }
    }

    let hybrid_out = policy.output();
    let true_out = forked.as_ref().map_or_else(|| hybrid_out.clone(), |p| p.output());
    let success = truth.is_correct(&true_out)?;
    let hybrid_success = if forked.is_some() { truth.is_correct(&hybrid_out)? } else { success };
    Ok(GameTranscript {
        policy: name,
        steps: m,
        rounds_allowed: rounds,
        per_round,
        rounds: records,
        divergence_round,
        sub_budget: rounds < m,
        output_digest: fnv1a_words(encode(&true_out)),
        success,
        hybrid_success,
    })
}

fn check_round<Q>(qs: &[Q], per_round: usize, round: usize) -> Result<()> {
    if qs.len() > per_round {
        return Err(ClbError::Budget(format!(
            "round {round}: {} queries exceed the per-round limit {per_round}",
            qs.len()
        )));
    }
    Ok(())
}

fn answer_all<F: HidingFamily>(fam: &F, level: usize, qs: &[F::Query], round: usize) -> Result<Vec<F::Answer>> {
    qs.iter().enumerate().map(|(i, q)| fam.answer(level, q, round, i)).collect()
}
