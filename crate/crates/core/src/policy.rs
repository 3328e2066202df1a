//! Reporting policies: how a provider turns the generated token sequence
//! into the sequence it bills for.
//!
//! * [`ReportingPolicy::Truthful`] reports what was generated.
//! * [`ReportingPolicy::RandomSplit`] repeatedly splits a uniformly chosen
//!   splittable token into two tokens, with no model access.
//! * [`ReportingPolicy::Heuristic`] splits the highest-id token into the
//!   pair with the largest minimum id, then runs a single plausibility pass
//!   and falls back to the truth if the candidate fails it.
//!
//! Every policy preserves the rendered string.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{apply_split, token_splits, valid_splits};
use crate::model::{is_plausible_with, EosCheck, GenerativeModel, SamplingRule, Temperature};
use crate::seeds::derive_seed;
use crate::vocab::{TokenId, TokenSequence, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ReportingPolicy {
    Truthful,
    RandomSplit {
        m: usize,
        seed: u64,
    },
    Heuristic {
        m: usize,
        rule: SamplingRule,
        temperature: Temperature,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportOutcome {
    pub reported: TokenSequence,
    pub splits_applied: usize,
    pub plausibility_checked: bool,
    pub plausibility_passed: Option<bool>,
    pub verification_cost_charged: bool,
}

impl ReportingPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            ReportingPolicy::Truthful => "truthful",
            ReportingPolicy::RandomSplit { .. } => "random",
            ReportingPolicy::Heuristic { .. } => "heuristic",
        }
    }

    pub fn iterations(&self) -> usize {
        match *self {
            ReportingPolicy::Truthful => 0,
            ReportingPolicy::RandomSplit { m, .. } | ReportingPolicy::Heuristic { m, .. } => m,
        }
    }

    /// Same policy with `m` iterations; truthful is unchanged.
    pub fn with_iterations(self, iterations: usize) -> Self {
        match self {
            ReportingPolicy::Truthful => self,
            ReportingPolicy::RandomSplit { seed, .. } => ReportingPolicy::RandomSplit {
                m: iterations,
                seed,
            },
            ReportingPolicy::Heuristic {
                rule, temperature, ..
            } => ReportingPolicy::Heuristic {
                m: iterations,
                rule,
                temperature,
            },
        }
    }

    pub fn charges_verification(&self) -> bool {
        matches!(self, ReportingPolicy::Heuristic { .. })
    }

    /// Applies the policy. The model is only consulted by the heuristic.
    pub fn apply<M: GenerativeModel + ?Sized>(
        &self,
        vocab: &Vocabulary,
        model: &M,
        generated: &TokenSequence,
    ) -> Result<ReportOutcome> {
        self.apply_with(vocab, model, generated, EosCheck::Include)
    }

    pub fn apply_with<M: GenerativeModel + ?Sized>(
        &self,
        vocab: &Vocabulary,
        model: &M,
        generated: &TokenSequence,
        eos: EosCheck,
    ) -> Result<ReportOutcome> {
        match *self {
            ReportingPolicy::Truthful => apply_truthful(vocab, generated),
            ReportingPolicy::RandomSplit { m, seed } => {
                apply_random_split(vocab, generated, m, seed)
            }
            ReportingPolicy::Heuristic {
                m,
                rule,
                temperature,
            } => apply_heuristic_with(vocab, generated, m, model, rule, temperature, eos),
        }
    }
}

impl fmt::Display for ReportingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReportingPolicy::Truthful => write!(f, "truthful"),
            ReportingPolicy::RandomSplit { m, seed } => write!(f, "random:m={m},seed={seed}"),
            ReportingPolicy::Heuristic {
                m,
                rule,
                temperature,
            } => write!(f, "heuristic:m={m},rule={rule},T={}", temperature.value()),
        }
    }
}

impl FromStr for ReportingPolicy {
    type Err = Error;

    /// `truthful` | `random:m=<int>,seed=<int>` |
    /// `heuristic:m=<int>,rule=<rule>,T=<float>`. Missing keys default to
    /// `m=1`, `seed=0`, `rule=topp:0.95`, `T=1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let mut m = 1usize;
        let mut seed = 0u64;
        let mut rule = SamplingRule::TopP(0.95);
        let mut temperature = Temperature::ONE;
        for kv in args.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::parse("policy", s, format!("{kv:?} is not key=value")))?;
            let bad = |e: String| Error::parse("policy", s, format!("{k}: {e}"));
            match k.trim() {
                "m" => m = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "seed" => {
                    seed = v
                        .parse()
                        .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
                }
                "rule" => rule = v.parse().map_err(|e: Error| bad(e.to_string()))?,
                "T" | "t" | "temperature" => {
                    let t: f64 = v
                        .parse()
                        .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
                    temperature = Temperature::new(t).map_err(|e| bad(e.to_string()))?;
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        match kind.to_ascii_lowercase().as_str() {
            "truthful" => Ok(ReportingPolicy::Truthful),
            "random" => Ok(ReportingPolicy::RandomSplit { m, seed }),
            "heuristic" => Ok(ReportingPolicy::Heuristic {
                m,
                rule,
                temperature,
            }),
            other => Err(Error::parse("policy", s, format!("unknown policy {other:?}"))),
        }
    }
}

impl TryFrom<String> for ReportingPolicy {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ReportingPolicy> for String {
    fn from(p: ReportingPolicy) -> String {
        p.to_string()
    }
}

pub fn apply_truthful(vocab: &Vocabulary, generated: &TokenSequence) -> Result<ReportOutcome> {
    vocab.validate(generated)?;
    Ok(ReportOutcome {
        reported: generated.clone(),
        splits_applied: 0,
        plausibility_checked: false,
        plausibility_passed: None,
        verification_cost_charged: false,
    })
}

/// Up to `m` rounds of: collect every valid split of the current sequence,
/// stop if there is none, otherwise apply one chosen uniformly at random.
/// Round `j` draws from a generator keyed by `(seed, j)`.
pub fn apply_random_split(
    vocab: &Vocabulary,
    generated: &TokenSequence,
    m: usize,
    seed: u64,
) -> Result<ReportOutcome> {
    vocab.validate(generated)?;
    let mut current = generated.clone();
    let mut applied = 0;
    for round in 0..m {
        let splits = valid_splits(vocab, &current)?;
        if splits.is_empty() {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, round as u64]));
        let pick = &splits[rng.gen_range(0..splits.len())];
        current = apply_split(&current, pick);
        applied += 1;
    }
    Ok(ReportOutcome {
        reported: current,
        splits_applied: applied,
        plausibility_checked: false,
        plausibility_passed: None,
        verification_cost_charged: false,
    })
}

/// Position of the highest token id; the earliest position wins ties.
fn highest_id_position(tokens: &[TokenId]) -> Option<usize> {
    let mut best: Option<(usize, TokenId)> = None;
    for (i, &id) in tokens.iter().enumerate() {
        if best.is_none_or(|(_, b)| id > b) {
            best = Some((i, id));
        }
    }
    best.map(|(i, _)| i)
}

/// The split of `id` maximizing the smaller of the two ids; ties go to the
/// larger other id, then to the smaller first id.
pub fn max_min_split(vocab: &Vocabulary, id: TokenId) -> Option<(TokenId, TokenId)> {
    token_splits(vocab, id).into_iter().max_by(|&(l1, r1), &(l2, r2)| {
        let key = |l: TokenId, r: TokenId| (l.min(r), l.max(r));
        key(l1, r1)
            .cmp(&key(l2, r2))
            .then_with(|| l2.cmp(&l1))
    })
}

/// The split candidate the heuristic builds before its plausibility check.
pub fn heuristic_candidate(
    vocab: &Vocabulary,
    generated: &TokenSequence,
    m: usize,
) -> Result<TokenSequence> {
    vocab.validate(generated)?;
    let mut candidate = generated.clone();
    for _ in 0..m {
        let Some(pos) = highest_id_position(candidate.tokens()) else {
            break;
        };
        let id = candidate.tokens()[pos];
        if vocab.token_chars(id) == Some(1) {
            break;
        }
        // A multi-character token with no two-token decomposition cannot be
        // split further either.
        let Some((left, right)) = max_min_split(vocab, id) else {
            break;
        };
        candidate.replace_with_pair(pos, left, right);
    }
    Ok(candidate)
}

pub fn apply_heuristic<M: GenerativeModel + ?Sized>(
    vocab: &Vocabulary,
    generated: &TokenSequence,
    m: usize,
    model: &M,
    rule: SamplingRule,
    temperature: Temperature,
) -> Result<ReportOutcome> {
    apply_heuristic_with(vocab, generated, m, model, rule, temperature, EosCheck::Include)
}

pub fn apply_heuristic_with<M: GenerativeModel + ?Sized>(
    vocab: &Vocabulary,
    generated: &TokenSequence,
    m: usize,
    model: &M,
    rule: SamplingRule,
    temperature: Temperature,
    eos: EosCheck,
) -> Result<ReportOutcome> {
    let candidate = heuristic_candidate(vocab, generated, m)?;
    let passed = is_plausible_with(model, &candidate, rule, temperature, eos)?;
    let reported = if passed { candidate } else { generated.clone() };
    Ok(ReportOutcome {
        splits_applied: reported.len() - generated.len(),
        reported,
        plausibility_checked: true,
        plausibility_passed: Some(passed),
        verification_cost_charged: true,
    })
}

/// True when every token renders a single character; no policy can change
/// such a sequence.
pub fn single_char_fixed_point(vocab: &Vocabulary, seq: &TokenSequence) -> Result<bool> {
    vocab.validate(seq)?;
    Ok(seq
        .tokens()
        .iter()
        .all(|&id| vocab.token_chars(id) == Some(1)))
}
