//! Synthetic autoregressive models with exact next-token distributions, and
//! the sampling rules that decide which continuations are plausible.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, TokenSequence, Vocabulary};

/// Probability vectors must sum to one within this tolerance.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Slack used when comparing a cumulative mass against the top-p target.
const MASS_SLACK: f64 = 1e-12;

/// Relative slack for the sequence-probability threshold.
const THRESHOLD_SLACK: f64 = 1e-9;

/// A model exposing the exact distribution over the next token.
///
/// `distribution` returns a vector indexed by token id, EOS included. The
/// returned vectors must be non-negative, sum to one and depend only on the
/// prefix.
pub trait GenerativeModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn eos(&self) -> Option<TokenId>;

    fn distribution(&self, prefix: &[TokenId]) -> Vec<f64>;
}

impl<M: GenerativeModel + ?Sized> GenerativeModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos(&self) -> Option<TokenId> {
        (**self).eos()
    }
    fn distribution(&self, prefix: &[TokenId]) -> Vec<f64> {
        (**self).distribution(prefix)
    }
}

impl<M: GenerativeModel + ?Sized> GenerativeModel for Box<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos(&self) -> Option<TokenId> {
        (**self).eos()
    }
    fn distribution(&self, prefix: &[TokenId]) -> Vec<f64> {
        (**self).distribution(prefix)
    }
}

pub(crate) fn check_distribution(dist: &[f64], size: usize) -> Result<()> {
    if dist.len() != size {
        return Err(Error::ModelContract(format!(
            "distribution has {} entries, expected {size}",
            dist.len()
        )));
    }
    if let Some((i, p)) = dist
        .iter()
        .enumerate()
        .find(|(_, p)| !p.is_finite() || **p < 0.0)
    {
        return Err(Error::ModelContract(format!(
            "entry {i} is {p}, not a probability"
        )));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::ModelContract(format!(
            "distribution sums to {sum}, not 1"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && t > 0.0 {
            Ok(Temperature(t))
        } else {
            Err(Error::InvalidInput(format!(
                "temperature must be positive and finite, got {t}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature::ONE
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;
    fn try_from(t: f64) -> Result<Self> {
        Temperature::new(t)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// Applies `q_i ∝ p_i^(1/T)`; computed in log space so small temperatures
/// do not underflow the whole vector.
pub fn apply_temperature(dist: &[f64], t: Temperature) -> Vec<f64> {
    if t.0 == 1.0 {
        return dist.to_vec();
    }
    let inv = 1.0 / t.0;
    let logs: Vec<f64> = dist
        .iter()
        .map(|&p| if p > 0.0 { p.ln() * inv } else { f64::NEG_INFINITY })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return dist.to_vec();
    }
    let exps: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Validated next-token distribution at temperature `t`.
pub fn next_dist<M: GenerativeModel + ?Sized>(
    model: &M,
    prefix: &[TokenId],
    t: Temperature,
) -> Result<Vec<f64>> {
    let raw = model.distribution(prefix);
    check_distribution(&raw, model.vocab_size())?;
    Ok(apply_temperature(&raw, t))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SamplingRule {
    TopP(f64),
    TopK(usize),
    SequenceThreshold(f64),
    Unrestricted,
}

impl SamplingRule {
    pub fn top_p(p: f64) -> Result<Self> {
        if p > 0.0 && p < 1.0 {
            Ok(SamplingRule::TopP(p))
        } else {
            Err(Error::InvalidInput(format!("top-p needs p in (0,1), got {p}")))
        }
    }

    pub fn top_k(k: usize) -> Result<Self> {
        if k >= 1 {
            Ok(SamplingRule::TopK(k))
        } else {
            Err(Error::InvalidInput("top-k needs k >= 1".into()))
        }
    }

    pub fn threshold(eps: f64) -> Result<Self> {
        if eps > 0.0 && eps <= 1.0 {
            Ok(SamplingRule::SequenceThreshold(eps))
        } else {
            Err(Error::InvalidInput(format!(
                "threshold needs epsilon in (0,1], got {eps}"
            )))
        }
    }

    /// True for rules defined by a per-step allowed set.
    pub fn is_stepwise(&self) -> bool {
        matches!(self, SamplingRule::TopP(_) | SamplingRule::TopK(_))
    }
}

impl fmt::Display for SamplingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingRule::TopP(p) => write!(f, "topp:{p}"),
            SamplingRule::TopK(k) => write!(f, "topk:{k}"),
            SamplingRule::SequenceThreshold(e) => write!(f, "thresh:{e}"),
            SamplingRule::Unrestricted => write!(f, "unrestricted"),
        }
    }
}

impl FromStr for SamplingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("unrestricted") || s.eq_ignore_ascii_case("none") {
            return Ok(SamplingRule::Unrestricted);
        }
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::parse("sampling rule", s, "expected <kind>:<value>"))?;
        let bad = |e: &dyn fmt::Display| Error::parse("sampling rule", s, e.to_string());
        match kind.to_ascii_lowercase().as_str() {
            "topp" | "top-p" => SamplingRule::top_p(arg.parse().map_err(|e| bad(&e))?),
            "topk" | "top-k" => SamplingRule::top_k(arg.parse().map_err(|e| bad(&e))?),
            "thresh" | "threshold" => SamplingRule::threshold(arg.parse().map_err(|e| bad(&e))?),
            other => Err(Error::parse("sampling rule", s, format!("unknown kind {other:?}"))),
        }
    }
}

impl TryFrom<String> for SamplingRule {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SamplingRule> for String {
    fn from(r: SamplingRule) -> String {
        r.to_string()
    }
}

/// Whether a trailing EOS terminator is part of what gets audited.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EosCheck {
    #[default]
    Include,
    Ignore,
}

/// Token ids ranked by descending probability, ties by ascending id.
fn ranked(dist: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    order
}

/// Allowed set of a per-step rule over an explicit distribution, in rank
/// order. Zero-probability tokens are never allowed.
pub fn allowed_from_dist(dist: &[f64], rule: SamplingRule) -> Result<Vec<TokenId>> {
    let order = ranked(dist);
    let out = match rule {
        SamplingRule::TopP(p) => {
            let mut acc = 0.0;
            let mut out = Vec::new();
            for i in order {
                if dist[i] <= 0.0 {
                    break;
                }
                acc += dist[i];
                out.push(TokenId(i as u32));
                if acc >= p - MASS_SLACK {
                    break;
                }
            }
            out
        }
        SamplingRule::TopK(k) => {
            if k >= dist.len() {
                return Err(Error::InvalidInput(format!(
                    "top-k needs k <= |V|-1 = {}, got {k}",
                    dist.len().saturating_sub(1)
                )));
            }
            order
                .into_iter()
                .take(k)
                .filter(|&i| dist[i] > 0.0)
                .map(|i| TokenId(i as u32))
                .collect()
        }
        SamplingRule::Unrestricted => order
            .into_iter()
            .filter(|&i| dist[i] > 0.0)
            .map(|i| TokenId(i as u32))
            .collect(),
        SamplingRule::SequenceThreshold(_) => {
            return Err(Error::UnsupportedRule(rule.to_string()))
        }
    };
    Ok(out)
}

pub fn allowed_set<M: GenerativeModel + ?Sized>(
    model: &M,
    prefix: &[TokenId],
    rule: SamplingRule,
    t: Temperature,
) -> Result<Vec<TokenId>> {
    if let SamplingRule::SequenceThreshold(_) = rule {
        return Err(Error::UnsupportedRule(rule.to_string()));
    }
    let dist = next_dist(model, prefix, t)?;
    allowed_from_dist(&dist, rule)
}

/// Product of the step conditionals, including the EOS step when the
/// sequence is terminated.
pub fn sequence_prob<M: GenerativeModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
    t: Temperature,
) -> Result<f64> {
    sequence_prob_with(model, seq, t, EosCheck::Include)
}

pub fn sequence_prob_with<M: GenerativeModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
    t: Temperature,
    eos: EosCheck,
) -> Result<f64> {
    let toks = seq.tokens();
    let mut prob = 1.0;
    for i in 0..toks.len() {
        let dist = next_dist(model, &toks[..i], t)?;
        prob *= lookup(&dist, toks[i])?;
        if prob == 0.0 {
            return Ok(0.0);
        }
    }
    if seq.is_terminated() && eos == EosCheck::Include {
        if let Some(e) = model.eos() {
            let dist = next_dist(model, toks, t)?;
            prob *= lookup(&dist, e)?;
        }
    }
    Ok(prob)
}

fn lookup(dist: &[f64], id: TokenId) -> Result<f64> {
    dist.get(id.index()).copied().ok_or_else(|| {
        Error::InvalidSequence(format!("token id {id} outside the model's vocabulary"))
    })
}

/// `prob >= eps` with a small relative slack so that exact products such as
/// `((1-δ)/n)^n` are not rejected by rounding.
pub fn meets_threshold(prob: f64, eps: f64) -> bool {
    prob >= eps * (1.0 - THRESHOLD_SLACK)
}

pub fn is_plausible<M: GenerativeModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
    rule: SamplingRule,
    t: Temperature,
) -> Result<bool> {
    is_plausible_with(model, seq, rule, t, EosCheck::Include)
}

pub fn is_plausible_with<M: GenerativeModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
    rule: SamplingRule,
    t: Temperature,
    eos: EosCheck,
) -> Result<bool> {
    match rule {
        SamplingRule::SequenceThreshold(e) => {
            Ok(meets_threshold(sequence_prob_with(model, seq, t, eos)?, e))
        }
        SamplingRule::Unrestricted => Ok(sequence_prob_with(model, seq, t, eos)? > 0.0),
        SamplingRule::TopP(_) | SamplingRule::TopK(_) => {
            let toks = seq.tokens();
            for i in 0..toks.len() {
                if !allowed_set(model, &toks[..i], rule, t)?.contains(&toks[i]) {
                    return Ok(false);
                }
            }
            if seq.is_terminated() && eos == EosCheck::Include {
                if let Some(e) = model.eos() {
                    return Ok(allowed_set(model, toks, rule, t)?.contains(&e));
                }
            }
            Ok(true)
        }
    }
}

/// Ancestral sampling restricted to the rule's allowed set at each step.
/// Stops at EOS or after `max_len` tokens.
pub fn sample_output<M: GenerativeModel + ?Sized>(
    model: &M,
    rule: SamplingRule,
    t: Temperature,
    max_len: usize,
    seed: u64,
) -> Result<TokenSequence> {
    if max_len == 0 {
        return Err(Error::InvalidInput("max_len must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TokenSequence::empty();
    while out.len() < max_len {
        let dist = next_dist(model, out.tokens(), t)?;
        let candidates = match rule {
            SamplingRule::SequenceThreshold(_) => {
                allowed_from_dist(&dist, SamplingRule::Unrestricted)?
            }
            r => allowed_from_dist(&dist, r)?,
        };
        if candidates.is_empty() {
            return Err(Error::ModelContract(format!(
                "empty allowed set after {} tokens",
                out.len()
            )));
        }
        let mass: f64 = candidates.iter().map(|id| dist[id.index()]).sum();
        let mut u = rng.gen::<f64>() * mass;
        let mut pick = *candidates.last().expect("non-empty");
        for &id in &candidates {
            u -= dist[id.index()];
            if u < 0.0 {
                pick = id;
                break;
            }
        }
        if model.eos() == Some(pick) {
            out.set_terminated(true);
            break;
        }
        out.push(pick);
    }
    Ok(out)
}

/// A model whose prefixes are implicitly preceded by a fixed context, used
/// to condition a model on a prompt.
pub struct Conditioned<'a, M: ?Sized> {
    base: &'a M,
    context: Vec<TokenId>,
}

impl<'a, M: GenerativeModel + ?Sized> Conditioned<'a, M> {
    pub fn new(base: &'a M, context: Vec<TokenId>) -> Self {
        Conditioned { base, context }
    }
}

impl<M: GenerativeModel + ?Sized> GenerativeModel for Conditioned<'_, M> {
    fn vocab_size(&self) -> usize {
        self.base.vocab_size()
    }
    fn eos(&self) -> Option<TokenId> {
        self.base.eos()
    }
    fn distribution(&self, prefix: &[TokenId]) -> Vec<f64> {
        if self.context.is_empty() {
            return self.base.distribution(prefix);
        }
        let mut full = Vec::with_capacity(self.context.len() + prefix.len());
        full.extend_from_slice(&self.context);
        full.extend_from_slice(prefix);
        self.base.distribution(&full)
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct TableEntry {
    prefix: Vec<u32>,
    dist: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TableItem {
    Entry(TableEntry),
    Default { default: Vec<f64> },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TableFile {
    Object {
        #[serde(default)]
        entries: Vec<TableEntry>,
        default: Vec<f64>,
    },
    List(Vec<TableItem>),
}

/// Explicit prefix → distribution table with a fallback distribution.
#[derive(Clone, Debug)]
pub struct TableModel {
    size: usize,
    eos: Option<TokenId>,
    table: HashMap<Vec<TokenId>, Vec<f64>>,
    default: Vec<f64>,
}

impl TableModel {
    pub fn new(vocab: &Vocabulary, default: Vec<f64>) -> Result<Self> {
        check_distribution(&default, vocab.len())?;
        Ok(TableModel {
            size: vocab.len(),
            eos: vocab.eos(),
            table: HashMap::new(),
            default,
        })
    }

    pub fn insert(&mut self, prefix: Vec<TokenId>, dist: Vec<f64>) -> Result<()> {
        check_distribution(&dist, self.size)?;
        self.table.insert(prefix, dist);
        Ok(())
    }

    pub fn with(mut self, prefix: &[u32], dist: Vec<f64>) -> Result<Self> {
        self.insert(prefix.iter().copied().map(TokenId).collect(), dist)?;
        Ok(self)
    }

    pub fn from_json_str(vocab: &Vocabulary, json: &str) -> Result<Self> {
        let file: TableFile = serde_json::from_str(json)?;
        let (entries, default) = match file {
            TableFile::Object { entries, default } => (entries, default),
            TableFile::List(items) => {
                let mut entries = Vec::new();
                let mut default = None;
                for item in items {
                    match item {
                        TableItem::Entry(e) => entries.push(e),
                        TableItem::Default { default: d } => default = Some(d),
                    }
                }
                let default = default.ok_or_else(|| {
                    Error::ModelContract("table model file has no default entry".into())
                })?;
                (entries, default)
            }
        };
        let mut model = TableModel::new(vocab, default)?;
        for e in entries {
            let prefix = vocab.sequence_from_ids(&e.prefix)?;
            if prefix.is_terminated() {
                return Err(Error::ModelContract("table prefix contains EOS".into()));
            }
            model.insert(prefix.tokens().to_vec(), e.dist)?;
        }
        Ok(model)
    }

    pub fn load(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(vocab, &text)
    }
}

impl GenerativeModel for TableModel {
    fn vocab_size(&self) -> usize {
        self.size
    }
    fn eos(&self) -> Option<TokenId> {
        self.eos
    }
    fn distribution(&self, prefix: &[TokenId]) -> Vec<f64> {
        self.table
            .get(prefix)
            .unwrap_or(&self.default)
            .clone()
    }
}

#[derive(Clone, Debug, Default)]
struct ContextCounts {
    next: HashMap<TokenId, u64>,
    total: u64,
}

/// Token n-gram model with additive smoothing:
/// `P(w | ctx) = (count(ctx, w) + α) / (count(ctx) + α·|V|)`, where `ctx`
/// is the last `order - 1` tokens (fewer at the start of a sequence).
#[derive(Clone, Debug)]
pub struct NgramModel {
    order: usize,
    alpha: f64,
    size: usize,
    eos: Option<TokenId>,
    counts: HashMap<Vec<TokenId>, ContextCounts>,
}

impl NgramModel {
    pub fn fit(
        vocab: &Vocabulary,
        corpus: &[TokenSequence],
        order: usize,
        alpha: f64,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidInput("n-gram order must be >= 1".into()));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidInput(format!(
                "smoothing constant must be positive, got {alpha}"
            )));
        }
        let mut counts: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
        for record in corpus {
            vocab.validate(record)?;
            let mut ids = record.tokens().to_vec();
            if record.is_terminated() {
                if let Some(e) = vocab.eos() {
                    ids.push(e);
                }
            }
            for i in 0..ids.len() {
                let start = i.saturating_sub(order - 1);
                let entry = counts.entry(ids[start..i].to_vec()).or_default();
                *entry.next.entry(ids[i]).or_default() += 1;
                entry.total += 1;
            }
        }
        Ok(NgramModel {
            order,
            alpha,
            size: vocab.len(),
            eos: vocab.eos(),
            counts,
        })
    }

    /// Reads a token corpus: one record per line, ids separated by commas or
    /// whitespace, optionally wrapped in brackets. Blank lines are skipped.
    pub fn read_corpus(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<Vec<TokenSequence>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_corpus(vocab, &text)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

pub fn parse_corpus(vocab: &Vocabulary, text: &str) -> Result<Vec<TokenSequence>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let inner = line.trim_start_matches('[').trim_end_matches(']');
            let ids = inner
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<u32>()
                        .map_err(|e| Error::parse("corpus record", line, e.to_string()))
                })
                .collect::<Result<Vec<u32>>>()?;
            vocab.sequence_from_ids(&ids)
        })
        .collect()
}

impl GenerativeModel for NgramModel {
    fn vocab_size(&self) -> usize {
        self.size
    }
    fn eos(&self) -> Option<TokenId> {
        self.eos
    }
    fn distribution(&self, prefix: &[TokenId]) -> Vec<f64> {
        let start = prefix.len().saturating_sub(self.order - 1);
        let denom_smooth = self.alpha * self.size as f64;
        match self.counts.get(&prefix[start..]) {
            None => vec![1.0 / self.size as f64; self.size],
            Some(ctx) => {
                let denom = ctx.total as f64 + denom_smooth;
                (0..self.size)
                    .map(|i| {
                        let c = ctx.next.get(&TokenId(i as u32)).copied().unwrap_or(0);
                        (c as f64 + self.alpha) / denom
                    })
                    .collect()
            }
        }
    }
}
