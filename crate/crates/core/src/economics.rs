//! Provider-side accounting: utility, margins, the profitability threshold
//! of plausibility-checked misreporting, overcharge and per-output ledgers.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::ReportOutcome;
use crate::pricing::{Micros, PricingMechanism};
use crate::vocab::{TokenSequence, Vocabulary};

/// `c_o` is the cost of generating one token, `c_v` the cost of one
/// plausibility verification pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub c_o: f64,
    #[serde(default)]
    pub c_v: f64,
}

impl CostModel {
    pub fn new(c_o: f64, c_v: f64) -> Result<Self> {
        let c = CostModel { c_o, c_v };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_o.is_finite() && self.c_o > 0.0) {
            return Err(Error::InvalidInput(format!("c_o must be positive, got {}", self.c_o)));
        }
        if !(self.c_v.is_finite() && self.c_v >= 0.0) {
            return Err(Error::InvalidInput(format!("c_v must be >= 0, got {}", self.c_v)));
        }
        Ok(())
    }

    pub fn generation_cost(&self, generated: &TokenSequence) -> f64 {
        self.c_o * generated.len() as f64
    }

    /// Per-token rate giving truthful margin `rho` under per-token pricing.
    pub fn rate_for_margin(&self, rho: f64) -> Result<f64> {
        if !(rho.is_finite() && rho < 1.0) {
            return Err(Error::InvalidInput(format!("margin must be < 1, got {rho}")));
        }
        Ok(self.c_o / (1.0 - rho))
    }
}

fn check_string_preserved(vocab: &Vocabulary, generated: &TokenSequence, reported: &TokenSequence) -> Result<()> {
    let a = vocab.render(generated)?;
    let b = vocab.render(reported)?;
    if a != b {
        return Err(Error::Integrity(format!(
            "reported tokens render {b:?}, generated render {a:?}"
        )));
    }
    Ok(())
}

/// Revenue minus generation cost minus, when charged, verification cost.
pub fn utility(
    vocab: &Vocabulary,
    generated: &TokenSequence,
    outcome: &ReportOutcome,
    mechanism: &PricingMechanism,
    costs: &CostModel,
) -> Result<f64> {
    check_string_preserved(vocab, generated, &outcome.reported)?;
    let rev = mechanism.price(vocab, &outcome.reported)?;
    let verify = if outcome.verification_cost_charged { costs.c_v } else { 0.0 };
    Ok(rev - costs.generation_cost(generated) - verify)
}

/// Truthful margin `1 - c_o·len(t) / r(t)`; undefined when the price is 0.
pub fn margin(
    vocab: &Vocabulary,
    generated: &TokenSequence,
    mechanism: &PricingMechanism,
    costs: &CostModel,
) -> Result<f64> {
    let r = mechanism.price(vocab, generated)?;
    if r == 0.0 {
        return Err(Error::UndefinedMargin(format!(
            "price of {:?} is zero",
            vocab.render(generated)?
        )));
    }
    Ok(1.0 - costs.generation_cost(generated) / r)
}

/// Smallest per-token margin at which plausibility-checked misreporting
/// with `m` splits pays: `1 - E[plausible]·m·c_o/c_v`. Free verification
/// makes it pay at any margin, so `c_v = 0` yields `-inf`.
pub fn profitability_threshold(expected_plausible: f64, m: usize, costs: &CostModel) -> Result<f64> {
    if !(0.0..=1.0).contains(&expected_plausible) {
        return Err(Error::InvalidInput(format!(
            "expected plausibility must lie in [0, 1], got {expected_plausible}"
        )));
    }
    costs.validate()?;
    if costs.c_v == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(1.0 - expected_plausible * m as f64 * costs.c_o / costs.c_v)
}

/// Expected gain per output from misreporting with `splits` extra tokens,
/// at per-token rate `c_o/(1-rho)`.
pub fn misreport_gain(rho: f64, splits: f64, costs: &CostModel) -> Result<f64> {
    Ok(costs.rate_for_margin(rho)? * splits - costs.c_v)
}

/// `100·(Σ len(reported) - Σ len(true)) / Σ len(true)`; zero when nothing
/// was generated.
pub fn overcharge_pct(true_seqs: &[TokenSequence], reported: &[TokenSequence]) -> Result<f64> {
    if true_seqs.len() != reported.len() {
        return Err(Error::InvalidInput(format!(
            "{} generated vs {} reported sequences",
            true_seqs.len(),
            reported.len()
        )));
    }
    let t: usize = true_seqs.iter().map(TokenSequence::len).sum();
    let r: usize = reported.iter().map(TokenSequence::len).sum();
    if t == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * (r as f64 - t as f64) / t as f64)
}

/// Token count a provider charging `alpha` less per token must report to
/// match the revenue of `len_true` tokens at the full rate:
/// `ceil(len_true / (1 - alpha))`.
pub fn undercut_equivalent_length(len_true: usize, alpha: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("discount must lie in [0, 1), got {alpha}")));
    }
    let x = len_true as f64 / (1.0 - alpha);
    // Guard against 10/(1-0.5) evaluating to 20.000000000000004.
    let r = x.round();
    Ok(if (x - r).abs() < 1e-9 { r as usize } else { x.ceil() as usize })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub prompt_id: String,
    pub len_true: usize,
    pub len_reported: usize,
    pub chars: usize,
    pub revenue: Micros,
    pub gen_cost: Micros,
    pub rep_cost: Micros,
    pub utility: Micros,
    /// `1 - gen_cost/revenue`; empty when revenue is zero.
    pub margin: Option<f64>,
}

impl LedgerEntry {
    pub fn compute(
        prompt_id: impl Into<String>,
        vocab: &Vocabulary,
        generated: &TokenSequence,
        outcome: &ReportOutcome,
        mechanism: &PricingMechanism,
        costs: &CostModel,
    ) -> Result<Self> {
        check_string_preserved(vocab, generated, &outcome.reported)?;
        let revenue = mechanism.price(vocab, &outcome.reported)?;
        let gen = costs.generation_cost(generated);
        let rep = if outcome.verification_cost_charged { costs.c_v } else { 0.0 };
        Ok(LedgerEntry {
            prompt_id: prompt_id.into(),
            len_true: generated.len(),
            len_reported: outcome.reported.len(),
            chars: vocab.char_count(generated)?,
            revenue: Micros::from_f64(revenue),
            gen_cost: Micros::from_f64(gen),
            rep_cost: Micros::from_f64(rep),
            utility: Micros::from_f64(revenue - gen - rep),
            margin: (revenue != 0.0).then(|| 1.0 - gen / revenue),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub outputs: usize,
    pub len_true: usize,
    pub len_reported: usize,
    pub chars: usize,
    pub revenue: Micros,
    pub gen_cost: Micros,
    pub rep_cost: Micros,
    pub utility: Micros,
    pub overcharge_pct: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn push(&mut self, e: LedgerEntry) {
        self.entries.push(e);
    }

    pub fn totals(&self) -> LedgerTotals {
        let mut t = LedgerTotals {
            outputs: self.entries.len(),
            ..Default::default()
        };
        for e in &self.entries {
            t.len_true += e.len_true;
            t.len_reported += e.len_reported;
            t.chars += e.chars;
            t.revenue.0 += e.revenue.0;
            t.gen_cost.0 += e.gen_cost.0;
            t.rep_cost.0 += e.rep_cost.0;
            t.utility.0 += e.utility.0;
        }
        if t.len_true > 0 {
            t.overcharge_pct = 100.0 * (t.len_reported as f64 - t.len_true as f64) / t.len_true as f64;
        }
        t
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "prompt_id",
            "len_true",
            "len_reported",
            "chars",
            "revenue",
            "gen_cost",
            "rep_cost",
            "utility",
            "margin",
        ])?;
        for e in &self.entries {
            out.write_record([
                e.prompt_id.clone(),
                e.len_true.to_string(),
                e.len_reported.to_string(),
                e.chars.to_string(),
                e.revenue.to_string(),
                e.gen_cost.to_string(),
                e.rep_cost.to_string(),
                e.utility.to_string(),
                e.margin.map(|m| m.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<ledger>", e))?;
        Ok(())
    }
}
