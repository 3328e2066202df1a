//! Pricing mechanisms, an exhaustive incentive-compatibility checker and
//! per-character rate calibration.
//!
//! A mechanism is incentive compatible when every tokenization of a string
//! has the same price, so misreporting the tokenization cannot pay.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::vocab::{TokenId, TokenSequence, Vocabulary};

/// Relative tolerance for treating two prices as equal.
pub const PRICE_TOLERANCE: f64 = 1e-9;

pub fn prices_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= PRICE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Fixed-point money in millionths of a currency unit. Reports use this so
/// that sums print exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Micros(pub i64);

impl Micros {
    pub fn from_f64(x: f64) -> Self {
        Micros((x * 1e6).round() as i64)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }
}

impl fmt::Display for Micros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:06}", abs / 1_000_000, abs % 1_000_000)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PricingMechanism {
    PerToken { r_o: f64 },
    PerCharacter { r_c: f64 },
    /// Price per occurrence of each character. Characters missing from the
    /// table cost nothing.
    CharTable { rates: BTreeMap<char, f64> },
}

fn check_rate(what: &str, r: f64) -> Result<f64> {
    if r.is_finite() && r >= 0.0 {
        Ok(r)
    } else {
        Err(Error::Pricing(format!("{what} must be finite and >= 0, got {r}")))
    }
}

impl PricingMechanism {
    pub fn per_token(r_o: f64) -> Result<Self> {
        Ok(PricingMechanism::PerToken {
            r_o: check_rate("r_o", r_o)?,
        })
    }

    pub fn per_character(r_c: f64) -> Result<Self> {
        Ok(PricingMechanism::PerCharacter {
            r_c: check_rate("r_c", r_c)?,
        })
    }

    pub fn char_table(rates: BTreeMap<char, f64>) -> Result<Self> {
        for (c, r) in &rates {
            check_rate(&format!("rate for {c:?}"), *r)?;
        }
        Ok(PricingMechanism::CharTable { rates })
    }

    /// Loads a JSON object mapping single characters to rates.
    pub fn load_char_table(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: BTreeMap<String, f64> = serde_json::from_str(&text)?;
        let mut rates = BTreeMap::new();
        for (k, v) in raw {
            let mut it = k.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => {
                    rates.insert(c, v);
                }
                _ => {
                    return Err(Error::Pricing(format!(
                        "char table key {k:?} is not a single character"
                    )))
                }
            }
        }
        Self::char_table(rates)
    }

    /// `per-token:r_o=<dec>` | `per-char:r_c=<dec>` | `char-table:<path>`.
    /// Relative table paths resolve against `base`.
    pub fn from_spec(spec: &str, base: Option<&Path>) -> Result<Self> {
        let spec = spec.trim();
        let (kind, arg) = spec
            .split_once(':')
            .ok_or_else(|| Error::parse("mechanism", spec, "expected <kind>:<args>"))?;
        let rate = |key: &str| -> Result<f64> {
            let v = arg
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| Error::parse("mechanism", spec, format!("expected {key}=<rate>")))?;
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::parse("mechanism", spec, e.to_string()))
        };
        match kind {
            "per-token" => Self::per_token(rate("r_o")?),
            "per-char" => Self::per_character(rate("r_c")?),
            "char-table" => {
                let p = Path::new(arg);
                match base {
                    Some(b) if p.is_relative() => Self::load_char_table(b.join(p)),
                    _ => Self::load_char_table(p),
                }
            }
            other => Err(Error::parse("mechanism", spec, format!("unknown kind {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PricingMechanism::PerToken { .. } => "per-token",
            PricingMechanism::PerCharacter { .. } => "per-char",
            PricingMechanism::CharTable { .. } => "char-table",
        }
    }

    /// Price of a reported sequence. EOS is free under every mechanism.
    pub fn price(&self, vocab: &Vocabulary, seq: &TokenSequence) -> Result<f64> {
        vocab.validate(seq)?;
        Ok(match self {
            PricingMechanism::PerToken { r_o } => r_o * seq.len() as f64,
            PricingMechanism::PerCharacter { r_c } => r_c * vocab.char_count(seq)? as f64,
            PricingMechanism::CharTable { rates } => seq
                .tokens()
                .iter()
                .filter_map(|&id| vocab.token_str(id))
                .flat_map(str::chars)
                .map(|c| rates.get(&c).copied().unwrap_or(0.0))
                .sum(),
        })
    }

    pub fn price_micros(&self, vocab: &Vocabulary, seq: &TokenSequence) -> Result<Micros> {
        self.price(vocab, seq).map(Micros::from_f64)
    }
}

impl fmt::Display for PricingMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PricingMechanism::PerToken { r_o } => write!(f, "per-token:r_o={r_o}"),
            PricingMechanism::PerCharacter { r_c } => write!(f, "per-char:r_c={r_c}"),
            PricingMechanism::CharTable { rates } => {
                write!(f, "char-table:{{")?;
                for (i, (c, r)) in rates.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{c}={r}")?;
                }
                write!(f, "}}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcWitness {
    pub string: String,
    pub first: TokenSequence,
    pub second: TokenSequence,
    pub first_price: f64,
    pub second_price: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum IcVerdict {
    Compatible {
        strings_checked: u64,
        tokenizations_checked: u64,
    },
    Violated(IcWitness),
}

impl IcVerdict {
    pub fn is_compatible(&self) -> bool {
        matches!(self, IcVerdict::Compatible { .. })
    }
}

struct IcScan<'a> {
    vocab: &'a Vocabulary,
    mechanism: &'a PricingMechanism,
    max_tokenizations: u64,
    strings: u64,
    tokenizations: u64,
}

impl IcScan<'_> {
    /// Compares every tokenization of `s` against `reference` (or against
    /// the first tokenization when there is none).
    fn check(&mut self, s: &str, reference: Option<TokenSequence>) -> Result<Option<IcWitness>> {
        self.strings += 1;
        let mut reference = match reference {
            Some(r) => {
                let p = self.mechanism.price(self.vocab, &r)?;
                Some((r, p))
            }
            None => None,
        };
        for seq in Lattice::build(s, self.vocab)?.into_tokenizations() {
            self.tokenizations += 1;
            if self.tokenizations > self.max_tokenizations {
                return Err(Error::Budget(format!(
                    "incentive-compatibility scan exceeded {} tokenizations",
                    self.max_tokenizations
                )));
            }
            let price = self.mechanism.price(self.vocab, &seq)?;
            match &reference {
                None => reference = Some((seq, price)),
                Some((r, rp)) => {
                    if !prices_equal(*rp, price) {
                        return Ok(Some(IcWitness {
                            string: s.to_string(),
                            first: r.clone(),
                            second: seq,
                            first_price: *rp,
                            second_price: price,
                        }));
                    }
                }
            }
        }
        Ok(None)
    }
}

/// Exhaustively checks price invariance for every string of at most
/// `max_len` characters over the vocabulary's alphabet.
///
/// Multi-character tokens are checked first, highest id first, comparing
/// the token on its own against every other tokenization of its rendering;
/// this finds the most informative witness early. Then all strings are
/// scanned in shortlex order.
pub fn is_incentive_compatible(
    mechanism: &PricingMechanism,
    vocab: &Vocabulary,
    max_len: usize,
    max_tokenizations: u64,
) -> Result<IcVerdict> {
    let mut scan = IcScan {
        vocab,
        mechanism,
        max_tokenizations,
        strings: 0,
        tokenizations: 0,
    };
    let mut tokens: Vec<(TokenId, &str)> = vocab
        .text_tokens()
        .filter(|(_, s)| (2..=max_len).contains(&s.chars().count()))
        .collect();
    tokens.sort_by_key(|t| std::cmp::Reverse(t.0));
    for &(id, s) in &tokens {
        if let Some(w) = scan.check(s, Some(TokenSequence::new(vec![id], false)))? {
            return Ok(IcVerdict::Violated(w));
        }
    }

    let alphabet = vocab.alphabet();
    let k = alphabet.len();
    for len in 0..=max_len {
        let mut digits = vec![0usize; len];
        loop {
            let s: String = digits.iter().map(|&d| alphabet[d]).collect();
            if vocab.id_of(&s).is_none() || len < 2 {
                if let Some(w) = scan.check(&s, None)? {
                    return Ok(IcVerdict::Violated(w));
                }
            }
            // Odometer increment; stops after the last string of this length.
            let mut i = len;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                digits[i] += 1;
                if digits[i] < k {
                    break;
                }
                digits[i] = 0;
            }
            if len == 0 || digits.iter().all(|&d| d == 0) {
                break;
            }
        }
    }
    Ok(IcVerdict::Compatible {
        strings_checked: scan.strings,
        tokenizations_checked: scan.tokenizations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Mean tokens per character over the calibration records.
    pub tokens_per_char: f64,
    pub r_c: f64,
}

/// Per-character rate matching a per-token rate on average: the mean of
/// per-record token/character ratios times `r_o`. Records are
/// `(tokens, characters)`; character counts must be positive.
pub fn calibrate_tpc(records: &[(usize, usize)], r_o: f64) -> Result<Calibration> {
    check_rate("r_o", r_o).map_err(|e| Error::Calibration(e.to_string()))?;
    if records.is_empty() {
        return Err(Error::Calibration("no calibration records".into()));
    }
    let mut sum = 0.0;
    for (i, &(tokens, chars)) in records.iter().enumerate() {
        if chars == 0 {
            return Err(Error::Calibration(format!("record {i} has zero characters")));
        }
        sum += tokens as f64 / chars as f64;
    }
    let tpc = sum / records.len() as f64;
    Ok(Calibration {
        tokens_per_char: tpc,
        r_c: r_o * tpc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_token_witness_on_reference_vocabulary() {
        let v = Vocabulary::reference_ab();
        let mech = PricingMechanism::per_token(1.0).unwrap();
        let verdict = is_incentive_compatible(&mech, &v, 3, 1_000_000).unwrap();
        let IcVerdict::Violated(w) = verdict else {
            panic!("per-token pricing must fail");
        };
        assert_eq!(w.string, "aab");
        assert_eq!(w.first, v.sequence_from_strs(&["aab"]).unwrap());
        assert_eq!(w.second, v.sequence_from_strs(&["a", "a", "b"]).unwrap());
        assert_eq!((w.first_price, w.second_price), (1.0, 3.0));
    }

    #[test]
    fn per_char_and_tables_are_compatible() {
        let v = Vocabulary::reference_ab();
        let mech = PricingMechanism::per_character(0.25).unwrap();
        assert!(is_incentive_compatible(&mech, &v, 6, 10_000_000).unwrap().is_compatible());
        let table = PricingMechanism::char_table([('a', 1.0), ('b', 2.5)].into_iter().collect()).unwrap();
        assert!(is_incentive_compatible(&table, &v, 6, 10_000_000).unwrap().is_compatible());
    }

    #[test]
    fn compatible_counts_cover_every_string() {
        let v = Vocabulary::reference_ab();
        let mech = PricingMechanism::per_character(1.0).unwrap();
        let IcVerdict::Compatible { strings_checked, .. } = is_incentive_compatible(&mech, &v, 3, 1_000_000).unwrap() else {
            panic!()
        };
        // 1 + 2 + 4 + 8 strings; aa, ab and aab are visited in the token pass.
        assert_eq!(strings_checked, 15);
    }

    #[test]
    fn zero_rate_is_trivially_compatible() {
        let v = Vocabulary::reference_ab();
        let mech = PricingMechanism::per_token(0.0).unwrap();
        assert!(is_incentive_compatible(&mech, &v, 4, 1_000_000).unwrap().is_compatible());
    }

    #[test]
    fn ic_budget() {
        let v = Vocabulary::reference_ab();
        let mech = PricingMechanism::per_character(1.0).unwrap();
        assert!(matches!(is_incentive_compatible(&mech, &v, 8, 10), Err(Error::Budget(_))));
    }

    #[test]
    fn prices() {
        let v = Vocabulary::reference_ab();
        let s = v.sequence_from_ids(&[4, 1, 5]).unwrap();
        assert_eq!(PricingMechanism::per_token(2.0).unwrap().price(&v, &s).unwrap(), 4.0);
        assert_eq!(PricingMechanism::per_character(0.5).unwrap().price(&v, &s).unwrap(), 2.0);
        let t = PricingMechanism::char_table([('b', 1.0)].into_iter().collect()).unwrap();
        assert_eq!(t.price(&v, &s).unwrap(), 2.0);
        assert!(PricingMechanism::per_token(-1.0).is_err());
        assert!(PricingMechanism::per_character(f64::NAN).is_err());
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(
            PricingMechanism::from_spec("per-token:r_o=0.002", None).unwrap(),
            PricingMechanism::PerToken { r_o: 0.002 }
        );
        assert_eq!(
            PricingMechanism::from_spec("per-char:r_c=1e-4", None).unwrap(),
            PricingMechanism::PerCharacter { r_c: 1e-4 }
        );
        assert!(PricingMechanism::from_spec("per-token:r_c=1", None).is_err());
        assert!(PricingMechanism::from_spec("flat:1", None).is_err());

        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t.json"), r#"{"a": 1.5, "b": 0.5}"#).unwrap();
        let m = PricingMechanism::from_spec("char-table:t.json", Some(dir.path())).unwrap();
        let v = Vocabulary::reference_ab();
        assert_eq!(m.price(&v, &v.sequence_from_strs(&["aab"]).unwrap()).unwrap(), 3.5);
        std::fs::write(dir.path().join("bad.json"), r#"{"ab": 1.5}"#).unwrap();
        assert!(PricingMechanism::from_spec("char-table:bad.json", Some(dir.path())).is_err());
    }

    #[test]
    fn calibration() {
        let c = calibrate_tpc(&[(4, 16), (1, 2)], 2.0).unwrap();
        assert!((c.tokens_per_char - 0.375).abs() < 1e-15);
        assert!((c.r_c - 0.75).abs() < 1e-15);
        assert!(calibrate_tpc(&[], 1.0).is_err());
        assert!(calibrate_tpc(&[(1, 0)], 1.0).is_err());
    }

    #[test]
    fn micros_format() {
        assert_eq!(Micros::from_f64(1.5).to_string(), "1.500000");
        assert_eq!(Micros::from_f64(-0.000002).to_string(), "-0.000002");
        assert_eq!(Micros::from_f64(0.1 + 0.2).0, 300_000);
    }
}
