//! Experiment configuration (TOML or JSON) and the resources it names.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::economics::CostModel;
use crate::error::{Error, Result};
use crate::harness::corpus::{load_prompts, PromptRecord};
use crate::lattice::greedy_tokenize;
use crate::model::{EosCheck, GenerativeModel, NgramModel, SamplingRule, TableModel, Temperature};
use crate::policy::ReportingPolicy;
use crate::pricing::PricingMechanism;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverchargeSettings {
    #[serde(default = "default_m_values")]
    pub m_values: Vec<usize>,
}

impl Default for OverchargeSettings {
    fn default() -> Self {
        OverchargeSettings {
            m_values: default_m_values(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfitSettings {
    #[serde(default = "default_profit_m")]
    pub m: usize,
    #[serde(default = "default_margins")]
    pub margins: Vec<f64>,
}

impl Default for ProfitSettings {
    fn default() -> Self {
        ProfitSettings {
            m: default_profit_m(),
            margins: default_margins(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginCdfSettings {
    #[serde(default = "default_rho_o")]
    pub rho_o: Vec<f64>,
}

impl Default for MarginCdfSettings {
    fn default() -> Self {
        MarginCdfSettings {
            rho_o: default_rho_o(),
        }
    }
}

fn default_m_values() -> Vec<usize> {
    (1..=5).collect()
}
fn default_profit_m() -> usize {
    3
}
fn default_margins() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}
fn default_rho_o() -> Vec<f64> {
    vec![0.2, 0.5, 0.8]
}
fn default_policies() -> Vec<String> {
    vec!["truthful".into()]
}
fn default_min_len() -> usize {
    20
}
fn default_max_len() -> usize {
    60
}
fn default_replications() -> usize {
    5
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub vocabulary: PathBuf,
    /// `table:<path>` or `ngram:order=<n>,alpha=<a>,corpus=<path>`.
    pub model: String,
    pub rule: SamplingRule,
    #[serde(default)]
    pub temperature: Temperature,
    #[serde(default)]
    pub eos_check: EosCheck,
    #[serde(default = "default_policies")]
    pub policies: Vec<String>,
    #[serde(default)]
    pub mechanisms: Vec<String>,
    pub costs: CostModel,
    pub prompts: PathBuf,
    /// Separate prompts for per-character calibration. Without it the
    /// prompt corpus is split in half.
    #[serde(default)]
    pub calibration_prompts: Option<PathBuf>,
    #[serde(default = "default_min_len")]
    pub min_output_tokens: usize,
    #[serde(default = "default_max_len")]
    pub max_output_tokens: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub write_ledgers: bool,
    #[serde(default)]
    pub overcharge: OverchargeSettings,
    #[serde(default)]
    pub profit: ProfitSettings,
    #[serde(default)]
    pub margin_cdf: MarginCdfSettings,
}

impl ExperimentConfig {
    /// Parses TOML or JSON by file extension (`.json` is JSON, anything
    /// else TOML).
    pub fn from_str_ext(text: &str, ext: &str) -> Result<Self> {
        if ext.eq_ignore_ascii_case("json") {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let cfg = Self::from_str_ext(&text, ext)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn validate(&self) -> Result<()> {
        self.costs.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.min_output_tokens == 0 || self.min_output_tokens > self.max_output_tokens {
            return Err(Error::Config(format!(
                "output length range {}..={} is empty or starts at 0",
                self.min_output_tokens, self.max_output_tokens
            )));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        for &r in self.profit.margins.iter().chain(&self.margin_cdf.rho_o) {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!("margins must lie in (0, 1), got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Table { path: PathBuf },
    Ngram { order: usize, alpha: f64, corpus: PathBuf },
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::parse("model", s, "expected table:<path> or ngram:<args>"))?;
        match kind {
            "table" => Ok(ModelSpec::Table { path: rest.into() }),
            "ngram" => {
                let (mut order, mut alpha, mut corpus) = (2usize, 0.1f64, None);
                for kv in rest.split(',').filter(|kv| !kv.trim().is_empty()) {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| Error::parse("model", s, format!("{kv:?} is not key=value")))?;
                    match k.trim() {
                        "order" => {
                            order = v
                                .parse()
                                .map_err(|_| Error::parse("model", s, "order must be an integer"))?
                        }
                        "alpha" => {
                            alpha = v
                                .parse()
                                .map_err(|_| Error::parse("model", s, "alpha must be a number"))?
                        }
                        "corpus" => corpus = Some(PathBuf::from(v.trim())),
                        other => return Err(Error::parse("model", s, format!("unknown key {other:?}"))),
                    }
                }
                let corpus = corpus.ok_or_else(|| Error::parse("model", s, "missing corpus=<path>"))?;
                Ok(ModelSpec::Ngram { order, alpha, corpus })
            }
            other => Err(Error::parse("model", s, format!("unknown model kind {other:?}"))),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ModelSpec {
    /// Loads the model and returns how many trailing prompt tokens it should
    /// be conditioned on (n-gram order - 1; table models see no prompt).
    pub fn load(&self, vocab: &Vocabulary, base: &Path) -> Result<(Box<dyn GenerativeModel>, usize)> {
        match self {
            ModelSpec::Table { path } => Ok((Box::new(TableModel::load(vocab, resolve(base, path))?), 0)),
            ModelSpec::Ngram { order, alpha, corpus } => {
                let records = NgramModel::read_corpus(vocab, resolve(base, corpus))?;
                let m = NgramModel::fit(vocab, &records, *order, *alpha)?;
                Ok((Box::new(m), order - 1))
            }
        }
    }
}

/// A configuration with every referenced resource loaded.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub vocab: Vocabulary,
    pub model: Box<dyn GenerativeModel>,
    pub context_tokens: usize,
    pub policies: Vec<ReportingPolicy>,
    pub mechanisms: Vec<PricingMechanism>,
    pub prompts: Vec<PromptRecord>,
    pub calibration_prompts: Option<Vec<PromptRecord>>,
}

impl Experiment {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (config, base) = ExperimentConfig::load(path)?;
        Self::from_config(config, &base)
    }

    pub fn from_config(config: ExperimentConfig, base: &Path) -> Result<Self> {
        config.validate()?;
        let vocab = Vocabulary::load(resolve(base, &config.vocabulary))?;
        let spec: ModelSpec = config.model.parse()?;
        let (model, context_tokens) = spec.load(&vocab, base)?;
        let policies = config
            .policies
            .iter()
            .map(|p| p.parse())
            .collect::<Result<Vec<ReportingPolicy>>>()?;
        let mechanisms = config
            .mechanisms
            .iter()
            .map(|m| PricingMechanism::from_spec(m, Some(base)))
            .collect::<Result<Vec<_>>>()?;
        let prompts = load_prompts(resolve(base, &config.prompts))?;
        let calibration_prompts = match &config.calibration_prompts {
            Some(p) => Some(load_prompts(resolve(base, p))?),
            None => None,
        };
        Ok(Experiment {
            config,
            base_dir: base.to_path_buf(),
            vocab,
            model,
            context_tokens,
            policies,
            mechanisms,
            prompts,
            calibration_prompts,
        })
    }

    /// Model context for a prompt: the last `context_tokens` tokens of its
    /// greedy tokenization, after dropping characters outside the alphabet.
    pub fn prompt_context(&self, prompt: &PromptRecord) -> Result<Vec<TokenId>> {
        if self.context_tokens == 0 {
            return Ok(Vec::new());
        }
        let text: String = prompt
            .prompt
            .chars()
            .filter(|&c| self.vocab.contains_char(c))
            .collect();
        let toks = greedy_tokenize(&text, &self.vocab)?;
        let t = toks.tokens();
        Ok(t[t.len().saturating_sub(self.context_tokens)..].to_vec())
    }

    pub fn out_dir(&self) -> PathBuf {
        resolve(&self.base_dir, &self.config.out_dir)
    }
}
