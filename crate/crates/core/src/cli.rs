//! Command-line front end. `main` only maps results to exit codes.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::gadget::{
    build_gadget, threshold_gap_check, verify_reduction, DirectedGraph, Gadget, GadgetVariant,
};
use crate::harness::sweeps::{write_margin, write_overcharge, write_profit};
use crate::harness::{run_margin_cdf, run_overcharge_sweep, run_profit_sweep, Experiment, ModelSpec};
use crate::lattice::{count_tokenizations, enumerate_tokenizations, greedy_tokenize};
use crate::model::{
    is_plausible_with, sequence_prob_with, EosCheck, GenerativeModel, SamplingRule, Temperature,
};
use crate::oracle::{
    longest_plausible_stats, max_revenue_tokenization, OracleBudget, SearchOptions,
    DEFAULT_HAMILTONIAN_LIMIT,
};
use crate::policy::ReportingPolicy;
use crate::pricing::{calibrate_tpc, is_incentive_compatible, IcVerdict, PricingMechanism};
use crate::vocab::{TokenSequence, Vocabulary};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    #[default]
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "tokenaudit", version, about = "Audit and price tokenized LLM outputs")]
pub struct Cli {
    /// Experiment configuration (TOML or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration and policy seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for reports.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Worker threads for simulations (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize a string: greedy longest match, all tokenizations, or their count.
    Tokenize(TokenizeArgs),
    /// Apply a reporting policy to a token sequence and print the trace.
    Misreport(MisreportArgs),
    /// Check whether a reported sequence is plausible under a model and rule.
    Audit(AuditArgs),
    /// Price a sequence under a mechanism.
    Price(PriceArgs),
    /// Exhaustively test a mechanism for incentive compatibility.
    IcCheck(IcCheckArgs),
    /// Calibrate a per-character rate from a token corpus.
    CalibrateTpc(CalibrateArgs),
    /// Exact search: longest plausible or revenue-maximizing tokenization.
    Oracle(OracleArgs),
    /// Hamiltonian-path reduction gadgets.
    Hardness(HardnessArgs),
    /// Run a simulation sweep from the configuration.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct VocabArg {
    /// Vocabulary JSON file, or `V_ab` for the built-in reference vocabulary.
    #[arg(long, default_value = "V_ab")]
    pub vocab: String,
}

#[derive(Debug, Args)]
pub struct SeqArgs {
    /// Token ids, comma or space separated; a trailing EOS id terminates.
    #[arg(long, conflicts_with = "tokens")]
    pub ids: Option<String>,
    /// Token strings separated by `|`; `<eos>` terminates.
    #[arg(long)]
    pub tokens: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TokenizeMode {
    Greedy,
    Enumerate,
    Count,
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    #[command(flatten)]
    pub vocab: VocabArg,
    #[arg(long, value_enum, default_value_t = TokenizeMode::Greedy)]
    pub mode: TokenizeMode,
    /// Stop enumerating after this many tokenizations.
    #[arg(long, default_value_t = 10_000)]
    pub limit: usize,
    pub text: String,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// `table:<path>`, `ngram:order=<n>,alpha=<a>,corpus=<path>` or
    /// `gadget:<graph path>,variant=<topp|topk|thresh[:δ]>`.
    #[arg(long)]
    pub model: Option<String>,
    /// `topp:<p>`, `topk:<k>`, `thresh:<ε>` or `unrestricted`.
    #[arg(long)]
    pub rule: Option<SamplingRule>,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Leave the EOS step out of the plausibility check.
    #[arg(long)]
    pub ignore_eos: bool,
}

#[derive(Debug, Args)]
pub struct MisreportArgs {
    #[command(flatten)]
    pub vocab: VocabArg,
    #[command(flatten)]
    pub model: ModelArgs,
    /// `truthful`, `random:m=<int>,seed=<int>` or `heuristic:m=<int>,rule=<rule>,T=<float>`.
    #[arg(long)]
    pub policy: ReportingPolicy,
    #[command(flatten)]
    pub seq: SeqArgs,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub vocab: VocabArg,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub seq: SeqArgs,
}

#[derive(Debug, Args)]
pub struct PriceArgs {
    #[command(flatten)]
    pub vocab: VocabArg,
    /// `per-token:r_o=<dec>`, `per-char:r_c=<dec>` or `char-table:<path>`.
    #[arg(long)]
    pub mechanism: String,
    #[command(flatten)]
    pub seq: SeqArgs,
}

#[derive(Debug, Args)]
pub struct IcCheckArgs {
    pub mechanism: String,
    #[command(flatten)]
    pub vocab: VocabArg,
    /// Longest string checked, in characters.
    #[arg(long, default_value_t = 6)]
    pub max_len: usize,
    /// Maximum number of tokenizations examined.
    #[arg(long, default_value_t = 10_000_000)]
    pub budget: u64,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub vocab: VocabArg,
    /// Token corpus: one record of ids per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub r_o: f64,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    #[arg(long, default_value_t = crate::oracle::DEFAULT_NODE_BUDGET)]
    pub max_nodes: u64,
    #[arg(long, default_value_t = crate::oracle::DEFAULT_TIME_BUDGET_SECS)]
    pub max_seconds: f64,
}

impl BudgetArgs {
    fn budget(&self) -> OracleBudget {
        OracleBudget {
            max_nodes: self.max_nodes,
            max_seconds: self.max_seconds,
        }
    }
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(subcommand)]
    pub kind: OracleKind,
}

#[derive(Debug, Subcommand)]
pub enum OracleKind {
    /// Longest plausible tokenization of a string.
    Longest {
        #[command(flatten)]
        vocab: VocabArg,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Return unterminated tokenizations (no EOS appended or checked).
        #[arg(long)]
        no_eos: bool,
        text: String,
    },
    /// Revenue-maximizing tokenization under a mechanism.
    MaxRevenue {
        #[command(flatten)]
        vocab: VocabArg,
        #[arg(long)]
        mechanism: String,
        #[command(flatten)]
        budget: BudgetArgs,
        text: String,
    },
}

#[derive(Debug, Args)]
pub struct HardnessArgs {
    #[command(subcommand)]
    pub kind: HardnessKind,
}

#[derive(Debug, Subcommand)]
pub enum HardnessKind {
    /// Build the gadget for a graph and compare both exact solvers.
    Verify {
        /// Edge list: optional `n <count>` header, then `u v` per line (1-based).
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value = "topp")]
        variant: String,
        /// δ for the threshold variant (default: a value that keeps the gap).
        #[arg(long)]
        delta: Option<f64>,
        /// Also run the threshold probability-gap check.
        #[arg(long)]
        gap: bool,
        #[arg(long, default_value_t = DEFAULT_HAMILTONIAN_LIMIT)]
        node_limit: usize,
        #[command(flatten)]
        budget: BudgetArgs,
    },
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(subcommand)]
    pub kind: SimulateKind,
}

#[derive(Debug, Subcommand)]
pub enum SimulateKind {
    /// Overcharge and plausibility as functions of the number of splits.
    Overcharge {
        /// Comma-separated m values (default: from the configuration).
        #[arg(long, value_delimiter = ',')]
        m_values: Option<Vec<usize>>,
    },
    /// Utility gain of the heuristic over truthful reporting by margin.
    Profit {
        #[arg(long, value_delimiter = ',')]
        margins: Option<Vec<f64>>,
        #[arg(long)]
        m: Option<usize>,
    },
    /// Distribution of per-output margins under calibrated per-character pricing.
    MarginCdf {
        #[arg(long, value_delimiter = ',')]
        rho: Option<Vec<f64>>,
    },
}

fn load_vocab(spec: &str) -> Result<Vocabulary> {
    if spec == "V_ab" {
        Ok(Vocabulary::reference_ab())
    } else {
        Vocabulary::load(spec)
    }
}

fn parse_seq(vocab: &Vocabulary, args: &SeqArgs) -> Result<TokenSequence> {
    match (&args.ids, &args.tokens) {
        (Some(ids), _) => {
            let ids = ids
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<u32>().map_err(|e| Error::parse("token ids", s, e.to_string())))
                .collect::<Result<Vec<u32>>>()?;
            vocab.sequence_from_ids(&ids)
        }
        (None, Some(toks)) => {
            let parts: Vec<&str> = if toks.is_empty() { Vec::new() } else { toks.split('|').collect() };
            let parts: Vec<&str> = parts
                .into_iter()
                .map(|p| if p == "<eos>" { "" } else { p })
                .collect();
            vocab.sequence_from_strs(&parts)
        }
        (None, None) => Err(Error::parse("sequence", "", "pass --ids or --tokens")),
    }
}

/// A model plus what it implies: the vocabulary (gadgets bring their own)
/// and a default rule.
struct LoadedModel {
    model: Box<dyn GenerativeModel>,
    vocab: Vocabulary,
    rule: Option<SamplingRule>,
}

fn load_model(vocab_spec: &str, args: &ModelArgs) -> Result<LoadedModel> {
    let spec = args
        .model
        .as_deref()
        .ok_or_else(|| Error::parse("model", "", "this command needs --model"))?;
    if let Some(rest) = spec.strip_prefix("gadget:") {
        let (path, variant) = match rest.split_once(",variant=") {
            Some((p, v)) => (p, v.parse::<GadgetVariant>()?),
            None => (rest, GadgetVariant::TopP),
        };
        let g = DirectedGraph::load(path)?;
        let gadget = build_gadget(&g, variant)?;
        let Gadget { vocab, model, rule, .. } = gadget;
        return Ok(LoadedModel {
            model: Box::new(model),
            vocab,
            rule: Some(rule),
        });
    }
    let vocab = load_vocab(vocab_spec)?;
    let ms: ModelSpec = spec.parse()?;
    let (model, _) = ms.load(&vocab, Path::new("."))?;
    Ok(LoadedModel { model, vocab, rule: None })
}

fn rule_of(args: &ModelArgs, default: Option<SamplingRule>) -> Result<SamplingRule> {
    args.rule
        .or(default)
        .ok_or_else(|| Error::parse("rule", "", "this command needs --rule"))
}

fn eos_of(args: &ModelArgs) -> EosCheck {
    if args.ignore_eos {
        EosCheck::Ignore
    } else {
        EosCheck::Include
    }
}

fn seq_json(vocab: &Vocabulary, seq: &TokenSequence) -> Result<Value> {
    let tokens: Vec<&str> = seq
        .tokens()
        .iter()
        .map(|&id| vocab.token_str(id).unwrap_or("?"))
        .collect();
    Ok(json!({
        "ids": seq.to_ids(vocab),
        "tokens": tokens,
        "eos": seq.is_terminated(),
        "len": seq.len(),
        "text": vocab.render(seq)?,
    }))
}

fn scalar_csv(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn render(value: &Value, format: Format) -> Result<String> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(value)? + "\n"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            match value {
                Value::Array(rows) if rows.iter().all(Value::is_object) && !rows.is_empty() => {
                    let header: Vec<String> = rows[0].as_object().map(|o| o.keys().cloned().collect()).unwrap_or_default();
                    w.write_record(&header)?;
                    for r in rows {
                        let o = r.as_object().cloned().unwrap_or_default();
                        w.write_record(header.iter().map(|k| scalar_csv(o.get(k).unwrap_or(&Value::Null))))?;
                    }
                }
                Value::Object(o) => {
                    w.write_record(["key", "value"])?;
                    for (k, v) in o {
                        w.write_record([k.clone(), scalar_csv(v)])?;
                    }
                }
                other => {
                    w.write_record([scalar_csv(other)])?;
                }
            }
            let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
            Ok(String::from_utf8_lossy(&bytes).into_owned())
        }
    }
}

fn emit(cli: &Cli, name: &str, value: &Value, out: &mut dyn Write) -> Result<()> {
    let text = render(value, cli.format)?;
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ext = match cli.format {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        let p = dir.join(format!("{name}.{ext}"));
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Tokenize(a) => {
            let vocab = load_vocab(&a.vocab.vocab)?;
            let v = match a.mode {
                TokenizeMode::Greedy => seq_json(&vocab, &greedy_tokenize(&a.text, &vocab)?)?,
                TokenizeMode::Count => json!({
                    "text": a.text,
                    "count": count_tokenizations(&a.text, &vocab)?.to_string(),
                }),
                TokenizeMode::Enumerate => Value::Array(
                    enumerate_tokenizations(&a.text, &vocab)?
                        .take(a.limit)
                        .map(|s| seq_json(&vocab, &s))
                        .collect::<Result<_>>()?,
                ),
            };
            emit(cli, "tokenize", &v, out)
        }
        Command::Misreport(a) => {
            let mut policy = a.policy;
            if let (Some(s), ReportingPolicy::RandomSplit { m, .. }) = (cli.seed, policy) {
                policy = ReportingPolicy::RandomSplit { m, seed: s };
            }
            let (vocab, model): (Vocabulary, Option<LoadedModel>) = if a.model.model.is_some() {
                let lm = load_model(&a.vocab.vocab, &a.model)?;
                (lm.vocab.clone(), Some(lm))
            } else {
                (load_vocab(&a.vocab.vocab)?, None)
            };
            let seq = parse_seq(&vocab, &a.seq)?;
            let outcome = match (&model, policy) {
                (Some(lm), p) => p.apply_with(&vocab, lm.model.as_ref(), &seq, eos_of(&a.model))?,
                (None, ReportingPolicy::Heuristic { .. }) => {
                    return Err(Error::parse("model", "", "the heuristic policy needs --model"))
                }
                (None, p) => {
                    // Truthful and random splitting never consult the model.
                    let dummy = crate::model::TableModel::new(&vocab, vec![1.0 / vocab.len() as f64; vocab.len()])?;
                    p.apply(&vocab, &dummy, &seq)?
                }
            };
            let v = json!({
                "policy": policy.to_string(),
                "input": seq_json(&vocab, &seq)?,
                "reported": seq_json(&vocab, &outcome.reported)?,
                "splits_applied": outcome.splits_applied,
                "plausibility_checked": outcome.plausibility_checked,
                "plausibility_passed": outcome.plausibility_passed,
                "verification_cost_charged": outcome.verification_cost_charged,
            });
            emit(cli, "misreport", &v, out)
        }
        Command::Audit(a) => {
            let lm = load_model(&a.vocab.vocab, &a.model)?;
            let rule = rule_of(&a.model, lm.rule)?;
            let t = Temperature::new(a.model.temperature)?;
            let seq = parse_seq(&lm.vocab, &a.seq)?;
            let eos = eos_of(&a.model);
            let plausible = is_plausible_with(lm.model.as_ref(), &seq, rule, t, eos)?;
            let prob = sequence_prob_with(lm.model.as_ref(), &seq, t, eos)?;
            let v = json!({
                "sequence": seq_json(&lm.vocab, &seq)?,
                "rule": rule.to_string(),
                "temperature": t.value(),
                "plausible": plausible,
                "sequence_prob": prob,
            });
            emit(cli, "audit", &v, out)
        }
        Command::Price(a) => {
            let vocab = load_vocab(&a.vocab.vocab)?;
            let mech = PricingMechanism::from_spec(&a.mechanism, None)?;
            let seq = parse_seq(&vocab, &a.seq)?;
            let p = mech.price_micros(&vocab, &seq)?;
            let v = json!({
                "mechanism": mech.to_string(),
                "sequence": seq_json(&vocab, &seq)?,
                "price": p.to_string(),
            });
            emit(cli, "price", &v, out)
        }
        Command::IcCheck(a) => {
            let vocab = load_vocab(&a.vocab.vocab)?;
            let mech = PricingMechanism::from_spec(&a.mechanism, None)?;
            let verdict = is_incentive_compatible(&mech, &vocab, a.max_len, a.budget)?;
            let v = match &verdict {
                IcVerdict::Compatible { strings_checked, tokenizations_checked } => json!({
                    "mechanism": mech.to_string(),
                    "incentive_compatible": true,
                    "strings_checked": strings_checked,
                    "tokenizations_checked": tokenizations_checked,
                }),
                IcVerdict::Violated(w) => json!({
                    "mechanism": mech.to_string(),
                    "incentive_compatible": false,
                    "string": w.string,
                    "first": seq_json(&vocab, &w.first)?,
                    "second": seq_json(&vocab, &w.second)?,
                    "first_price": w.first_price,
                    "second_price": w.second_price,
                }),
            };
            emit(cli, "ic_check", &v, out)
        }
        Command::CalibrateTpc(a) => {
            let vocab = load_vocab(&a.vocab.vocab)?;
            let corpus = crate::model::NgramModel::read_corpus(&vocab, &a.corpus)?;
            let records = corpus
                .iter()
                .map(|s| Ok((s.len(), vocab.char_count(s)?)))
                .collect::<Result<Vec<_>>>()?;
            let records: Vec<_> = records.into_iter().filter(|&(_, c)| c > 0).collect();
            let c = calibrate_tpc(&records, a.r_o)?;
            let v = json!({
                "records": records.len(),
                "r_o": a.r_o,
                "tokens_per_char": c.tokens_per_char,
                "r_c": c.r_c,
            });
            emit(cli, "calibrate_tpc", &v, out)
        }
        Command::Oracle(o) => match &o.kind {
            OracleKind::Longest { vocab, model, budget, no_eos, text } => {
                let lm = load_model(&vocab.vocab, model)?;
                let rule = rule_of(model, lm.rule)?;
                let t = Temperature::new(model.temperature)?;
                let opts = SearchOptions {
                    budget: budget.budget(),
                    eos_check: eos_of(model),
                    terminate: !no_eos,
                };
                let (best, stats) = longest_plausible_stats(text, &lm.vocab, lm.model.as_ref(), rule, t, opts)?;
                let v = json!({
                    "text": text,
                    "rule": rule.to_string(),
                    "feasible": best.is_some(),
                    "longest": best.as_ref().map(|b| seq_json(&lm.vocab, b)).transpose()?,
                    "nodes": stats.nodes,
                });
                emit(cli, "oracle_longest", &v, out)
            }
            OracleKind::MaxRevenue { vocab, mechanism, budget, text } => {
                let vocab = load_vocab(&vocab.vocab)?;
                let mech = PricingMechanism::from_spec(mechanism, None)?;
                let (seq, price) = max_revenue_tokenization(text, &vocab, &mech, budget.budget())?;
                let v = json!({
                    "text": text,
                    "mechanism": mech.to_string(),
                    "best": seq_json(&vocab, &seq)?,
                    "price": crate::pricing::Micros::from_f64(price).to_string(),
                });
                emit(cli, "oracle_max_revenue", &v, out)
            }
        },
        Command::Hardness(h) => match &h.kind {
            HardnessKind::Verify { graph, variant, delta, gap, node_limit, budget } => {
                let g = DirectedGraph::load(graph)?;
                let mut variant: GadgetVariant = variant.parse()?;
                if let (Some(d), GadgetVariant::Threshold { .. }) = (delta, variant) {
                    variant = GadgetVariant::Threshold { delta: *d };
                }
                let variant = variant.resolve(g.num_nodes());
                let opts = SearchOptions {
                    budget: budget.budget(),
                    ..Default::default()
                };
                let check = verify_reduction(&g, variant, opts, *node_limit)?;
                let mut v = serde_json::to_value(&check)?;
                if *gap {
                    let d = match variant {
                        GadgetVariant::Threshold { delta } => delta,
                        _ => crate::gadget::safe_delta(g.num_nodes()),
                    };
                    let gc = threshold_gap_check(&g, d)?;
                    if let Value::Object(m) = &mut v {
                        m.insert("gap".into(), serde_json::to_value(&gc)?);
                    }
                }
                emit(cli, "hardness_verify", &v, out)
            }
        },
        Command::Simulate(s) => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| Error::Config("simulate needs --config".into()))?;
            let mut exp = Experiment::load(path)?;
            if let Some(seed) = cli.seed {
                exp.config.seed = seed;
            }
            if cli.threads.is_some() {
                exp.config.threads = cli.threads;
            }
            let dir = cli.out.clone().unwrap_or_else(|| exp.out_dir());
            let (name, summary, files) = match &s.kind {
                SimulateKind::Overcharge { m_values } => {
                    let ms = m_values.clone().unwrap_or_else(|| exp.config.overcharge.m_values.clone());
                    let r = run_overcharge_sweep(&exp, &ms)?;
                    let files = write_overcharge(&dir, &r)?;
                    ("overcharge", serde_json::to_value(&r.summary)?, files)
                }
                SimulateKind::Profit { margins, m } => {
                    let ms = margins.clone().unwrap_or_else(|| exp.config.profit.margins.clone());
                    let m = m.unwrap_or(exp.config.profit.m);
                    let r = run_profit_sweep(&exp, &ms, m)?;
                    let files = write_profit(&dir, &r)?;
                    ("profit", serde_json::to_value(&r.summary)?, files)
                }
                SimulateKind::MarginCdf { rho } => {
                    let rs = rho.clone().unwrap_or_else(|| exp.config.margin_cdf.rho_o.clone());
                    let r = run_margin_cdf(&exp, &rs)?;
                    let files = write_margin(&dir, &r)?;
                    ("margin_cdf", serde_json::to_value(&r.summary)?, files)
                }
            };
            let mut m = Map::new();
            m.insert("experiment".into(), json!(name));
            m.insert(
                "files".into(),
                json!(files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>()),
            );
            m.insert("summary".into(), summary);
            let text = match cli.format {
                Format::Json => serde_json::to_string_pretty(&Value::Object(m))? + "\n",
                Format::Csv => files.iter().map(|f| format!("{}\n", f.display())).collect(),
            };
            out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}
