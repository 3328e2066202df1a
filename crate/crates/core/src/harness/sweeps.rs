//! Seeded batch simulations: overcharge vs. number of splits, utility gain
//! vs. profit margin, and the distribution of per-character margins.
//!
//! Every output is keyed by `(master seed, prompt id, replication)`, and
//! results are gathered in work-item order, so reports are byte-identical
//! for any thread count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::economics::{profitability_threshold, Ledger, LedgerEntry};
use crate::error::{Error, Result};
use crate::harness::config::Experiment;
use crate::harness::corpus::PromptRecord;
use crate::harness::stats::{estimate, mean, quantile, Estimate};
use crate::model::{is_plausible_with, sample_output, Conditioned};
use crate::policy::{ReportOutcome, ReportingPolicy};
use crate::pricing::calibrate_tpc;
use crate::seeds::{derive_seed, hash_str};
use crate::vocab::TokenSequence;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One generated output.
#[derive(Clone, Debug)]
pub struct Generated {
    pub prompt_id: String,
    pub replication: usize,
    pub seed: u64,
    pub context: Vec<crate::vocab::TokenId>,
    pub tokens: TokenSequence,
}

pub fn output_seed(master: u64, prompt_id: &str, replication: usize) -> u64 {
    derive_seed(&[master, hash_str(prompt_id), replication as u64])
}

fn generate(exp: &Experiment, prompt: &PromptRecord, replication: usize) -> Result<Generated> {
    let cfg = &exp.config;
    let seed = output_seed(cfg.seed, &prompt.id, replication);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.gen_range(cfg.min_output_tokens..=cfg.max_output_tokens);
    let context = exp.prompt_context(prompt)?;
    let model = Conditioned::new(exp.model.as_ref(), context.clone());
    let tokens = sample_output(&model, cfg.rule, cfg.temperature, len, derive_seed(&[seed, 1]))?;
    Ok(Generated {
        prompt_id: prompt.id.clone(),
        replication,
        seed,
        context,
        tokens,
    })
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Generates every `(prompt, replication)` output in parallel, in order.
pub fn generate_all(exp: &Experiment, prompts: &[PromptRecord]) -> Result<Vec<Generated>> {
    let items: Vec<(usize, usize)> = (0..exp.config.replications)
        .flat_map(|r| (0..prompts.len()).map(move |p| (r, p)))
        .collect();
    in_pool(exp.config.threads, || {
        items
            .par_iter()
            .map(|&(r, p)| generate(exp, &prompts[p], r))
            .collect::<Result<Vec<_>>>()
    })?
}

/// Applies a policy with a per-output random stream for randomized ones.
fn apply_policy(exp: &Experiment, policy: ReportingPolicy, out: &Generated) -> Result<ReportOutcome> {
    let policy = match policy {
        ReportingPolicy::RandomSplit { m, seed } => ReportingPolicy::RandomSplit {
            m,
            seed: derive_seed(&[seed, out.seed]),
        },
        p => p,
    };
    let model = Conditioned::new(exp.model.as_ref(), out.context.clone());
    let outcome = policy.apply_with(&exp.vocab, &model, &out.tokens, exp.config.eos_check)?;
    // Re-verify string preservation before anything is priced.
    if exp.vocab.render(&outcome.reported)? != exp.vocab.render(&out.tokens)? {
        return Err(Error::Integrity(format!(
            "policy {policy} changed the string of output {}/{}",
            out.prompt_id, out.replication
        )));
    }
    Ok(outcome)
}

fn reported_plausible(exp: &Experiment, out: &Generated, outcome: &ReportOutcome) -> Result<bool> {
    if outcome.plausibility_passed == Some(true) {
        return Ok(true);
    }
    let model = Conditioned::new(exp.model.as_ref(), out.context.clone());
    is_plausible_with(
        &model,
        &outcome.reported,
        exp.config.rule,
        exp.config.temperature,
        exp.config.eos_check,
    )
}

#[derive(Clone, Debug)]
struct Scored {
    len_true: usize,
    len_reported: usize,
    modified: bool,
    plausible: bool,
    candidate_plausible: bool,
    entries: Vec<LedgerEntry>,
}

fn score(exp: &Experiment, policy: ReportingPolicy, out: &Generated) -> Result<Scored> {
    let outcome = apply_policy(exp, policy, out)?;
    let plausible = reported_plausible(exp, out, &outcome)?;
    let entries = exp
        .mechanisms
        .iter()
        .map(|mech| {
            LedgerEntry::compute(
                out.prompt_id.clone(),
                &exp.vocab,
                &out.tokens,
                &outcome,
                mech,
                &exp.config.costs,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scored {
        len_true: out.tokens.len(),
        len_reported: outcome.reported.len(),
        modified: outcome.reported != out.tokens,
        plausible,
        candidate_plausible: outcome.plausibility_passed.unwrap_or(plausible),
        entries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverchargeRow {
    pub policy: String,
    pub spec: String,
    pub m: usize,
    pub replication: usize,
    pub mechanism: String,
    pub outputs: usize,
    pub true_tokens: usize,
    pub reported_tokens: usize,
    pub overcharge_pct_pooled: f64,
    pub overcharge_pct_mean_per_output: f64,
    pub plausible_frac: f64,
    pub modified_frac: f64,
    pub candidate_plausible_frac: f64,
    pub mean_revenue: f64,
    pub mean_utility: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverchargeGroup {
    pub policy: String,
    pub spec: String,
    pub m: usize,
    pub mechanism: String,
    pub overcharge_pct_pooled: Estimate,
    pub overcharge_pct_mean_per_output: Estimate,
    pub plausible_frac: Estimate,
    pub modified_frac: Estimate,
    pub candidate_plausible_frac: Estimate,
    pub mean_utility: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverchargeSummary {
    pub replications: usize,
    pub outputs_per_replication: usize,
    pub rule: String,
    pub temperature: f64,
    pub groups: Vec<OverchargeGroup>,
    /// Per policy spec (with `m` left out): the `m` with the highest mean
    /// pooled overcharge; ties go to the smaller `m`.
    pub best_m: BTreeMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct OverchargeReport {
    pub rows: Vec<OverchargeRow>,
    pub summary: OverchargeSummary,
    pub ledgers: Vec<(String, Ledger)>,
}

fn policy_family(p: &ReportingPolicy) -> String {
    match p {
        ReportingPolicy::Truthful => "truthful".into(),
        ReportingPolicy::RandomSplit { seed, .. } => format!("random:seed={seed}"),
        ReportingPolicy::Heuristic {
            rule, temperature, ..
        } => format!("heuristic:rule={rule},T={}", temperature.value()),
    }
}

pub fn run_overcharge_sweep(exp: &Experiment, m_values: &[usize]) -> Result<OverchargeReport> {
    if exp.mechanisms.is_empty() {
        return Err(Error::Config("the overcharge sweep needs at least one mechanism".into()));
    }
    if exp.prompts.is_empty() {
        return Err(Error::InvalidInput("empty prompt corpus".into()));
    }
    let outputs = generate_all(exp, &exp.prompts)?;
    let variants: Vec<(usize, ReportingPolicy)> = exp
        .policies
        .iter()
        .flat_map(|p| m_values.iter().map(move |&m| (m, p.with_iterations(m))))
        .collect();
    let scored: Vec<Vec<Scored>> = in_pool(exp.config.threads, || {
        outputs
            .par_iter()
            .map(|out| {
                variants
                    .iter()
                    .map(|&(_, p)| score(exp, p, out))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let reps = exp.config.replications;
    let per_rep = exp.prompts.len();
    let mut rows = Vec::new();
    let mut ledgers = Vec::new();
    for (vi, &(m, policy)) in variants.iter().enumerate() {
        for (mi, mech) in exp.mechanisms.iter().enumerate() {
            for r in 0..reps {
                let batch: Vec<&Scored> = (0..per_rep).map(|p| &scored[r * per_rep + p][vi]).collect();
                let n = batch.len() as f64;
                let t: usize = batch.iter().map(|s| s.len_true).sum();
                let rep: usize = batch.iter().map(|s| s.len_reported).sum();
                let per_output: Vec<f64> = batch
                    .iter()
                    .filter(|s| s.len_true > 0)
                    .map(|s| 100.0 * (s.len_reported as f64 - s.len_true as f64) / s.len_true as f64)
                    .collect();
                let frac = |f: fn(&Scored) -> bool| batch.iter().filter(|s| f(s)).count() as f64 / n;
                let mut ledger = Ledger::default();
                for s in &batch {
                    ledger.push(s.entries[mi].clone());
                }
                let totals = ledger.totals();
                rows.push(OverchargeRow {
                    policy: policy.name().into(),
                    spec: policy.to_string(),
                    m,
                    replication: r,
                    mechanism: mech.to_string(),
                    outputs: batch.len(),
                    true_tokens: t,
                    reported_tokens: rep,
                    overcharge_pct_pooled: if t == 0 { 0.0 } else { 100.0 * (rep as f64 - t as f64) / t as f64 },
                    overcharge_pct_mean_per_output: if per_output.is_empty() { 0.0 } else { mean(&per_output) },
                    plausible_frac: frac(|s| s.plausible),
                    modified_frac: frac(|s| s.modified),
                    candidate_plausible_frac: frac(|s| s.candidate_plausible),
                    mean_revenue: totals.revenue.to_f64() / n,
                    mean_utility: totals.utility.to_f64() / n,
                });
                if exp.config.write_ledgers {
                    let name = format!("overcharge_{}_m{m}_{}_r{r}", policy.name(), mech.name());
                    ledgers.push((name, ledger));
                }
            }
        }
    }

    let summary = summarize_overcharge_rows(
        &rows,
        exp.config.replications,
        exp.prompts.len(),
        exp.config.rule.to_string(),
        exp.config.temperature.value(),
    );
    Ok(OverchargeReport {
        rows,
        summary,
        ledgers,
    })
}

/// Rebuilds the summary from rows alone, so it can be checked against the
/// emitted CSV.
pub fn summarize_overcharge_rows(
    rows: &[OverchargeRow],
    replications: usize,
    outputs_per_replication: usize,
    rule: String,
    temperature: f64,
) -> OverchargeSummary {
    let mut groups: Vec<OverchargeGroup> = Vec::new();
    let mut keys: Vec<(String, usize, String)> = Vec::new();
    for r in rows {
        let k = (r.spec.clone(), r.m, r.mechanism.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut best: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for (spec, m, mech) in keys {
        let g: Vec<&OverchargeRow> = rows
            .iter()
            .filter(|r| r.spec == spec && r.m == m && r.mechanism == mech)
            .collect();
        let col = |f: fn(&OverchargeRow) -> f64| estimate(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
        let group = OverchargeGroup {
            policy: g[0].policy.clone(),
            spec: spec.clone(),
            m,
            mechanism: mech,
            overcharge_pct_pooled: col(|r| r.overcharge_pct_pooled),
            overcharge_pct_mean_per_output: col(|r| r.overcharge_pct_mean_per_output),
            plausible_frac: col(|r| r.plausible_frac),
            modified_frac: col(|r| r.modified_frac),
            candidate_plausible_frac: col(|r| r.candidate_plausible_frac),
            mean_utility: col(|r| r.mean_utility),
        };
        let family = family_of_spec(&spec);
        let v = group.overcharge_pct_pooled.mean;
        match best.get(&family) {
            Some(&(bm, bv)) if bv > v || (bv == v && bm <= m) => {}
            _ => {
                best.insert(family, (m, v));
            }
        }
        groups.push(group);
    }
    OverchargeSummary {
        replications,
        outputs_per_replication,
        rule,
        temperature,
        groups,
        best_m: best.into_iter().map(|(k, (m, _))| (k, m)).collect(),
    }
}

fn family_of_spec(spec: &str) -> String {
    match spec.parse::<ReportingPolicy>() {
        Ok(p) => policy_family(&p),
        Err(_) => spec.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfitRow {
    pub margin: f64,
    pub replication: usize,
    pub r_o: f64,
    pub outputs: usize,
    pub plausible_frac: f64,
    pub mean_extra_tokens: f64,
    pub mean_truthful_utility: f64,
    pub mean_heuristic_utility: f64,
    pub mean_gain: f64,
    pub relative_gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfitPoint {
    pub margin: f64,
    pub r_o: f64,
    pub mean_gain: Estimate,
    pub relative_gain: Estimate,
    pub predicted_profitable: bool,
    pub empirical_profitable: bool,
    /// Whether the margin lies inside the threshold's 90% band, where the
    /// sign comparison is not meaningful.
    pub within_band: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfitSummary {
    pub policy: String,
    pub m: usize,
    pub c_o: f64,
    pub c_v: f64,
    pub expected_plausible: Estimate,
    pub mean_extra_tokens: Estimate,
    /// `1 - E[plausible]·m·c_o/c_v`.
    pub threshold: f64,
    pub threshold_ci90: f64,
    /// Same boundary with the measured extra tokens in place of
    /// `E[plausible]·m`; they differ when outputs allow fewer than `m` splits.
    pub effective_threshold: f64,
    pub points: Vec<ProfitPoint>,
}

#[derive(Clone, Debug)]
pub struct ProfitReport {
    pub rows: Vec<ProfitRow>,
    pub summary: ProfitSummary,
}

/// The heuristic compared against truthful reporting: the first heuristic
/// policy in the configuration with `m` overridden, else one built from the
/// sampling rule and temperature.
pub fn profit_policy(exp: &Experiment, m: usize) -> ReportingPolicy {
    exp.policies
        .iter()
        .find(|p| matches!(p, ReportingPolicy::Heuristic { .. }))
        .copied()
        .unwrap_or(ReportingPolicy::Heuristic {
            m,
            rule: exp.config.rule,
            temperature: exp.config.temperature,
        })
        .with_iterations(m)
}

pub fn run_profit_sweep(exp: &Experiment, margins: &[f64], m: usize) -> Result<ProfitReport> {
    for &rho in margins {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidInput(format!(
                "margin {rho} outside (0, 1); a margin of 1 needs an infinite price"
            )));
        }
    }
    if exp.prompts.is_empty() {
        return Err(Error::InvalidInput("empty prompt corpus".into()));
    }
    let policy = profit_policy(exp, m);
    let outputs = generate_all(exp, &exp.prompts)?;
    let outcomes: Vec<ReportOutcome> = in_pool(exp.config.threads, || {
        outputs
            .par_iter()
            .map(|o| apply_policy(exp, policy, o))
            .collect::<Result<Vec<_>>>()
    })??;
    let costs = exp.config.costs;
    let reps = exp.config.replications;
    let per_rep = exp.prompts.len();

    let mut e_rep = Vec::with_capacity(reps);
    let mut extra_rep = Vec::with_capacity(reps);
    let mut len_rep = Vec::with_capacity(reps);
    for r in 0..reps {
        let idx = r * per_rep..(r + 1) * per_rep;
        let n = per_rep as f64;
        e_rep.push(outcomes[idx.clone()].iter().filter(|o| o.plausibility_passed == Some(true)).count() as f64 / n);
        extra_rep.push(
            outcomes[idx.clone()]
                .iter()
                .zip(&outputs[idx.clone()])
                .map(|(o, g)| (o.reported.len() - g.tokens.len()) as f64)
                .sum::<f64>()
                / n,
        );
        len_rep.push(outputs[idx].iter().map(|g| g.tokens.len() as f64).sum::<f64>() / n);
    }

    let mut rows = Vec::new();
    let mut points = Vec::new();
    let thr_rep: Vec<f64> = e_rep
        .iter()
        .map(|&e| profitability_threshold(e, m, &costs))
        .collect::<Result<_>>()?;
    let e_est = estimate(&e_rep);
    let threshold = profitability_threshold(e_est.mean, m, &costs)?;
    let thr_band = if threshold.is_finite() { estimate(&thr_rep).ci90 } else { 0.0 };
    let extra_est = estimate(&extra_rep);
    let effective_threshold = if costs.c_v == 0.0 {
        f64::NEG_INFINITY
    } else {
        1.0 - extra_est.mean * costs.c_o / costs.c_v
    };
    for &rho in margins {
        let r_o = costs.rate_for_margin(rho)?;
        let mut gains = Vec::with_capacity(reps);
        let mut rel = Vec::with_capacity(reps);
        for r in 0..reps {
            let truthful = (r_o - costs.c_o) * len_rep[r];
            let gain = r_o * extra_rep[r] - costs.c_v;
            let relative = if truthful != 0.0 { gain / truthful } else { 0.0 };
            gains.push(gain);
            rel.push(relative);
            rows.push(ProfitRow {
                margin: rho,
                replication: r,
                r_o,
                outputs: per_rep,
                plausible_frac: e_rep[r],
                mean_extra_tokens: extra_rep[r],
                mean_truthful_utility: truthful,
                mean_heuristic_utility: truthful + gain,
                mean_gain: gain,
                relative_gain: relative,
            });
        }
        let g = estimate(&gains);
        points.push(ProfitPoint {
            margin: rho,
            r_o,
            relative_gain: estimate(&rel),
            predicted_profitable: rho > threshold,
            empirical_profitable: g.mean > 0.0,
            within_band: (rho - threshold).abs() <= thr_band,
            mean_gain: g,
        });
    }
    Ok(ProfitReport {
        rows,
        summary: ProfitSummary {
            policy: policy.to_string(),
            m,
            c_o: costs.c_o,
            c_v: costs.c_v,
            expected_plausible: e_est,
            mean_extra_tokens: extra_est,
            threshold,
            threshold_ci90: thr_band,
            effective_threshold,
            points,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub rho_o: f64,
    pub prompt_id: String,
    pub replication: usize,
    pub tokens: usize,
    pub chars: usize,
    pub margin: f64,
    pub cdf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginPoint {
    pub rho_o: f64,
    pub r_o: f64,
    pub r_c: f64,
    pub mean_margin: f64,
    pub mean_margin_calibration: f64,
    pub positive_frac: f64,
    pub min: f64,
    pub p10: f64,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginSummary {
    pub tokens_per_char: f64,
    pub calibration_outputs: usize,
    pub evaluation_outputs: usize,
    pub disjoint: bool,
    pub points: Vec<MarginPoint>,
}

#[derive(Clone, Debug)]
pub struct MarginReport {
    pub rows: Vec<MarginRow>,
    pub summary: MarginSummary,
}

/// Calibration and evaluation prompt sets: the configured calibration file
/// if any, otherwise the first and second half of the prompt corpus.
pub fn margin_corpora(exp: &Experiment) -> (Vec<PromptRecord>, Vec<PromptRecord>) {
    match &exp.calibration_prompts {
        Some(cal) => (cal.clone(), exp.prompts.clone()),
        None => {
            let half = exp.prompts.len() / 2;
            (exp.prompts[..half].to_vec(), exp.prompts[half..].to_vec())
        }
    }
}

pub fn run_margin_cdf(exp: &Experiment, rho_values: &[f64]) -> Result<MarginReport> {
    for &rho in rho_values {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidInput(format!("margin {rho} outside (0, 1)")));
        }
    }
    let (cal_prompts, eval_prompts) = margin_corpora(exp);
    if cal_prompts.is_empty() || eval_prompts.is_empty() {
        return Err(Error::Calibration("calibration and evaluation corpora must be non-empty".into()));
    }
    let counts = |gs: Vec<Generated>| -> Result<Vec<(String, usize, usize, usize)>> {
        gs.into_iter()
            .map(|g| {
                let chars = exp.vocab.char_count(&g.tokens)?;
                Ok((g.prompt_id, g.replication, g.tokens.len(), chars))
            })
            .filter(|r| !matches!(r, Ok((_, _, _, 0))))
            .collect()
    };
    let cal = counts(generate_all(exp, &cal_prompts)?)?;
    let eval = counts(generate_all(exp, &eval_prompts)?)?;
    if cal.is_empty() || eval.is_empty() {
        return Err(Error::Calibration("every output was empty".into()));
    }
    let cal_pairs: Vec<(usize, usize)> = cal.iter().map(|r| (r.2, r.3)).collect();
    let costs = exp.config.costs;
    let disjoint = {
        let ids: std::collections::HashSet<&str> = cal_prompts.iter().map(|p| p.id.as_str()).collect();
        eval_prompts.iter().all(|p| !ids.contains(p.id.as_str()))
    };

    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut tpc = f64::NAN;
    for &rho in rho_values {
        let r_o = costs.rate_for_margin(rho)?;
        let calib = calibrate_tpc(&cal_pairs, r_o)?;
        tpc = calib.tokens_per_char;
        let margin_of = |tokens: usize, chars: usize| 1.0 - costs.c_o * tokens as f64 / (calib.r_c * chars as f64);
        let mut ms: Vec<(usize, f64)> = eval
            .iter()
            .enumerate()
            .map(|(i, r)| (i, margin_of(r.2, r.3)))
            .collect();
        ms.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let n = ms.len() as f64;
        for (rank, &(i, m)) in ms.iter().enumerate() {
            let r = &eval[i];
            rows.push(MarginRow {
                rho_o: rho,
                prompt_id: r.0.clone(),
                replication: r.1,
                tokens: r.2,
                chars: r.3,
                margin: m,
                cdf: (rank + 1) as f64 / n,
            });
        }
        let sorted: Vec<f64> = ms.iter().map(|x| x.1).collect();
        let cal_margins: Vec<f64> = cal.iter().map(|r| margin_of(r.2, r.3)).collect();
        points.push(MarginPoint {
            rho_o: rho,
            r_o,
            r_c: calib.r_c,
            mean_margin: mean(&sorted),
            mean_margin_calibration: mean(&cal_margins),
            positive_frac: sorted.iter().filter(|&&m| m > 0.0).count() as f64 / n,
            min: sorted[0],
            p10: quantile(&sorted, 0.1),
            median: quantile(&sorted, 0.5),
            p90: quantile(&sorted, 0.9),
            max: sorted[sorted.len() - 1],
        });
    }
    Ok(MarginReport {
        rows,
        summary: MarginSummary {
            tokens_per_char: tpc,
            calibration_outputs: cal.len(),
            evaluation_outputs: eval.len(),
            disjoint,
            points,
        },
    })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `overcharge_rows.csv`, `overcharge_summary.json` and, if enabled,
/// per-replication ledgers under `ledgers/`.
pub fn write_overcharge(dir: &Path, report: &OverchargeReport) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let rows = dir.join("overcharge_rows.csv");
    let summary = dir.join("overcharge_summary.json");
    write_csv(&rows, &report.rows)?;
    write_json(&summary, &report.summary)?;
    let mut files = vec![rows, summary];
    if !report.ledgers.is_empty() {
        let ldir = dir.join("ledgers");
        ensure_dir(&ldir)?;
        for (name, ledger) in &report.ledgers {
            let p = ldir.join(format!("{name}.csv"));
            let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            ledger.write_csv(f)?;
            files.push(p);
        }
    }
    Ok(files)
}

pub fn write_profit(dir: &Path, report: &ProfitReport) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let rows = dir.join("profit_rows.csv");
    let summary = dir.join("profit_summary.json");
    write_csv(&rows, &report.rows)?;
    write_json(&summary, &report.summary)?;
    Ok(vec![rows, summary])
}

pub fn write_margin(dir: &Path, report: &MarginReport) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let rows = dir.join("margin_cdf.csv");
    let summary = dir.join("margin_summary.json");
    write_csv(&rows, &report.rows)?;
    write_json(&summary, &report.summary)?;
    Ok(vec![rows, summary])
}
