//! Exact, budgeted search procedures that serve as ground truth: the longest
//! plausible tokenization of a string, the revenue-maximizing tokenization
//! under a pricing mechanism, and Hamiltonian path existence.
//!
//! All of these are exponential in the worst case. Each takes an explicit
//! budget and fails with [`Error::Budget`] instead of running away.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gadget::DirectedGraph;
use crate::lattice::Lattice;
use crate::model::{
    allowed_from_dist, meets_threshold, next_dist, EosCheck, GenerativeModel, SamplingRule,
    Temperature,
};
use crate::pricing::PricingMechanism;
use crate::vocab::{TokenId, TokenSequence, Vocabulary};

pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;
pub const DEFAULT_TIME_BUDGET_SECS: f64 = 60.0;
pub const DEFAULT_HAMILTONIAN_LIMIT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleBudget {
    pub max_nodes: u64,
    pub max_seconds: f64,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget {
            max_nodes: DEFAULT_NODE_BUDGET,
            max_seconds: DEFAULT_TIME_BUDGET_SECS,
        }
    }
}

impl OracleBudget {
    pub fn nodes(max_nodes: u64) -> Self {
        OracleBudget {
            max_nodes,
            ..Self::default()
        }
    }
}

struct Meter {
    nodes: u64,
    budget: OracleBudget,
    started: Instant,
    deadline: Duration,
}

impl Meter {
    fn new(budget: OracleBudget) -> Self {
        Meter {
            nodes: 0,
            budget,
            started: Instant::now(),
            deadline: Duration::from_secs_f64(budget.max_seconds.max(0.0)),
        }
    }

    fn tick(&mut self) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.budget.max_nodes {
            return Err(Error::Budget(format!(
                "search exceeded {} nodes",
                self.budget.max_nodes
            )));
        }
        // Checking the clock on every node is measurable; every 4096 is not.
        if self.nodes.is_multiple_of(4096) && self.started.elapsed() > self.deadline {
            return Err(Error::Budget(format!(
                "search exceeded {:.1}s",
                self.budget.max_seconds
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub budget: OracleBudget,
    /// Whether the EOS step is part of the plausibility test.
    pub eos_check: EosCheck,
    /// Whether returned tokenizations end with EOS (only if the vocabulary
    /// has one).
    pub terminate: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            budget: OracleBudget::default(),
            eos_check: EosCheck::Include,
            terminate: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub nodes: u64,
}

struct Search<'a, M: ?Sized> {
    lattice: &'a Lattice,
    model: &'a M,
    rule: SamplingRule,
    temperature: Temperature,
    eos: Option<TokenId>,
    check_eos: bool,
    meter: Meter,
    prefix: Vec<TokenId>,
    best: Option<Vec<TokenId>>,
}

impl<M: GenerativeModel + ?Sized> Search<'_, M> {
    /// Probability factor of `id` after the current prefix, or `None` when
    /// the step is not allowed. For stepwise rules the factor is 1.
    fn step_factor(&self, dist: &[f64], allowed: Option<&[TokenId]>, id: TokenId) -> Option<f64> {
        match self.rule {
            SamplingRule::TopP(_) | SamplingRule::TopK(_) => {
                allowed.is_some_and(|a| a.contains(&id)).then_some(1.0)
            }
            SamplingRule::SequenceThreshold(_) | SamplingRule::Unrestricted => {
                let p = dist[id.index()];
                (p > 0.0).then_some(p)
            }
        }
    }

    fn prob_ok(&self, prob: f64) -> bool {
        match self.rule {
            SamplingRule::SequenceThreshold(eps) => meets_threshold(prob, eps),
            _ => true,
        }
    }

    fn allowed(&self, dist: &[f64]) -> Result<Option<Vec<TokenId>>> {
        if self.rule.is_stepwise() {
            Ok(Some(allowed_from_dist(dist, self.rule)?))
        } else {
            Ok(None)
        }
    }

    fn dfs(&mut self, offset: usize, prob: f64) -> Result<()> {
        self.meter.tick()?;
        let n = self.lattice.len();
        if offset == n {
            let accept = match (self.check_eos, self.eos) {
                (true, Some(eos)) => {
                    let dist = next_dist(self.model, &self.prefix, self.temperature)?;
                    let allowed = self.allowed(&dist)?;
                    self.step_factor(&dist, allowed.as_deref(), eos)
                        .is_some_and(|f| self.prob_ok(prob * f))
                }
                _ => true,
            };
            let longer = self
                .best
                .as_ref()
                .is_none_or(|b| self.prefix.len() > b.len());
            if accept && longer {
                self.best = Some(self.prefix.clone());
            }
            return Ok(());
        }
        // Each token covers at least one character, so at most n - offset
        // more tokens fit.
        if let Some(best) = &self.best {
            if self.prefix.len() + (n - offset) <= best.len() {
                return Ok(());
            }
        }
        let dist = next_dist(self.model, &self.prefix, self.temperature)?;
        let allowed = self.allowed(&dist)?;
        let lattice = self.lattice;
        // Shorter tokens first would find long answers sooner, but visiting
        // in id order keeps the first maximum the lexicographically smallest.
        for &(id, len) in lattice.edges_at(offset) {
            let Some(f) = self.step_factor(&dist, allowed.as_deref(), id) else {
                continue;
            };
            let p = prob * f;
            if !self.prob_ok(p) {
                continue;
            }
            self.prefix.push(id);
            self.dfs(offset + len, p)?;
            self.prefix.pop();
        }
        Ok(())
    }
}

/// The longest tokenization of `s` that is plausible under `(rule, T)`, or
/// `None` when no tokenization is. Among equally long answers the one with
/// the lexicographically smallest id sequence is returned.
///
/// Prunes on prefix plausibility, which is sound because every plausibility
/// rule here is monotone: an implausible prefix has no plausible extension.
pub fn longest_plausible<M: GenerativeModel + ?Sized>(
    s: &str,
    vocab: &Vocabulary,
    model: &M,
    rule: SamplingRule,
    temperature: Temperature,
    opts: SearchOptions,
) -> Result<Option<TokenSequence>> {
    longest_plausible_stats(s, vocab, model, rule, temperature, opts).map(|(r, _)| r)
}

pub fn longest_plausible_stats<M: GenerativeModel + ?Sized>(
    s: &str,
    vocab: &Vocabulary,
    model: &M,
    rule: SamplingRule,
    temperature: Temperature,
    opts: SearchOptions,
) -> Result<(Option<TokenSequence>, SearchStats)> {
    if model.vocab_size() != vocab.len() {
        return Err(Error::ModelContract(format!(
            "model covers {} tokens, vocabulary has {}",
            model.vocab_size(),
            vocab.len()
        )));
    }
    let lattice = Lattice::build(s, vocab)?;
    let terminate = opts.terminate && vocab.eos().is_some();
    let mut search = Search {
        lattice: &lattice,
        model,
        rule,
        temperature,
        eos: vocab.eos(),
        check_eos: terminate && opts.eos_check == EosCheck::Include,
        meter: Meter::new(opts.budget),
        prefix: Vec::new(),
        best: None,
    };
    search.dfs(0, 1.0)?;
    let stats = SearchStats {
        nodes: search.meter.nodes,
    };
    Ok((
        search.best.map(|b| TokenSequence::new(b, terminate)),
        stats,
    ))
}

/// Revenue-maximizing tokenization of `s` with its price. Ties keep the
/// first tokenization in enumeration order.
pub fn max_revenue_tokenization(
    s: &str,
    vocab: &Vocabulary,
    mechanism: &PricingMechanism,
    budget: OracleBudget,
) -> Result<(TokenSequence, f64)> {
    let mut meter = Meter::new(budget);
    let mut best: Option<(TokenSequence, f64)> = None;
    for seq in Lattice::build(s, vocab)?.into_tokenizations() {
        meter.tick()?;
        let price = mechanism.price(vocab, &seq)?;
        if best.as_ref().is_none_or(|(_, b)| price > *b + 1e-12) {
            best = Some((seq, price));
        }
    }
    best.ok_or_else(|| Error::InvalidInput("string has no tokenization".into()))
}

pub fn hamiltonian_path_exists(graph: &DirectedGraph) -> Result<bool> {
    hamiltonian_path_exists_within(graph, DEFAULT_HAMILTONIAN_LIMIT)
}

/// Bitmask dynamic program: `ends[mask]` holds the vertices at which some
/// simple path covering exactly `mask` can end.
pub fn hamiltonian_path_exists_within(graph: &DirectedGraph, limit: usize) -> Result<bool> {
    let n = graph.num_nodes();
    if n > limit || n > 26 {
        return Err(Error::Budget(format!(
            "graph has {n} nodes, limit is {}",
            limit.min(26)
        )));
    }
    if n == 0 {
        return Ok(false);
    }
    let full = (1usize << n) - 1;
    let mut ends = vec![0u32; 1 << n];
    for v in 0..n {
        ends[1 << v] = 1 << v;
    }
    for mask in 1..=full {
        let e = ends[mask];
        if e == 0 {
            continue;
        }
        for v in 0..n {
            if e & (1 << v) == 0 {
                continue;
            }
            let next = graph.successor_mask(v) & !(mask as u32);
            let mut bits = next;
            while bits != 0 {
                let w = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                ends[mask | (1 << w)] |= 1 << w;
            }
        }
    }
    Ok(ends[full] != 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::enumerate_tokenizations;
    use crate::model::{is_plausible_with, TableModel};

    fn ab() -> Vocabulary {
        Vocabulary::reference_ab()
    }

    fn brute_longest<M: GenerativeModel>(
        s: &str,
        v: &Vocabulary,
        m: &M,
        rule: SamplingRule,
    ) -> Option<TokenSequence> {
        let mut best: Option<TokenSequence> = None;
        for seq in enumerate_tokenizations(s, v).unwrap() {
            let seq = seq.with_terminator(true);
            if is_plausible_with(m, &seq, rule, Temperature::ONE, EosCheck::Include).unwrap()
                && best.as_ref().is_none_or(|b| seq.len() > b.len())
            {
                best = Some(seq);
            }
        }
        best
    }

    #[test]
    fn unrestricted_uniform_gives_all_singles() {
        let v = ab();
        let m = TableModel::new(&v, vec![1.0 / 6.0; 6]).unwrap();
        let out = longest_plausible("aab", &v, &m, SamplingRule::Unrestricted, Temperature::ONE, SearchOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!(out, v.sequence_from_strs(&["a", "a", "b", ""]).unwrap());
    }

    #[test]
    fn infeasible_is_none() {
        let v = ab();
        // Only "aab" is ever allowed at the start, and EOS after it is
        // impossible.
        let m = TableModel::new(&v, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let r = longest_plausible("aab", &v, &m, SamplingRule::TopP(0.9), Temperature::ONE, SearchOptions::default())
            .unwrap();
        assert_eq!(r, None);
        let r = longest_plausible(
            "aab",
            &v,
            &m,
            SamplingRule::TopP(0.9),
            Temperature::ONE,
            SearchOptions { eos_check: EosCheck::Ignore, ..Default::default() },
        )
        .unwrap();
        assert_eq!(r, Some(v.sequence_from_ids(&[4, 5]).unwrap()));
    }

    #[test]
    fn ties_go_to_lexicographically_smallest() {
        let v = ab();
        let m = TableModel::new(&v, vec![1.0 / 6.0; 6]).unwrap();
        // Length-2 tokenizations of "aab": (a, ab) and (aa, b). With single
        // characters excluded by a threshold the tie is broken by ids.
        let eps = (1.0f64 / 6.0).powi(3) * 0.999;
        let r = longest_plausible("aab", &v, &m, SamplingRule::SequenceThreshold(eps), Temperature::ONE, SearchOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!(r, v.sequence_from_ids(&[0, 3, 5]).unwrap());
    }

    #[test]
    fn matches_brute_force_on_table_models() {
        let v = ab();
        let m = TableModel::new(&v, vec![0.3, 0.1, 0.25, 0.05, 0.2, 0.1])
            .unwrap()
            .with(&[0], vec![0.05, 0.3, 0.1, 0.2, 0.05, 0.3])
            .unwrap()
            .with(&[2], vec![0.4, 0.1, 0.1, 0.1, 0.1, 0.2])
            .unwrap();
        for s in ["", "a", "ab", "aab", "abab", "aabaab", "baab", "aaaa"] {
            for rule in [
                SamplingRule::TopP(0.6),
                SamplingRule::TopP(0.9),
                SamplingRule::TopK(2),
                SamplingRule::TopK(4),
                SamplingRule::SequenceThreshold(1e-3),
                SamplingRule::Unrestricted,
            ] {
                let fast = longest_plausible(s, &v, &m, rule, Temperature::ONE, SearchOptions::default()).unwrap();
                let slow = brute_longest(s, &v, &m, rule);
                assert_eq!(fast.as_ref().map(|x| x.len()), slow.as_ref().map(|x| x.len()), "{s:?} {rule}");
            }
        }
    }

    #[test]
    fn prefix_pruning_lemma() {
        // An implausible prefix never has a plausible extension.
        let v = ab();
        let m = TableModel::new(&v, vec![0.3, 0.1, 0.25, 0.05, 0.2, 0.1])
            .unwrap()
            .with(&[0], vec![0.05, 0.3, 0.1, 0.2, 0.05, 0.3])
            .unwrap();
        for rule in [SamplingRule::TopP(0.7), SamplingRule::TopK(3), SamplingRule::SequenceThreshold(0.01)] {
            for s in ["aab", "abab", "aaab"] {
                for seq in enumerate_tokenizations(s, &v).unwrap() {
                    let full = is_plausible_with(&m, &seq, rule, Temperature::ONE, EosCheck::Ignore).unwrap();
                    for k in 0..seq.len() {
                        let prefix = TokenSequence::new(seq.tokens()[..k].to_vec(), false);
                        let p = is_plausible_with(&m, &prefix, rule, Temperature::ONE, EosCheck::Ignore).unwrap();
                        assert!(p || !full, "{s} {rule}");
                    }
                }
            }
        }
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let v = ab();
        let m = TableModel::new(&v, vec![1.0 / 6.0; 6]).unwrap();
        let r = longest_plausible(
            "aabaabaab",
            &v,
            &m,
            SamplingRule::TopK(5),
            Temperature::ONE,
            SearchOptions { budget: OracleBudget::nodes(3), ..Default::default() },
        );
        assert!(matches!(r, Err(Error::Budget(_))));
    }

    #[test]
    fn max_revenue_per_token_is_all_singles() {
        let v = ab();
        let mech = PricingMechanism::PerToken { r_o: 1.0 };
        let (seq, price) = max_revenue_tokenization("aab", &v, &mech, OracleBudget::default()).unwrap();
        assert_eq!(seq, v.sequence_from_strs(&["a", "a", "b"]).unwrap());
        assert_eq!(price, 3.0);
    }

    fn permutation_oracle(g: &DirectedGraph) -> bool {
        fn go(g: &DirectedGraph, path: &mut Vec<usize>, used: &mut Vec<bool>) -> bool {
            if path.len() == g.num_nodes() {
                return true;
            }
            for v in 0..g.num_nodes() {
                if used[v] {
                    continue;
                }
                if let Some(&last) = path.last() {
                    if !g.has_edge(last, v) {
                        continue;
                    }
                }
                used[v] = true;
                path.push(v);
                let ok = go(g, path, used);
                path.pop();
                used[v] = false;
                if ok {
                    return true;
                }
            }
            false
        }
        g.num_nodes() > 0 && go(g, &mut Vec::new(), &mut vec![false; g.num_nodes()])
    }

    #[test]
    fn hamiltonian_examples() {
        let path = DirectedGraph::new(3, &[(0, 1), (1, 2)]).unwrap();
        assert!(hamiltonian_path_exists(&path).unwrap());
        let star = DirectedGraph::new(3, &[(0, 1), (0, 2)]).unwrap();
        assert!(!hamiltonian_path_exists(&star).unwrap());
        let single = DirectedGraph::new(1, &[]).unwrap();
        assert!(hamiltonian_path_exists(&single).unwrap());
        let big = DirectedGraph::new(11, &[]).unwrap();
        assert!(matches!(hamiltonian_path_exists(&big), Err(Error::Budget(_))));
    }

    #[test]
    fn hamiltonian_agrees_with_permutations_on_all_3_node_graphs() {
        let pairs: Vec<(usize, usize)> = (0..3)
            .flat_map(|u| (0..3).map(move |v| (u, v)))
            .filter(|(u, v)| u != v)
            .collect();
        for bits in 0u32..(1 << pairs.len()) {
            let edges: Vec<_> = pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| bits & (1 << i) != 0)
                .map(|(_, &e)| e)
                .collect();
            let g = DirectedGraph::new(3, &edges).unwrap();
            assert_eq!(hamiltonian_path_exists(&g).unwrap(), permutation_oracle(&g));
        }
    }
}
