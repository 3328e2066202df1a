//! Reduction gadgets from directed Hamiltonian path to the longest plausible
//! tokenization problem.
//!
//! Node `j` of an `n`-node graph becomes the token `"a"×j`. With
//! `λ = n(n+1)/2` the target string is `"a"×λ`, and a tokenization of it into
//! `n` node tokens that respects the plausibility rule spells out a
//! Hamiltonian path. One extra token `"a"×λ` keeps the instance feasible for
//! the stepwise rules.
//!
//! Three realizations share the layout:
//!
//! * top-p: the intended allowed set gets mass `1-η`, everything else `η`,
//!   and `p = 1-2η`;
//! * top-k: the vocabulary gains padding tokens `"b"×i` that top up every
//!   intended set to exactly `k = n+1` members;
//! * threshold: unvisited successors get `(1-δ)/n`, other node tokens `δ`,
//!   and `ε = ((1-δ)/n)^n`.
//!
//! The threshold realization only separates Hamiltonian from non-Hamiltonian
//! tokenizations when `δ` is small enough for the shortest tokenizations
//! (about `(n+1)/2` tokens) to stay below `ε`; see [`safe_delta`] and
//! [`threshold_gap_check`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    is_plausible_with, meets_threshold, EosCheck, GenerativeModel, SamplingRule, Temperature,
};
use crate::oracle::{hamiltonian_path_exists_within, longest_plausible, SearchOptions};
use crate::vocab::{TokenId, TokenSequence, Vocabulary};

pub const DEFAULT_ETA: f64 = 1e-6;

/// Simple directed graph on nodes `0..n`, stored as successor bitmasks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DirectedGraph {
    n: usize,
    succ: Vec<u32>,
}

impl DirectedGraph {
    pub const MAX_NODES: usize = 26;

    /// Edges are zero-based. Self-loops are ignored since they never lie on
    /// a simple path.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n > Self::MAX_NODES {
            return Err(Error::InvalidInput(format!(
                "graphs are limited to {} nodes",
                Self::MAX_NODES
            )));
        }
        let mut succ = vec![0u32; n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidInput(format!("edge ({u}, {v}) outside 0..{n}")));
            }
            if u != v {
                succ[u] |= 1 << v;
            }
        }
        Ok(DirectedGraph { n, succ })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn successor_mask(&self, u: usize) -> u32 {
        self.succ[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && v < self.n && self.succ[u] & (1 << v) != 0
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|u| (0..self.n).filter(move |&v| self.has_edge(u, v)).map(move |v| (u, v)))
            .collect()
    }

    /// Every ordered pair `(u, v)` with `u != v`, in a fixed order; bit `i`
    /// of [`DirectedGraph::from_pair_mask`] selects pair `i`.
    pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
        (0..n)
            .flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v)))
            .collect()
    }

    pub fn from_pair_mask(n: usize, mask: u64) -> Result<Self> {
        let pairs = Self::all_pairs(n);
        let edges: Vec<_> = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, &e)| e)
            .collect();
        Self::new(n, &edges)
    }

    /// Each ordered pair is an edge independently with probability `p`.
    pub fn random<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Self> {
        let edges: Vec<_> = Self::all_pairs(n)
            .into_iter()
            .filter(|_| rng.gen_bool(p.clamp(0.0, 1.0)))
            .collect();
        Self::new(n, &edges)
    }

    /// Edge-list text: an optional `n <count>` (or bare count) header, then
    /// one `u v` pair per line with nodes numbered from 1. `#` starts a
    /// comment. Without a header, `n` is the largest node mentioned.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut n: Option<usize> = None;
        let mut edges = Vec::new();
        let mut max_node = 0usize;
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|f| !f.is_empty())
                .collect();
            let num = |f: &str| {
                f.parse::<usize>()
                    .map_err(|e| Error::parse("edge list", raw, e.to_string()))
            };
            match fields.as_slice() {
                ["n", count] | [count] if n.is_none() && edges.is_empty() => n = Some(num(count)?),
                [u, v] => {
                    let (u, v) = (num(u)?, num(v)?);
                    if u == 0 || v == 0 {
                        return Err(Error::parse("edge list", raw, "nodes are numbered from 1"));
                    }
                    max_node = max_node.max(u).max(v);
                    edges.push((u - 1, v - 1));
                }
                _ => return Err(Error::parse("edge list", raw, "expected `u v`")),
            }
        }
        let n = n.unwrap_or(max_node);
        if max_node > n {
            return Err(Error::parse(
                "edge list",
                text.lines().next().unwrap_or(""),
                format!("node {max_node} exceeds declared n = {n}"),
            ));
        }
        Self::new(n, &edges)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_edge_list(&text)
    }

    /// Inverse of [`DirectedGraph::parse_edge_list`].
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("n {}\n", self.n);
        for (u, v) in self.edges() {
            s.push_str(&format!("{} {}\n", u + 1, v + 1));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum GadgetVariant {
    TopP,
    TopK,
    Threshold { delta: f64 },
}

impl fmt::Display for GadgetVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GadgetVariant::TopP => write!(f, "topp"),
            GadgetVariant::TopK => write!(f, "topk"),
            GadgetVariant::Threshold { delta } => write!(f, "thresh:{delta}"),
        }
    }
}

impl FromStr for GadgetVariant {
    type Err = Error;

    /// `topp`, `topk`, `thresh` (δ chosen later) or `thresh:<δ>`. A bare
    /// `thresh` carries `δ = NaN` until [`GadgetVariant::resolve`] fills it.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "topp" => Ok(GadgetVariant::TopP),
            "topk" => Ok(GadgetVariant::TopK),
            "thresh" => Ok(GadgetVariant::Threshold { delta: f64::NAN }),
            other => {
                let d = other
                    .strip_prefix("thresh:")
                    .ok_or_else(|| Error::parse("gadget variant", s, "expected topp, topk or thresh[:δ]"))?;
                let delta = d
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| Error::parse("gadget variant", s, e.to_string()))?;
                Ok(GadgetVariant::Threshold { delta })
            }
        }
    }
}

impl GadgetVariant {
    /// Replaces an unset threshold δ with [`safe_delta`] for `n`.
    pub fn resolve(self, n: usize) -> Self {
        match self {
            GadgetVariant::Threshold { delta } if delta.is_nan() => GadgetVariant::Threshold {
                delta: safe_delta(n),
            },
            v => v,
        }
    }
}

/// A δ for which the threshold gadget separates Hamiltonian tokenizations
/// from all others.
///
/// A non-Hamiltonian tokenization of `"a"×λ` must take at least one δ step,
/// every other step has probability at most `q = (1-δ)/n`, and it has at
/// least `⌈(n+1)/2⌉` tokens, so its probability is at most
/// `δ·q^(⌈(n+1)/2⌉-1)`. That is below `ε = q^n` iff `δ < q^e` with
/// `e = ⌊(n+1)/2⌋`. Any `δ ≤ 1/(n+1)` has `q ≥ 1/(n+1)`, so half of
/// `(n+1)^-e` is safe.
pub fn safe_delta(n: usize) -> f64 {
    let e = (n as i32 + 1) / 2;
    0.5 * ((n + 1) as f64).powi(-e)
}

#[derive(Clone, Debug)]
pub struct GadgetModel {
    n: usize,
    lambda: usize,
    succ: Vec<u32>,
    variant: GadgetVariant,
    eta: f64,
    size: usize,
    eos: TokenId,
}

/// What the model needs to know about a prefix.
struct PrefixState {
    chars: usize,
    visited: u32,
    last_node: Option<usize>,
}

impl GadgetModel {
    fn padding_id(&self, i: usize) -> TokenId {
        TokenId((self.n + 1 + i) as u32)
    }

    fn state(&self, prefix: &[TokenId]) -> PrefixState {
        let mut st = PrefixState {
            chars: 0,
            visited: 0,
            last_node: None,
        };
        for &id in prefix {
            let i = id.index();
            if i < self.n {
                st.chars += i + 1;
                st.visited |= 1 << i;
                st.last_node = Some(i);
            } else if i == self.n {
                st.chars += self.lambda;
                st.last_node = None;
            } else if id != self.eos {
                st.chars += i - self.n;
                st.last_node = None;
            }
        }
        st
    }

    /// Unvisited successors of the last node; at the empty prefix every node.
    fn open_nodes(&self, prefix: &[TokenId], st: &PrefixState) -> u32 {
        if prefix.is_empty() {
            return if self.n == 32 { u32::MAX } else { (1u32 << self.n) - 1 };
        }
        match st.last_node {
            Some(u) => self.succ[u] & !st.visited,
            None => 0,
        }
    }

    /// The allowed set the construction intends at `prefix` for the top-p
    /// and top-k variants, ascending id. `None` for the threshold variant.
    pub fn intended_allowed(&self, prefix: &[TokenId]) -> Option<Vec<TokenId>> {
        if matches!(self.variant, GadgetVariant::Threshold { .. }) {
            return None;
        }
        let st = self.state(prefix);
        let mut set: Vec<TokenId> = if prefix.is_empty() {
            (0..=self.n).map(|i| TokenId(i as u32)).collect()
        } else if st.chars >= self.lambda {
            vec![self.eos]
        } else {
            let open = self.open_nodes(prefix, &st);
            (0..self.n)
                .filter(|&v| open & (1 << v) != 0)
                .map(|v| TokenId(v as u32))
                .chain(std::iter::once(self.eos))
                .collect()
        };
        if self.variant == GadgetVariant::TopK {
            let missing = (self.n + 1).saturating_sub(set.len());
            set.extend((0..missing).map(|i| self.padding_id(i)));
        }
        set.sort();
        Some(set)
    }

    fn threshold_distribution(&self, prefix: &[TokenId], delta: f64) -> Vec<f64> {
        let st = self.state(prefix);
        let mut d = vec![0.0; self.size];
        if st.chars >= self.lambda {
            d[self.eos.index()] = 1.0;
            return d;
        }
        let open = self.open_nodes(prefix, &st);
        let hi = (1.0 - delta) / self.n as f64;
        let mut mass = 0.0;
        for (v, p) in d.iter_mut().take(self.n).enumerate() {
            *p = if open & (1 << v) != 0 { hi } else { delta };
            mass += *p;
        }
        // λ-token stays at zero.
        d[self.eos.index()] = (1.0 - mass).max(0.0);
        d
    }
}

impl GenerativeModel for GadgetModel {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn eos(&self) -> Option<TokenId> {
        Some(self.eos)
    }

    fn distribution(&self, prefix: &[TokenId]) -> Vec<f64> {
        if let GadgetVariant::Threshold { delta } = self.variant {
            return self.threshold_distribution(prefix, delta);
        }
        let intended = self.intended_allowed(prefix).unwrap_or_default();
        let rest = self.size - intended.len();
        let (inside, outside) = if rest == 0 {
            (1.0 / intended.len() as f64, 0.0)
        } else {
            (
                (1.0 - self.eta) / intended.len() as f64,
                self.eta / rest as f64,
            )
        };
        let mut d = vec![outside; self.size];
        for id in intended {
            d[id.index()] = inside;
        }
        d
    }
}

#[derive(Clone, Debug)]
pub struct Gadget {
    pub graph: DirectedGraph,
    pub variant: GadgetVariant,
    pub vocab: Vocabulary,
    pub model: GadgetModel,
    pub rule: SamplingRule,
    pub target: String,
    pub lambda: usize,
}

impl Gadget {
    /// Token standing for zero-based node `v`.
    pub fn node_token(&self, v: usize) -> TokenId {
        TokenId(v as u32)
    }

    /// The tokenization spelled by a node sequence, terminated with EOS.
    pub fn path_tokenization(&self, path: &[usize]) -> TokenSequence {
        TokenSequence::new(path.iter().map(|&v| self.node_token(v)).collect(), true)
    }

    /// Node sequence of a tokenization made only of node tokens.
    pub fn as_node_path(&self, seq: &TokenSequence) -> Option<Vec<usize>> {
        seq.tokens()
            .iter()
            .map(|id| (id.index() < self.graph.num_nodes()).then_some(id.index()))
            .collect()
    }

    /// Whether `seq` visits every node once along graph edges.
    pub fn is_hamiltonian_tokenization(&self, seq: &TokenSequence) -> bool {
        let n = self.graph.num_nodes();
        let Some(path) = self.as_node_path(seq) else {
            return false;
        };
        let mut seen = 0u32;
        for &v in &path {
            if seen & (1 << v) != 0 {
                return false;
            }
            seen |= 1 << v;
        }
        path.len() == n && path.windows(2).all(|w| self.graph.has_edge(w[0], w[1]))
    }
}

pub fn build_gadget(graph: &DirectedGraph, variant: GadgetVariant) -> Result<Gadget> {
    build_gadget_with_eta(graph, variant, DEFAULT_ETA)
}

pub fn build_gadget_with_eta(graph: &DirectedGraph, variant: GadgetVariant, eta: f64) -> Result<Gadget> {
    let n = graph.num_nodes();
    if n < 2 {
        return Err(Error::Construction(format!(
            "gadgets need at least 2 nodes, got {n}"
        )));
    }
    if n > 31 {
        return Err(Error::Construction("gadgets support at most 31 nodes".into()));
    }
    let variant = variant.resolve(n);
    let lambda = n * (n + 1) / 2;
    let mut tokens: Vec<String> = (1..=n).map(|j| "a".repeat(j)).collect();
    tokens.push("a".repeat(lambda));
    let mut alphabet = vec!['a'];
    let rule = match variant {
        GadgetVariant::TopP => {
            if !(eta > 0.0 && eta < 1.0 / (4.0 * (n as f64 + 2.0))) {
                return Err(Error::Construction(format!("η = {eta} is too large for n = {n}")));
            }
            SamplingRule::top_p(1.0 - 2.0 * eta)?
        }
        GadgetVariant::TopK => {
            if !(eta > 0.0 && eta < 1.0 / (4.0 * (n as f64 + 2.0))) {
                return Err(Error::Construction(format!("η = {eta} is too large for n = {n}")));
            }
            alphabet.push('b');
            tokens.extend((1..=n).map(|i| "b".repeat(i)));
            SamplingRule::top_k(n + 1)?
        }
        GadgetVariant::Threshold { delta } => {
            if !(delta > 0.0 && delta < 1.0 / (n as f64 + 1.0)) {
                return Err(Error::Construction(format!(
                    "δ must lie in (0, 1/(n+1)), got {delta} for n = {n}"
                )));
            }
            let eps = ((1.0 - delta) / n as f64).powi(n as i32);
            SamplingRule::threshold(eps)?
        }
    };
    let vocab = Vocabulary::new(alphabet, tokens, true)?;
    let eos = vocab
        .eos()
        .ok_or_else(|| Error::Construction("gadget vocabulary lacks EOS".into()))?;
    let model = GadgetModel {
        n,
        lambda,
        succ: (0..n).map(|u| graph.successor_mask(u)).collect(),
        variant,
        eta,
        size: vocab.len(),
        eos,
    };
    Ok(Gadget {
        graph: graph.clone(),
        variant,
        vocab,
        model,
        rule,
        target: "a".repeat(lambda),
        lambda,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionCheck {
    pub nodes: usize,
    pub variant: String,
    pub hamiltonian: bool,
    /// Token count of the longest plausible tokenization, EOS excluded;
    /// `None` when no tokenization is plausible.
    pub longest: Option<usize>,
    pub agrees: bool,
}

/// Builds the gadget, solves both problems exactly and compares. The
/// reduction holds when a Hamiltonian path exists exactly when the longest
/// plausible tokenization has more than one token, and then has `n`.
pub fn verify_reduction(
    graph: &DirectedGraph,
    variant: GadgetVariant,
    opts: SearchOptions,
    node_limit: usize,
) -> Result<ReductionCheck> {
    let gadget = build_gadget(graph, variant)?;
    let ham = hamiltonian_path_exists_within(graph, node_limit)?;
    let best = longest_plausible(
        &gadget.target,
        &gadget.vocab,
        &gadget.model,
        gadget.rule,
        Temperature::ONE,
        SearchOptions {
            terminate: true,
            eos_check: EosCheck::Include,
            ..opts
        },
    )?;
    let longest = best.as_ref().map(TokenSequence::len);
    let len = longest.unwrap_or(0);
    let n = graph.num_nodes();
    let agrees = if ham {
        len == n && best.as_ref().is_some_and(|b| gadget.is_hamiltonian_tokenization(b))
    } else {
        len <= 1
    };
    Ok(ReductionCheck {
        nodes: n,
        variant: gadget.variant.to_string(),
        hamiltonian: ham,
        longest,
        agrees,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapCheck {
    pub delta: f64,
    pub epsilon: f64,
    /// Every Hamiltonian tokenization has probability `ε` (within 1e-12
    /// relative).
    pub hamiltonian_exact: bool,
    /// Highest-probability non-Hamiltonian tokenization that still reaches
    /// `ε`, if any.
    pub violation: Option<(Vec<u32>, f64)>,
    pub holds: bool,
}

/// Checks the probability gap of the threshold gadget: Hamiltonian
/// tokenizations sit exactly at `ε`, all others strictly below.
///
/// Only tokenizations whose prefix probability stays at or above `ε` are
/// explored, which is enough because probabilities only shrink.
pub fn threshold_gap_check(graph: &DirectedGraph, delta: f64) -> Result<GapCheck> {
    let gadget = build_gadget(graph, GadgetVariant::Threshold { delta })?;
    let SamplingRule::SequenceThreshold(eps) = gadget.rule else {
        return Err(Error::Construction("threshold gadget without threshold rule".into()));
    };
    let lattice = crate::lattice::Lattice::build(&gadget.target, &gadget.vocab)?;
    let mut ham_exact = true;
    let mut violation: Option<(Vec<u32>, f64)> = None;
    let mut stack: Vec<(usize, Vec<TokenId>, f64)> = vec![(0, Vec::new(), 1.0)];
    let eos = gadget.model.eos;
    while let Some((offset, prefix, prob)) = stack.pop() {
        let dist = gadget.model.distribution(&prefix);
        if offset == lattice.len() {
            let p = prob * dist[eos.index()];
            let seq = TokenSequence::new(prefix, true);
            if gadget.is_hamiltonian_tokenization(&seq) {
                ham_exact &= (p - eps).abs() <= 1e-12 * eps;
            } else if meets_threshold(p, eps) && violation.as_ref().is_none_or(|(_, q)| p > *q) {
                violation = Some((seq.to_ids(&gadget.vocab), p));
            }
            continue;
        }
        for &(id, len) in lattice.edges_at(offset) {
            let p = prob * dist[id.index()];
            if p > 0.0 && meets_threshold(p, eps) {
                let mut next = prefix.clone();
                next.push(id);
                stack.push((offset + len, next, p));
            }
        }
    }
    Ok(GapCheck {
        delta,
        epsilon: eps,
        hamiltonian_exact: ham_exact,
        holds: ham_exact && violation.is_none(),
        violation,
    })
}

/// Plausibility of a node path under the gadget; convenience for tests and
/// the CLI.
pub fn path_is_plausible(gadget: &Gadget, path: &[usize]) -> Result<bool> {
    is_plausible_with(
        &gadget.model,
        &gadget.path_tokenization(path),
        gadget.rule,
        Temperature::ONE,
        EosCheck::Include,
    )
}
