//! The tokenization lattice of a string: nodes are character offsets, edges
//! are tokens whose rendering matches at an offset. Paths from offset 0 to
//! the end are exactly the tokenizations of the string.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, TokenSequence, Vocabulary};

#[derive(Clone, Debug)]
pub struct Lattice {
    chars: Vec<char>,
    // Per offset: (token, char length), ascending token id.
    edges: Vec<Vec<(TokenId, usize)>>,
}

impl Lattice {
    pub fn build(s: &str, vocab: &Vocabulary) -> Result<Self> {
        let chars = vocab.check_string(s)?;
        let edges = (0..chars.len())
            .map(|i| {
                let mut m = vocab.matches_at(&chars, i);
                m.sort_by_key(|&(id, _)| id);
                m
            })
            .collect();
        Ok(Lattice { chars, edges })
    }

    /// Number of characters in the underlying string.
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Tokens starting at `offset`, ascending id.
    pub fn edges_at(&self, offset: usize) -> &[(TokenId, usize)] {
        &self.edges[offset]
    }

    pub fn count(&self) -> Result<u128> {
        let n = self.chars.len();
        let mut ways = vec![0u128; n + 1];
        ways[n] = 1;
        for i in (0..n).rev() {
            let mut acc: u128 = 0;
            for &(_, len) in &self.edges[i] {
                acc = acc.checked_add(ways[i + len]).ok_or_else(|| {
                    Error::InvalidInput("tokenization count overflows u128".into())
                })?;
            }
            ways[i] = acc;
        }
        Ok(ways[0])
    }

    pub fn into_tokenizations(self) -> Tokenizations {
        Tokenizations {
            lattice: self,
            stack: vec![(0, 0)],
            current: Vec::new(),
        }
    }
}

/// Depth-first stream over all tokenizations of a string. Order is
/// offset-major with ascending token id at each offset, which is also the
/// lexicographic order of the id sequences.
#[derive(Clone, Debug)]
pub struct Tokenizations {
    lattice: Lattice,
    stack: Vec<(usize, usize)>,
    current: Vec<TokenId>,
}

impl Iterator for Tokenizations {
    type Item = TokenSequence;

    fn next(&mut self) -> Option<TokenSequence> {
        let n = self.lattice.len();
        loop {
            let (offset, next) = *self.stack.last()?;
            if offset == n {
                let out = TokenSequence::new(self.current.clone(), false);
                self.stack.pop();
                self.current.pop();
                return Some(out);
            }
            let edges = &self.lattice.edges[offset];
            if next < edges.len() {
                let (id, len) = edges[next];
                if let Some(top) = self.stack.last_mut() {
                    top.1 += 1;
                }
                self.current.push(id);
                self.stack.push((offset + len, 0));
            } else {
                self.stack.pop();
                self.current.pop();
            }
        }
    }
}

pub fn enumerate_tokenizations(s: &str, vocab: &Vocabulary) -> Result<Tokenizations> {
    Ok(Lattice::build(s, vocab)?.into_tokenizations())
}

pub fn count_tokenizations(s: &str, vocab: &Vocabulary) -> Result<u128> {
    Lattice::build(s, vocab)?.count()
}

/// Left-to-right longest-match tokenization. Never fails on strings over
/// the alphabet because every character is a token.
pub fn greedy_tokenize(s: &str, vocab: &Vocabulary) -> Result<TokenSequence> {
    let chars = vocab.check_string(s)?;
    let mut out = TokenSequence::empty();
    let mut i = 0;
    while i < chars.len() {
        let (id, len) = vocab
            .longest_match_at(&chars, i)
            .ok_or_else(|| Error::InvalidVocabulary(format!("no token matches at {i}")))?;
        out.push(id);
        i += len;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Split {
    pub position: usize,
    pub left: TokenId,
    pub right: TokenId,
}

/// Every way to write `id` as the concatenation of two non-empty tokens,
/// ordered by split point.
pub fn token_splits(vocab: &Vocabulary, id: TokenId) -> Vec<(TokenId, TokenId)> {
    let Some(rendering) = vocab.token_str(id) else {
        return Vec::new();
    };
    if vocab.is_eos(id) {
        return Vec::new();
    }
    rendering
        .char_indices()
        .skip(1)
        .filter_map(|(byte, _)| {
            let left = vocab.id_of(&rendering[..byte])?;
            let right = vocab.id_of(&rendering[byte..])?;
            Some((left, right))
        })
        .collect()
}

/// All `(position, left, right)` such that `left ++ right` renders like the
/// token at `position`. EOS is never split.
pub fn valid_splits(vocab: &Vocabulary, seq: &TokenSequence) -> Result<Vec<Split>> {
    vocab.validate(seq)?;
    Ok(seq
        .tokens()
        .iter()
        .enumerate()
        .flat_map(|(position, &id)| {
            token_splits(vocab, id)
                .into_iter()
                .map(move |(left, right)| Split {
                    position,
                    left,
                    right,
                })
        })
        .collect())
}

pub fn apply_split(seq: &TokenSequence, split: &Split) -> TokenSequence {
    let mut out = seq.clone();
    out.replace_with_pair(split.position, split.left, split.right);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> Vocabulary {
        Vocabulary::reference_ab()
    }

    fn strs(v: &Vocabulary, seq: &TokenSequence) -> Vec<String> {
        seq.tokens()
            .iter()
            .map(|&id| v.token_str(id).unwrap().to_string())
            .collect()
    }

    /// Independent backtracking over string prefixes, used as an oracle.
    fn brute_tokenizations(s: &str, v: &Vocabulary) -> Vec<Vec<String>> {
        if s.is_empty() {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for (_, tok) in v.text_tokens() {
            if let Some(rest) = s.strip_prefix(tok) {
                for mut tail in brute_tokenizations(rest, v) {
                    tail.insert(0, tok.to_string());
                    out.push(tail);
                }
            }
        }
        out
    }

    #[test]
    fn enumerate_aab() {
        let v = ab();
        let all: Vec<Vec<String>> = enumerate_tokenizations("aab", &v)
            .unwrap()
            .map(|s| strs(&v, &s))
            .collect();
        assert_eq!(
            all,
            vec![
                vec!["a", "a", "b"],
                vec!["a", "ab"],
                vec!["aa", "b"],
                vec!["aab"],
            ]
        );
        let mut brute = brute_tokenizations("aab", &v);
        brute.sort();
        let mut got = all.clone();
        got.sort();
        let brute: Vec<Vec<String>> = brute;
        assert_eq!(got, brute);
    }

    #[test]
    fn enumerate_trivial_cases() {
        let v = ab();
        let empty: Vec<_> = enumerate_tokenizations("", &v).unwrap().collect();
        assert_eq!(empty, vec![TokenSequence::empty()]);
        let b: Vec<_> = enumerate_tokenizations("b", &v).unwrap().collect();
        assert_eq!(b, vec![TokenSequence::from_raw(&[1])]);
    }

    #[test]
    fn enumerate_rejects_foreign_chars() {
        let v = ab();
        assert!(matches!(
            enumerate_tokenizations("abc", &v),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn count_examples() {
        let v = ab();
        assert_eq!(count_tokenizations("aab", &v).unwrap(), 4);
        assert_eq!(count_tokenizations("", &v).unwrap(), 1);
    }

    #[test]
    fn count_compositions_of_six() {
        // Compositions of 6 into parts {1,2,3,6}, counted by a direct
        // recursion over part sizes.
        fn compositions(n: usize, parts: &[usize]) -> u128 {
            if n == 0 {
                return 1;
            }
            parts
                .iter()
                .filter(|&&p| p <= n)
                .map(|&p| compositions(n - p, parts))
                .sum()
        }
        let v = Vocabulary::new(
            vec!['a'],
            ["a", "aa", "aaa", "aaaaaa"].map(String::from).to_vec(),
            true,
        )
        .unwrap();
        let expected = compositions(6, &[1, 2, 3, 6]);
        assert_eq!(expected, 25);
        assert_eq!(count_tokenizations("aaaaaa", &v).unwrap(), expected);
        assert_eq!(
            enumerate_tokenizations("aaaaaa", &v).unwrap().count() as u128,
            expected
        );
    }

    #[test]
    fn greedy_examples() {
        let v = ab();
        assert_eq!(greedy_tokenize("aab", &v).unwrap(), TokenSequence::from_raw(&[4]));
        assert_eq!(greedy_tokenize("ba", &v).unwrap(), TokenSequence::from_raw(&[1, 0]));
        assert_eq!(greedy_tokenize("", &v).unwrap(), TokenSequence::empty());
    }

    #[test]
    fn splits_examples() {
        let v = ab();
        let s = v.sequence_from_strs(&["aab"]).unwrap();
        let got: Vec<(usize, String, String)> = valid_splits(&v, &s)
            .unwrap()
            .into_iter()
            .map(|sp| {
                (
                    sp.position,
                    v.token_str(sp.left).unwrap().into(),
                    v.token_str(sp.right).unwrap().into(),
                )
            })
            .collect();
        assert_eq!(
            got,
            vec![(0, "a".into(), "ab".into()), (0, "aa".into(), "b".into())]
        );

        let s = v.sequence_from_strs(&["a", "b"]).unwrap();
        assert!(valid_splits(&v, &s).unwrap().is_empty());

        let s = v.sequence_from_strs(&["aa", "aa"]).unwrap();
        let got = valid_splits(&v, &s).unwrap();
        assert_eq!(
            got,
            vec![
                Split { position: 0, left: TokenId(0), right: TokenId(0) },
                Split { position: 1, left: TokenId(0), right: TokenId(0) },
            ]
        );
    }

    #[test]
    fn splits_never_touch_eos() {
        let v = ab();
        let s = v.sequence_from_ids(&[0, 5]).unwrap();
        assert!(valid_splits(&v, &s).unwrap().is_empty());
        assert!(token_splits(&v, TokenId(5)).is_empty());
    }

    #[test]
    fn exhaustive_split_scan_matches() {
        // Oracle: test every token pair for concatenation equality.
        let v = ab();
        for (id, tok) in v.text_tokens() {
            let mut brute = Vec::new();
            for (l, ls) in v.text_tokens() {
                for (r, rs) in v.text_tokens() {
                    if format!("{ls}{rs}") == tok {
                        brute.push((l, r));
                    }
                }
            }
            brute.sort_by_key(|&(l, _)| v.token_chars(l).unwrap());
            assert_eq!(token_splits(&v, id), brute, "token {tok}");
        }
    }
}
