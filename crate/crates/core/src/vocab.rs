//! Token vocabularies and token sequences.
//!
//! A [`Vocabulary`] owns an alphabet, a dense table of token renderings and an
//! optional end-of-sequence token. Every alphabet character must itself be a
//! token, which guarantees that every string over the alphabet has at least
//! one tokenization (the all-single-character one).
//!
//! A [`TokenSequence`] holds the non-EOS tokens of a sequence plus a flag for
//! the trailing EOS terminator. Keeping EOS out of the id list makes the
//! "EOS only at the end, zero characters, zero length" rule structural.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// On-disk vocabulary layout. Token ids are array positions; EOS, if
/// present, receives id `tokens.len()`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VocabularyFile {
    pub alphabet: Vec<String>,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub eos: bool,
}

#[derive(Default, Clone, Debug)]
struct TrieNode {
    children: BTreeMap<char, usize>,
    token: Option<TokenId>,
}

#[derive(Clone, Debug)]
pub struct Vocabulary {
    alphabet: Vec<char>,
    tokens: Vec<String>,
    token_chars: Vec<usize>,
    eos: Option<TokenId>,
    index: HashMap<String, TokenId>,
    trie: Vec<TrieNode>,
    max_token_chars: usize,
}

impl Vocabulary {
    pub fn new(alphabet: Vec<char>, tokens: Vec<String>, eos: bool) -> Result<Self> {
        let mut seen = HashSet::new();
        for &c in &alphabet {
            if !seen.insert(c) {
                return Err(Error::InvalidVocabulary(format!(
                    "duplicate alphabet character {c:?}"
                )));
            }
        }

        let mut index = HashMap::with_capacity(tokens.len());
        let mut token_chars = Vec::with_capacity(tokens.len() + 1);
        let mut trie = vec![TrieNode::default()];
        let mut max_token_chars = 0;
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::InvalidVocabulary(format!("token {i} is empty")));
            }
            if let Some(c) = tok.chars().find(|c| !seen.contains(c)) {
                return Err(Error::InvalidVocabulary(format!(
                    "token {i} ({tok:?}) uses {c:?} outside the alphabet"
                )));
            }
            let id = TokenId(i as u32);
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::InvalidVocabulary(format!(
                    "duplicate token rendering {tok:?}"
                )));
            }
            let mut node = 0;
            for c in tok.chars() {
                node = match trie[node].children.get(&c) {
                    Some(&next) => next,
                    None => {
                        trie.push(TrieNode::default());
                        let next = trie.len() - 1;
                        trie[node].children.insert(c, next);
                        next
                    }
                };
            }
            trie[node].token = Some(id);
            let n = tok.chars().count();
            max_token_chars = max_token_chars.max(n);
            token_chars.push(n);
        }

        for &c in &alphabet {
            if !index.contains_key(c.encode_utf8(&mut [0; 4]) as &str) {
                return Err(Error::InvalidVocabulary(format!(
                    "alphabet character {c:?} is not a token"
                )));
            }
        }

        let mut tokens = tokens;
        let eos = if eos {
            let id = TokenId(tokens.len() as u32);
            tokens.push(String::new());
            token_chars.push(0);
            Some(id)
        } else {
            None
        };

        Ok(Vocabulary {
            alphabet,
            tokens,
            token_chars,
            eos,
            index,
            trie,
            max_token_chars,
        })
    }

    /// The two-letter vocabulary used throughout the test-suite:
    /// `a`, `b`, `aa`, `ab`, `aab`, EOS.
    pub fn reference_ab() -> Self {
        Vocabulary::new(
            vec!['a', 'b'],
            ["a", "b", "aa", "ab", "aab"].map(String::from).to_vec(),
            true,
        )
        .expect("reference vocabulary is well formed")
    }

    pub fn from_file_repr(file: VocabularyFile) -> Result<Self> {
        let mut alphabet = Vec::with_capacity(file.alphabet.len());
        for s in &file.alphabet {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => alphabet.push(c),
                _ => {
                    return Err(Error::InvalidVocabulary(format!(
                        "alphabet entry {s:?} is not a single character"
                    )))
                }
            }
        }
        Vocabulary::new(alphabet, file.tokens, file.eos)
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let file: VocabularyFile = serde_json::from_str(json)?;
        Self::from_file_repr(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_file_repr(&self) -> VocabularyFile {
        VocabularyFile {
            alphabet: self.alphabet.iter().map(|c| c.to_string()).collect(),
            tokens: self.tokens[..self.num_text_tokens()].to_vec(),
            eos: self.eos.is_some(),
        }
    }

    /// Number of token ids, EOS included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of non-EOS tokens. These occupy ids `0..num_text_tokens()`.
    pub fn num_text_tokens(&self) -> usize {
        self.tokens.len() - usize::from(self.eos.is_some())
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn eos(&self) -> Option<TokenId> {
        self.eos
    }

    pub fn is_eos(&self, id: TokenId) -> bool {
        self.eos == Some(id)
    }

    pub fn max_token_chars(&self) -> usize {
        self.max_token_chars
    }

    pub fn contains_char(&self, c: char) -> bool {
        self.alphabet.contains(&c)
    }

    pub fn token_str(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    /// Character count of a token rendering (0 for EOS).
    pub fn token_chars(&self, id: TokenId) -> Option<usize> {
        self.token_chars.get(id.index()).copied()
    }

    pub fn id_of(&self, rendering: &str) -> Option<TokenId> {
        self.index.get(rendering).copied()
    }

    /// Iterator over non-EOS token ids with their renderings.
    pub fn text_tokens(&self) -> impl Iterator<Item = (TokenId, &str)> + '_ {
        self.tokens[..self.num_text_tokens()]
            .iter()
            .enumerate()
            .map(|(i, s)| (TokenId(i as u32), s.as_str()))
    }

    /// All `(token, char_len)` whose rendering matches `chars` at `offset`,
    /// in order of increasing length.
    pub fn matches_at(&self, chars: &[char], offset: usize) -> Vec<(TokenId, usize)> {
        let mut out = Vec::new();
        let mut node = 0;
        for (k, c) in chars[offset..].iter().enumerate() {
            match self.trie[node].children.get(c) {
                Some(&next) => node = next,
                None => break,
            }
            if let Some(id) = self.trie[node].token {
                out.push((id, k + 1));
            }
        }
        out
    }

    /// Longest token matching `chars` at `offset`.
    pub fn longest_match_at(&self, chars: &[char], offset: usize) -> Option<(TokenId, usize)> {
        self.matches_at(chars, offset).pop()
    }

    /// Checks that every character of `s` belongs to the alphabet and
    /// returns its scalar values.
    pub fn check_string(&self, s: &str) -> Result<Vec<char>> {
        let chars: Vec<char> = s.chars().collect();
        if let Some(c) = chars.iter().find(|c| !self.contains_char(**c)) {
            return Err(Error::InvalidInput(format!(
                "character {c:?} is outside the alphabet"
            )));
        }
        Ok(chars)
    }

    /// Builds a sequence from raw ids. A trailing EOS id becomes the
    /// terminator flag; EOS anywhere else is rejected.
    pub fn sequence_from_ids(&self, ids: &[u32]) -> Result<TokenSequence> {
        let mut tokens = Vec::with_capacity(ids.len());
        let mut eos = false;
        for (pos, &raw) in ids.iter().enumerate() {
            let id = TokenId(raw);
            if id.index() >= self.len() {
                return Err(Error::InvalidSequence(format!(
                    "unknown token id {raw} at position {pos}"
                )));
            }
            if self.is_eos(id) {
                if pos + 1 != ids.len() {
                    return Err(Error::InvalidSequence(format!(
                        "EOS at position {pos} is not the final element"
                    )));
                }
                eos = true;
            } else {
                tokens.push(id);
            }
        }
        Ok(TokenSequence { tokens, eos })
    }

    /// Builds a sequence from token renderings. The empty rendering denotes
    /// EOS.
    pub fn sequence_from_strs<S: AsRef<str>>(&self, parts: &[S]) -> Result<TokenSequence> {
        let ids = parts
            .iter()
            .map(|p| {
                let p = p.as_ref();
                if p.is_empty() {
                    self.eos.map(|e| e.0).ok_or_else(|| {
                        Error::InvalidSequence("vocabulary has no EOS token".into())
                    })
                } else {
                    self.id_of(p)
                        .map(|id| id.0)
                        .ok_or_else(|| Error::InvalidSequence(format!("unknown token {p:?}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        self.sequence_from_ids(&ids)
    }

    pub fn validate(&self, seq: &TokenSequence) -> Result<()> {
        let limit = self.num_text_tokens();
        if let Some((pos, id)) = seq
            .tokens
            .iter()
            .enumerate()
            .find(|(_, id)| id.index() >= limit)
        {
            return Err(Error::InvalidSequence(format!(
                "token id {id} at position {pos} is not a text token"
            )));
        }
        if seq.eos && self.eos.is_none() {
            return Err(Error::InvalidSequence(
                "sequence is EOS-terminated but the vocabulary has no EOS".into(),
            ));
        }
        Ok(())
    }

    /// Concatenation of token renderings; EOS renders as the empty string.
    pub fn render(&self, seq: &TokenSequence) -> Result<String> {
        self.validate(seq)?;
        Ok(seq
            .tokens
            .iter()
            .map(|id| self.tokens[id.index()].as_str())
            .collect())
    }

    /// Number of Unicode scalar values in the rendered string.
    pub fn char_count(&self, seq: &TokenSequence) -> Result<usize> {
        self.validate(seq)?;
        Ok(seq.tokens.iter().map(|id| self.token_chars[id.index()]).sum())
    }

    pub fn count_char(&self, seq: &TokenSequence, c: char) -> Result<usize> {
        self.validate(seq)?;
        Ok(seq
            .tokens
            .iter()
            .map(|id| self.tokens[id.index()].chars().filter(|&x| x == c).count())
            .sum())
    }
}

/// An ordered list of non-EOS tokens with an optional EOS terminator.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<TokenId>,
    #[serde(default)]
    eos: bool,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>, eos: bool) -> Self {
        TokenSequence { tokens, eos }
    }

    pub fn from_raw(ids: &[u32]) -> Self {
        TokenSequence {
            tokens: ids.iter().copied().map(TokenId).collect(),
            eos: false,
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Billed length: EOS does not count.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn is_terminated(&self) -> bool {
        self.eos
    }

    pub fn set_terminated(&mut self, eos: bool) {
        self.eos = eos;
    }

    pub fn with_terminator(mut self, eos: bool) -> Self {
        self.eos = eos;
        self
    }

    pub fn push(&mut self, id: TokenId) {
        self.tokens.push(id);
    }

    /// Raw ids including the trailing EOS id when terminated.
    pub fn to_ids(&self, vocab: &Vocabulary) -> Vec<u32> {
        let mut ids: Vec<u32> = self.tokens.iter().map(|t| t.0).collect();
        if self.eos {
            if let Some(e) = vocab.eos() {
                ids.push(e.0);
            }
        }
        ids
    }

    /// Replaces the token at `pos` by the pair `(left, right)`.
    pub fn replace_with_pair(&mut self, pos: usize, left: TokenId, right: TokenId) {
        self.tokens[pos] = left;
        self.tokens.insert(pos + 1, right);
    }
}

impl FromIterator<TokenId> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        TokenSequence {
            tokens: iter.into_iter().collect(),
            eos: false,
        }
    }
}
