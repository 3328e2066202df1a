#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use tokenaudit::lattice::enumerate_tokenizations;
use tokenaudit::model::GenerativeModel;
use tokenaudit::seeds::{derive_seed, splitmix64};
use tokenaudit::vocab::{TokenId, TokenSequence, Vocabulary};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Random vocabulary: every alphabet character plus random multi-character
/// tokens, at most `max_size` entries before EOS.
pub fn random_vocab<R: Rng>(rng: &mut R, max_alphabet: usize, max_size: usize, eos: bool) -> Vocabulary {
    let k = rng.gen_range(2..=max_alphabet);
    let alphabet: Vec<char> = "abcdefgh".chars().take(k).collect();
    let mut tokens: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    let target = rng.gen_range(k + 1..=max_size);
    let mut attempts = 0;
    while tokens.len() < target && attempts < 200 {
        attempts += 1;
        let len = rng.gen_range(2..=4);
        let t: String = (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect();
        if !tokens.contains(&t) {
            tokens.push(t);
        }
    }
    // Shuffle so that ids are not sorted by length.
    tokens.shuffle(rng);
    Vocabulary::new(alphabet, tokens, eos).unwrap()
}

pub fn random_string<R: Rng>(rng: &mut R, vocab: &Vocabulary, min: usize, max: usize) -> String {
    let len = rng.gen_range(min..=max);
    (0..len).map(|_| *vocab.alphabet().choose(rng).unwrap()).collect()
}

/// A uniformly chosen tokenization of `s`.
pub fn random_tokenization<R: Rng>(rng: &mut R, vocab: &Vocabulary, s: &str) -> TokenSequence {
    let all: Vec<TokenSequence> = enumerate_tokenizations(s, vocab).unwrap().collect();
    all.choose(rng).unwrap().clone()
}

/// Deterministic pseudo-random bigram model: the next-token distribution
/// depends on the last token only, and some entries are exactly zero.
#[derive(Clone, Debug)]
pub struct RandomBigram {
    pub size: usize,
    pub eos: Option<TokenId>,
    pub seed: u64,
    pub zero_frac: f64,
    /// Larger values concentrate the mass on fewer tokens.
    pub power: i32,
}

impl RandomBigram {
    pub fn new(vocab: &Vocabulary, seed: u64, zero_frac: f64) -> Self {
        RandomBigram {
            size: vocab.len(),
            eos: vocab.eos(),
            seed,
            zero_frac,
            power: 3,
        }
    }
}

fn unit(x: u64) -> f64 {
    (splitmix64(x) >> 11) as f64 / (1u64 << 53) as f64
}

impl GenerativeModel for RandomBigram {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn eos(&self) -> Option<TokenId> {
        self.eos
    }

    fn distribution(&self, prefix: &[TokenId]) -> Vec<f64> {
        let ctx = prefix.last().map_or(u64::MAX, |t| t.0 as u64);
        let mut w: Vec<f64> = (0..self.size)
            .map(|i| {
                let key = derive_seed(&[self.seed, ctx, i as u64]);
                if unit(key ^ 0x5555) < self.zero_frac {
                    0.0
                } else {
                    unit(key).powi(self.power) + 1e-3
                }
            })
            .collect();
        if w.iter().all(|&x| x == 0.0) {
            w[(derive_seed(&[self.seed, ctx]) % self.size as u64) as usize] = 1.0;
        }
        let z: f64 = w.iter().sum();
        w.iter().map(|x| x / z).collect()
    }
}
