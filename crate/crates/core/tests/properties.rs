mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_string, random_tokenization, random_vocab, RandomBigram};
use tokenaudit::lattice::{count_tokenizations, enumerate_tokenizations, greedy_tokenize};
use tokenaudit::model::{is_plausible, SamplingRule, Temperature};
use tokenaudit::oracle::{longest_plausible, SearchOptions};
use tokenaudit::policy::{apply_heuristic, apply_random_split};
use tokenaudit::pricing::{Micros, PricingMechanism};
use tokenaudit::seeds::derive_seed;
use tokenaudit::vocab::Vocabulary;

fn setup(seed: u64) -> (ChaCha8Rng, Vocabulary) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eos = rng.gen();
    let vocab = random_vocab(&mut rng, 3, 12, eos);
    (rng, vocab)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn greedy_renders_input(seed in any::<u64>()) {
        let (mut rng, vocab) = setup(seed);
        let s = random_string(&mut rng, &vocab, 0, 20);
        let g = greedy_tokenize(&s, &vocab).unwrap();
        prop_assert_eq!(vocab.render(&g).unwrap(), s);
    }

    #[test]
    fn count_matches_enumeration(seed in any::<u64>()) {
        let (mut rng, vocab) = setup(seed);
        let s = random_string(&mut rng, &vocab, 0, 12);
        let all: Vec<_> = enumerate_tokenizations(&s, &vocab).unwrap().collect();
        prop_assert_eq!(count_tokenizations(&s, &vocab).unwrap(), all.len() as u128);
        for t in &all {
            prop_assert_eq!(vocab.render(t).unwrap(), s.clone());
        }
        // Lexicographic order, hence no duplicates.
        for w in all.windows(2) {
            prop_assert!(w[0].to_ids(&vocab) < w[1].to_ids(&vocab));
        }
    }

    #[test]
    fn random_split_adds_one_token_per_split(seed in any::<u64>(), m in 0usize..10, split_seed in any::<u64>()) {
        let (mut rng, vocab) = setup(seed);
        let s = random_string(&mut rng, &vocab, 0, 14);
        let seq = random_tokenization(&mut rng, &vocab, &s);
        let out = apply_random_split(&vocab, &seq, m, split_seed).unwrap();
        prop_assert_eq!(vocab.render(&out.reported).unwrap(), s);
        prop_assert_eq!(out.reported.len(), seq.len() + out.splits_applied);
        // Deterministic in the seed.
        prop_assert_eq!(apply_random_split(&vocab, &seq, m, split_seed).unwrap(), out);
    }

    #[test]
    fn heuristic_reports_are_plausible(seed in any::<u64>(), m in 0usize..6) {
        let (mut rng, vocab) = setup(seed);
        let model = RandomBigram::new(&vocab, rng.gen(), 0.2);
        let s = random_string(&mut rng, &vocab, 1, 12);
        let seq = greedy_tokenize(&s, &vocab).unwrap();
        let rule = SamplingRule::top_p(rng.gen_range(0.5..0.99)).unwrap();
        let out = apply_heuristic(&vocab, &seq, m, &model, rule, Temperature::ONE).unwrap();
        prop_assert_eq!(vocab.render(&out.reported).unwrap(), s);
        if out.reported != seq {
            prop_assert!(is_plausible(&model, &out.reported, rule, Temperature::ONE).unwrap());
        }
    }

    #[test]
    fn oracle_result_is_plausible_and_longest(seed in any::<u64>()) {
        let (mut rng, vocab) = setup(seed);
        let model = RandomBigram::new(&vocab, rng.gen(), 0.3);
        let s = random_string(&mut rng, &vocab, 0, 10);
        let rule = SamplingRule::top_k(rng.gen_range(1..vocab.len())).unwrap();
        let opts = SearchOptions { terminate: false, ..SearchOptions::default() };
        let best = longest_plausible(&s, &vocab, &model, rule, Temperature::ONE, opts).unwrap();
        let plausible_lens: Vec<usize> = enumerate_tokenizations(&s, &vocab)
            .unwrap()
            .filter(|t| is_plausible(&model, t, rule, Temperature::ONE).unwrap())
            .map(|t| t.len())
            .collect();
        match best {
            Some(b) => {
                prop_assert!(is_plausible(&model, &b, rule, Temperature::ONE).unwrap());
                prop_assert_eq!(Some(b.len()), plausible_lens.iter().copied().max());
            }
            None => prop_assert!(plausible_lens.is_empty()),
        }
    }

    #[test]
    fn per_character_prices_ignore_tokenization(seed in any::<u64>(), r_c in 0.0f64..10.0) {
        let (mut rng, vocab) = setup(seed);
        let s = random_string(&mut rng, &vocab, 0, 10);
        let mech = PricingMechanism::per_character(r_c).unwrap();
        let prices: Vec<Micros> = enumerate_tokenizations(&s, &vocab)
            .unwrap()
            .map(|t| mech.price_micros(&vocab, &t).unwrap())
            .collect();
        prop_assert!(prices.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn derived_seeds_differ(a in any::<u64>(), b in any::<u64>()) {
        prop_assume!(a != b);
        prop_assert_ne!(derive_seed(&[a, 0]), derive_seed(&[b, 0]));
    }
}
