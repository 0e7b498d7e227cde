//! Seeded synthetic tasks for sanity runs: copy, noisy copy and a
//! two-domain mapping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::subword::{TokenId, RESERVED_TOKENS};

pub type IdPairs = Vec<(Vec<TokenId>, Vec<TokenId>)>;

/// First id available to synthetic symbols.
pub const FIRST_SYMBOL: TokenId = RESERVED_TOKENS.len() as TokenId;

/// Model vocabulary size for `symbols` synthetic symbols.
pub fn vocab_size(symbols: usize) -> usize {
    RESERVED_TOKENS.len() + symbols
}

fn random_sentence(rng: &mut ChaCha8Rng, symbols: usize, min_len: usize, max_len: usize) -> Vec<TokenId> {
    let len = rng.gen_range(min_len..=max_len);
    (0..len)
        .map(|_| FIRST_SYMBOL + rng.gen_range(0..symbols as TokenId))
        .collect()
}

/// Target equals source.
pub fn copy_task(n: usize, symbols: usize, min_len: usize, max_len: usize, seed: u64) -> IdPairs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = random_sentence(&mut rng, symbols, min_len, max_len);
            (s.clone(), s)
        })
        .collect()
}

/// Copy where each target token is replaced by a random symbol with
/// probability `noise`.
pub fn noisy_copy_task(n: usize, symbols: usize, min_len: usize, max_len: usize, noise: f64, seed: u64) -> IdPairs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = random_sentence(&mut rng, symbols, min_len, max_len);
            let t = s
                .iter()
                .map(|&x| {
                    if rng.gen_bool(noise) {
                        FIRST_SYMBOL + rng.gen_range(0..symbols as TokenId)
                    } else {
                        x
                    }
                })
                .collect();
            (s, t)
        })
        .collect()
}

/// Two domains over one vocabulary. The general domain copies its input;
/// the special domain reverses it and shifts every symbol by one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    General,
    Special,
}

pub fn domain_task(domain: Domain, n: usize, symbols: usize, min_len: usize, max_len: usize, seed: u64) -> IdPairs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = random_sentence(&mut rng, symbols, min_len, max_len);
            let t = match domain {
                Domain::General => s.clone(),
                Domain::Special => s
                    .iter()
                    .rev()
                    .map(|&x| FIRST_SYMBOL + (x - FIRST_SYMBOL + 1) % symbols as TokenId)
                    .collect(),
            };
            (s, t)
        })
        .collect()
}
