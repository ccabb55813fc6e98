//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `n` rows of `dim` standard normal values.
pub fn gaussian_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
        .collect()
}

const WORDS: &[&str] = &[
    "a", "the", "photograph", "of", "two", "small", "dogs", "sitting", "on", "wooden", "bench", "near", "river",
    "with", "bright", "morning", "light", "three", "red", "apples", "left", "table", "beautiful", "landscape",
];

/// Captions of 5 to 40 words drawn from a small vocabulary.
pub fn captions(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(5..=40);
            let words: Vec<&str> = (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
            format!("{}.", words.join(" "))
        })
        .collect()
}
