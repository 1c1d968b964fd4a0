//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use todsim::{AnnotationRecord, ErrorCategory};

/// `len` tokens drawn uniformly from a vocabulary of `vocab` words.
pub fn random_tokens(len: usize, vocab: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect()
}

/// `dialogues` x `annotators` ratings, each category flagged with
/// probability `rate`.
pub fn random_annotations(dialogues: usize, annotators: usize, rate: f64, seed: u64) -> Vec<AnnotationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(dialogues * annotators);
    for d in 0..dialogues {
        for a in 0..annotators {
            let flagged: Vec<ErrorCategory> = ErrorCategory::ALL
                .iter()
                .copied()
                .filter(|_| rng.gen_bool(rate))
                .collect();
            out.push(AnnotationRecord::flagged(&format!("d{d}"), &format!("a{a}"), &flagged));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_seeded() {
        assert_eq!(random_tokens(50, 10, 3), random_tokens(50, 10, 3));
        assert_ne!(random_tokens(50, 10, 3), random_tokens(50, 10, 4));
        assert_eq!(random_annotations(4, 3, 0.5, 1).len(), 12);
    }
}
