//! Synthetic corpora with known structure, for tests and benchmarks.
//!
//! The planted-incongruity task mixes romanized Hindi and English filler
//! words with exactly two cue words per sentence. A sentence is sarcastic
//! when one cue is positive and the other a negative situation; two cues of
//! the same polarity read as sincere. Every cue word appears in both
//! classes, so only the pairing carries the label.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetSplit, LabeledExample};

pub const POSITIVE_CUES: [&str; 6] = ["love", "great", "amazing", "badhiya", "mast", "shandaar"];
pub const NEGATIVE_CUES: [&str; 6] = ["traffic", "bhukhmari", "mehngai", "garmi", "kachra", "deri"];
pub const FILLERS: [&str; 38] = [
    "yeh", "hai", "aaj", "bahut", "kal", "mein", "bharat", "phir", "se", "ka", "ki", "ke", "toh",
    "ab", "sab", "log", "din", "raat", "ghar", "office", "school", "train", "bus", "sarkar",
    "paani", "khana", "movie", "match", "dost", "waqt", "shaam", "subah", "sheher", "gaon",
    "road", "news", "yaar", "the",
];

/// One generated sentence and, when sarcastic, the planted pair positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedExample {
    pub example: LabeledExample,
    pub pair: Option<(usize, usize)>,
}

/// Sentence lengths are drawn uniformly from `min_len..=max_len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            min_len: 5,
            max_len: 10,
        }
    }
}

fn sentence<R: Rng>(
    id: String,
    label: usize,
    config: PlantedConfig,
    rng: &mut R,
) -> PlantedExample {
    let len = rng.gen_range(config.min_len.max(2)..=config.max_len.max(config.min_len.max(2)));
    let mut tokens: Vec<String> = (0..len)
        .map(|_| FILLERS.choose(rng).expect("non-empty").to_string())
        .collect();
    let (first, second) = if label == 1 {
        (&POSITIVE_CUES, &NEGATIVE_CUES)
    } else if rng.gen_bool(0.5) {
        (&POSITIVE_CUES, &POSITIVE_CUES)
    } else {
        (&NEGATIVE_CUES, &NEGATIVE_CUES)
    };
    let positions: Vec<usize> = rand::seq::index::sample(rng, len, 2).into_vec();
    let (i, j) = (positions[0], positions[1]);
    tokens[i] = first.choose(rng).expect("non-empty").to_string();
    tokens[j] = second.choose(rng).expect("non-empty").to_string();
    let pair = (label == 1).then_some((i.min(j), i.max(j)));
    PlantedExample {
        example: LabeledExample::new(id, tokens, label).expect("generated labels are valid"),
        pair,
    }
}

/// `n` sentences, half of each class, in shuffled order.
pub fn planted_examples(n: usize, config: PlantedConfig, seed: u64) -> Vec<PlantedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| sentence(format!("s{seed}-{i}"), label, config, &mut rng))
        .collect()
}

/// Independent train, validation and test sets drawn from the same task.
pub fn planted_split(sizes: [usize; 3], config: PlantedConfig, seed: u64) -> DatasetSplit {
    let draw = |n: usize, offset: u64| -> Vec<LabeledExample> {
        planted_examples(n, config, seed.wrapping_mul(3).wrapping_add(offset))
            .into_iter()
            .map(|p| p.example)
            .collect()
    };
    DatasetSplit {
        train: draw(sizes[0], 0),
        valid: draw(sizes[1], 1),
        test: draw(sizes[2], 2),
        seed,
    }
}

pub const ELONGATED: (&str, &str) = ("gharr", "gharrr");
pub const UNRELATED: &str = "cricket";

const HOME_CONTEXTS: [&str; 12] = [
    "main", "apne", "ja", "raha", "hoon", "wapas", "jaldi", "chalo", "pahunch", "gaya", "mera",
    "sweet",
];
const SPORT_CONTEXTS: [&str; 12] = [
    "match", "dekha", "team", "jeet", "gayi", "khel", "stadium", "wicket", "over", "score",
    "bowler", "toss",
];

/// A corpus where the two spellings of `gharr` share contexts and
/// [`UNRELATED`] keeps to a disjoint set of contexts.
pub fn elongation_corpus(sentences: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sentences)
        .map(|i| {
            let (center, contexts) = match i % 3 {
                0 => (ELONGATED.0, &HOME_CONTEXTS),
                1 => (ELONGATED.1, &HOME_CONTEXTS),
                _ => (UNRELATED, &SPORT_CONTEXTS),
            };
            let len = rng.gen_range(5..=9);
            let at = rng.gen_range(0..len);
            (0..len)
                .map(|k| {
                    if k == at {
                        center.to_string()
                    } else {
                        contexts.choose(&mut rng).expect("non-empty").to_string()
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn vocabulary_is_about_fifty_tokens() {
        let all: BTreeSet<&str> = POSITIVE_CUES
            .iter()
            .chain(&NEGATIVE_CUES)
            .chain(&FILLERS)
            .copied()
            .collect();
        assert_eq!(all.len(), 50);
    }

    #[test]
    fn labels_follow_the_planted_pair() {
        let examples = planted_examples(400, PlantedConfig::default(), 7);
        let ones = examples.iter().filter(|p| p.example.label == 1).count();
        assert_eq!(ones, 200);
        for p in &examples {
            let tokens = &p.example.tokens;
            let pos = tokens.iter().filter(|t| POSITIVE_CUES.contains(&t.as_str())).count();
            let neg = tokens.iter().filter(|t| NEGATIVE_CUES.contains(&t.as_str())).count();
            assert_eq!(pos + neg, 2);
            assert_eq!(p.example.label == 1, pos == 1 && neg == 1);
            if let Some((i, j)) = p.pair {
                assert!(POSITIVE_CUES.contains(&tokens[i].as_str()) || POSITIVE_CUES.contains(&tokens[j].as_str()));
                assert!(NEGATIVE_CUES.contains(&tokens[i].as_str()) || NEGATIVE_CUES.contains(&tokens[j].as_str()));
            }
            assert!((5..=10).contains(&tokens.len()));
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = planted_split([20, 4, 6], PlantedConfig::default(), 1);
        let b = planted_split([20, 4, 6], PlantedConfig::default(), 1);
        let c = planted_split([20, 4, 6], PlantedConfig::default(), 2);
        assert_eq!(a.train, b.train);
        assert_ne!(a.train, c.train);
        assert_ne!(a.train, a.test);
        assert_eq!(elongation_corpus(30, 4), elongation_corpus(30, 4));
    }

    #[test]
    fn elongation_corpus_places_each_center_once() {
        let corpus = elongation_corpus(90, 0);
        for (i, s) in corpus.iter().enumerate() {
            let centers = s
                .iter()
                .filter(|t| [ELONGATED.0, ELONGATED.1, UNRELATED].contains(&t.as_str()))
                .count();
            assert_eq!(centers, 1, "sentence {i}");
        }
    }
}
