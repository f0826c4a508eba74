//! Seeded generator for a small mixed-register text corpus and random canary
//! texts. Document kinds span a wide complexity range: repetitive motifs and
//! counting runs at the low end, templated prose and records in the middle,
//! random identifiers at the top.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CanarySpec, Corpus};

const NOUNS: &[&str] = &[
    "river", "garden", "window", "market", "teacher", "engine", "harbor", "forest", "letter",
    "village", "doctor", "bridge", "signal", "kitchen", "planet", "farmer", "mirror", "tunnel",
    "island", "printer", "lantern", "meadow", "station", "student", "ticket", "valley", "wagon",
    "castle", "bakery", "museum", "painter", "compass", "harvest", "journal", "captain", "orchard",
    "library", "machine", "pilot", "sailor", "theater", "blanket", "factory", "cottage", "desert",
    "canyon", "glacier", "festival", "notebook", "umbrella", "violin", "council", "hospital",
    "airport", "courtyard", "fountain", "workshop", "chimney", "balcony", "ladder",
];
const VERBS: &[&str] = &[
    "carried", "watched", "repaired", "painted", "followed", "visited", "opened", "described",
    "measured", "crossed", "borrowed", "cleaned", "counted", "finished", "guarded", "lifted",
    "noticed", "ordered", "pulled", "reached", "signed", "tested", "traded", "wrapped",
    "collected", "delivered", "explored", "gathered", "mended", "planted",
];
const ADJECTIVES: &[&str] = &[
    "quiet", "narrow", "golden", "ancient", "crowded", "distant", "gentle", "heavy", "hidden",
    "little", "modern", "orange", "patient", "rusty", "silent", "sturdy", "tired", "wooden",
    "bright", "frozen", "humble", "lively", "muddy", "polished", "remote", "shallow", "tall",
    "curious", "dusty", "empty",
];
const NAMES: &[&str] = &[
    "Mara", "Jonas", "Ilse", "Tomas", "Priya", "Omar", "Lena", "Kenji", "Ada", "Rafael", "Noor",
    "Elif", "Dmitri", "Sofia", "Kwame", "Hana", "Pavel", "Zara", "Felix", "Ines",
];
const PLACES: &[&str] = &[
    "Lisbon", "Oslo", "Quito", "Nairobi", "Kyoto", "Tallinn", "Porto", "Hobart", "Cusco", "Bergen",
    "Lyon", "Dakar", "Perth", "Hanoi", "Split", "Tromso",
];
const PREPOSITIONS: &[&str] = &["near", "behind", "under", "beside", "across", "inside", "past"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocKind {
    Prose,
    Records,
    Motif,
    Counting,
    RandomIds,
}

/// Relative weights of each document kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthMix {
    pub prose: f64,
    pub records: f64,
    pub motif: f64,
    pub counting: f64,
    pub random_ids: f64,
}

impl Default for SynthMix {
    fn default() -> Self {
        SynthMix {
            prose: 0.55,
            records: 0.15,
            motif: 0.08,
            counting: 0.07,
            random_ids: 0.15,
        }
    }
}

impl SynthMix {
    fn pick(&self, rng: &mut impl Rng) -> DocKind {
        let table = [
            (DocKind::Prose, self.prose),
            (DocKind::Records, self.records),
            (DocKind::Motif, self.motif),
            (DocKind::Counting, self.counting),
            (DocKind::RandomIds, self.random_ids),
        ];
        let total: f64 = table.iter().map(|(_, w)| w.max(0.0)).sum();
        let mut x = rng.gen::<f64>() * total;
        for (kind, w) in table {
            x -= w.max(0.0);
            if x < 0.0 {
                return kind;
            }
        }
        DocKind::Prose
    }
}

/// Generates `count` documents of roughly `min_len..=max_len` bytes.
pub fn synthetic_texts(
    count: usize,
    min_len: usize,
    max_len: usize,
    mix: &SynthMix,
    seed: u64,
) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let target = rng.gen_range(min_len..=max_len.max(min_len));
            let kind = mix.pick(&mut rng);
            generate(kind, target, &mut rng)
        })
        .collect()
}

pub fn synthetic_corpus(
    count: usize,
    min_len: usize,
    max_len: usize,
    mix: &SynthMix,
    seed: u64,
) -> Corpus {
    Corpus::from_texts(synthetic_texts(count, min_len, max_len, mix, seed))
}

pub fn generate(kind: DocKind, target_len: usize, rng: &mut impl Rng) -> Vec<u8> {
    let mut out = String::with_capacity(target_len + 64);
    match kind {
        DocKind::Prose => {
            while out.len() < target_len {
                out.push_str(&sentence(rng));
                out.push(' ');
            }
        }
        DocKind::Records => {
            let mut id: u32 = rng.gen_range(100..9000);
            while out.len() < target_len {
                out.push_str(&format!(
                    "id {id} | {} | {} | score {}\n",
                    pick(rng, NAMES),
                    pick(rng, PLACES),
                    rng.gen_range(10..100)
                ));
                id += 1;
            }
        }
        DocKind::Motif => {
            let motif_len = rng.gen_range(2..=9);
            let motif: String = (0..motif_len)
                .map(|_| char::from(rng.gen_range(b'a'..=b'z')))
                .collect();
            let sep = *[" ", "-", ", ", "/"].choose(rng).unwrap();
            while out.len() < target_len {
                out.push_str(&motif);
                out.push_str(sep);
            }
        }
        DocKind::Counting => {
            let mut n: u32 = rng.gen_range(0..5000);
            let step = *[1u32, 1, 1, 2, 5, 10].choose(rng).unwrap();
            while out.len() < target_len {
                out.push_str(&n.to_string());
                out.push(' ');
                n += step;
            }
        }
        DocKind::RandomIds => {
            const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
            while out.len() < target_len {
                let len = rng.gen_range(4..=10);
                for _ in 0..len {
                    out.push(char::from(ALPHABET[rng.gen_range(0..ALPHABET.len())]));
                }
                out.push(' ');
            }
        }
    }
    let mut bytes = out.into_bytes();
    bytes.truncate(target_len.max(1));
    bytes
}

fn pick<'a>(rng: &mut impl Rng, words: &[&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

fn sentence(rng: &mut impl Rng) -> String {
    match rng.gen_range(0..4) {
        0 => format!(
            "The {} {} {} the {} {} the {}.",
            pick(rng, ADJECTIVES),
            pick(rng, NOUNS),
            pick(rng, VERBS),
            pick(rng, NOUNS),
            pick(rng, PREPOSITIONS),
            pick(rng, NOUNS)
        ),
        1 => format!(
            "{} {} a {} {} in {}.",
            pick(rng, NAMES),
            pick(rng, VERBS),
            pick(rng, ADJECTIVES),
            pick(rng, NOUNS),
            pick(rng, PLACES)
        ),
        2 => format!(
            "In {}, the {} was {} and the {} was {}.",
            pick(rng, PLACES),
            pick(rng, NOUNS),
            pick(rng, ADJECTIVES),
            pick(rng, NOUNS),
            pick(rng, ADJECTIVES)
        ),
        _ => format!(
            "{} and {} {} the {} {}.",
            pick(rng, NAMES),
            pick(rng, NAMES),
            pick(rng, VERBS),
            pick(rng, NOUNS),
            pick(rng, PREPOSITIONS).to_owned() + " the " + pick(rng, NOUNS)
        ),
    }
}

/// Random word-salad canary texts, `per_level` canaries for every repeat
/// count in `levels`.
pub fn canary_specs(levels: &[u32], per_level: usize, len: usize, seed: u64) -> Vec<CanarySpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(levels.len() * per_level);
    for &repeat_count in levels {
        for _ in 0..per_level {
            let mut text = String::new();
            while text.len() < len {
                let pool = match rng.gen_range(0..4) {
                    0 => NOUNS,
                    1 => VERBS,
                    2 => ADJECTIVES,
                    _ => PLACES,
                };
                text.push_str(pick(&mut rng, pool));
                text.push(' ');
                if rng.gen_bool(0.2) {
                    text.push_str(&rng.gen_range(10..10000).to_string());
                    text.push(' ');
                }
            }
            let mut bytes = text.into_bytes();
            bytes.truncate(len);
            specs.push(CanarySpec {
                text: bytes,
                repeat_count,
                placement_seed: rng.gen(),
            });
        }
    }
    specs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let a = synthetic_texts(50, 100, 200, &SynthMix::default(), 3);
        let b = synthetic_texts(50, 100, 200, &SynthMix::default(), 3);
        assert_eq!(a, b);
        assert!(a.iter().all(|t| (100..=200).contains(&t.len())));
    }

    #[test]
    fn every_kind_generates_requested_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in [
            DocKind::Prose,
            DocKind::Records,
            DocKind::Motif,
            DocKind::Counting,
            DocKind::RandomIds,
        ] {
            assert_eq!(generate(kind, 150, &mut rng).len(), 150);
        }
    }

    #[test]
    fn canaries_have_requested_shape() {
        let specs = canary_specs(&[1, 4, 16], 3, 120, 9);
        assert_eq!(specs.len(), 9);
        assert!(specs.iter().all(|s| s.text.len() == 120));
        assert_eq!(specs[3].repeat_count, 4);
    }
}
