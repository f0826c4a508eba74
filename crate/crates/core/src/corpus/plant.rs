use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, Corpus, DocId, DocumentMeta};
use crate::error::{Error, Result};

/// A synthetic sequence planted `repeat_count` times as standalone documents.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanarySpec {
    #[serde(with = "text_bytes")]
    pub text: Vec<u8>,
    pub repeat_count: u32,
    pub placement_seed: u64,
}

/// Inserts every canary copy at a uniformly drawn position in document order.
///
/// `min_tokens` is the probe window length `k + l`; shorter canaries are
/// rejected since no full probe could be cut from them.
pub fn plant_canaries(
    corpus: &Corpus,
    specs: &[CanarySpec],
    seed: u64,
    min_tokens: usize,
) -> Result<Corpus> {
    for (index, spec) in specs.iter().enumerate() {
        if spec.repeat_count == 0 {
            return Err(Error::invalid(format!("canary {index} has repeat_count 0")));
        }
        if spec.text.len() < min_tokens {
            return Err(Error::CanaryTooShort {
                index,
                len: spec.text.len(),
                required: min_tokens,
            });
        }
    }

    let mut documents = corpus.documents().to_vec();
    let mut manifest = corpus.manifest().to_vec();
    let mut next_id = corpus.next_doc_id();
    let first_group = corpus.next_canary_group();

    for (index, spec) in specs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::mix_seed(seed, spec.placement_seed));
        let tokens = tokenize(&spec.text);
        for _ in 0..spec.repeat_count {
            let at = rng.gen_range(0..=documents.len());
            documents.insert(at, tokens.clone());
            manifest.insert(
                at,
                DocumentMeta {
                    id: DocId(next_id),
                    byte_len: spec.text.len(),
                    canary: true,
                    repeat_count: spec.repeat_count,
                    canary_group: Some(first_group + index as u32),
                },
            );
            next_id += 1;
        }
    }
    Corpus::from_parts(documents, manifest)
}

mod text_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        match std::str::from_utf8(v) {
            Ok(text) => s.serialize_str(text),
            Err(_) => s.serialize_bytes(v),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Bytes(Vec<u8>),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Text(s) => s.into_bytes(),
            Repr::Bytes(b) => b,
        })
    }
}
