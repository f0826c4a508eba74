//! On-disk corpus layout: `tokens.bin` holds every document's tokens as
//! little-endian `u16` values back to back, `manifest.json` holds per-document
//! metadata plus each document's token offset and length.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, DocId, DocumentMeta, TokenSequence, VOCAB_SIZE};
use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;
pub(crate) const TOKENS_FILE: &str = "tokens.bin";
pub(crate) const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct StoreManifest {
    format_version: u32,
    vocab_size: usize,
    token_width_bytes: usize,
    total_tokens: usize,
    documents: Vec<StoredDoc>,
}

#[derive(Serialize, Deserialize)]
struct StoredDoc {
    id: DocId,
    offset: usize,
    len: usize,
    byte_len: usize,
    canary: bool,
    repeat_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    canary_group: Option<u32>,
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::with_capacity(corpus.total_tokens() * 2);
    let mut documents = Vec::with_capacity(corpus.len());
    let mut offset = 0;
    for (meta, doc) in corpus.iter() {
        for &t in doc.iter() {
            let t = u16::try_from(t).map_err(|_| Error::VocabMismatch {
                token: t,
                vocab_size: VOCAB_SIZE,
            })?;
            bytes.extend_from_slice(&t.to_le_bytes());
        }
        documents.push(StoredDoc {
            id: meta.id,
            offset,
            len: doc.len(),
            byte_len: meta.byte_len,
            canary: meta.canary,
            repeat_count: meta.repeat_count,
            canary_group: meta.canary_group,
        });
        offset += doc.len();
    }
    let manifest = StoreManifest {
        format_version: FORMAT_VERSION,
        vocab_size: VOCAB_SIZE,
        token_width_bytes: 2,
        total_tokens: offset,
        documents,
    };
    let tokens_path = dir.join(TOKENS_FILE);
    std::fs::write(&tokens_path, &bytes).map_err(|e| Error::io(&tokens_path, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: StoreManifest = serde_json::from_slice(&raw)?;
    if manifest.format_version != FORMAT_VERSION || manifest.token_width_bytes != 2 {
        return Err(Error::Format(format!(
            "unsupported corpus store version {} / width {}",
            manifest.format_version, manifest.token_width_bytes
        )));
    }
    let tokens_path = dir.join(TOKENS_FILE);
    let bytes = std::fs::read(&tokens_path).map_err(|e| Error::io(&tokens_path, e))?;
    if bytes.len() != manifest.total_tokens * 2 {
        return Err(Error::Format(format!(
            "{} holds {} bytes, manifest declares {} tokens",
            TOKENS_FILE,
            bytes.len(),
            manifest.total_tokens
        )));
    }
    let tokens: Vec<u32> = bytes
        .chunks_exact(2)
        .map(|c| u32::from(u16::from_le_bytes([c[0], c[1]])))
        .collect();
    let mut docs = Vec::with_capacity(manifest.documents.len());
    let mut metas = Vec::with_capacity(manifest.documents.len());
    for d in manifest.documents {
        let slice = tokens
            .get(d.offset..d.offset + d.len)
            .ok_or_else(|| Error::Format(format!("document {} out of bounds", d.id)))?;
        docs.push(TokenSequence::from(slice));
        metas.push(DocumentMeta {
            id: d.id,
            byte_len: d.byte_len,
            canary: d.canary,
            repeat_count: d.repeat_count,
            canary_group: d.canary_group,
        });
    }
    Corpus::from_parts(docs, metas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{plant_canaries, CanarySpec};

    #[test]
    fn store_round_trip() {
        let base = Corpus::from_texts(["hello world", "", "third document"]);
        let corpus = plant_canaries(
            &base,
            &[CanarySpec {
                text: vec![b'z'; 100],
                repeat_count: 3,
                placement_seed: 1,
            }],
            2,
            96,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded, corpus);
        let tokens = std::fs::read(dir.path().join(TOKENS_FILE)).unwrap();
        let first = &corpus.documents()[0];
        assert_eq!(&tokens[..4], &[first[0] as u8, 0, first[1] as u8, 0]);
    }
}
