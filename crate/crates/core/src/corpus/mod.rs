//! Corpus handling: byte-level tokenization, document ingestion, canary
//! planting and probe extraction.
//!
//! Every byte maps to the token id of the same value. Ids at or above
//! [`BYTE_VOCAB`] are reserved for specials; only [`DOC_SEP`] is used, as the
//! separator the trainer inserts between documents in its token stream.

mod ingest;
mod plant;
mod probe;
mod store;
pub mod synth;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{ingest, InputFormat};
pub use plant::{plant_canaries, CanarySpec};
pub use probe::{extract_probes, probes_for_canaries, read_probes, write_probes, Probe, ProbeId};
pub use store::{load_corpus, save_corpus};

pub type TokenId = u32;

/// Number of byte tokens.
pub const BYTE_VOCAB: usize = 256;
/// Document separator inserted by the trainer between documents.
pub const DOC_SEP: TokenId = 256;
/// Byte tokens plus reserved specials.
pub const VOCAB_SIZE: usize = 257;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        TokenSequence(tokens)
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Raw bytes of the sequence. Fails on reserved special tokens.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.0
            .iter()
            .map(|&t| u8::try_from(t).map_err(|_| Error::NonByteToken { token: t }))
            .collect()
    }

    /// Checks every token id against `vocab_size`.
    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.0.iter().find(|&&t| t as usize >= vocab_size) {
            Some(&token) => Err(Error::VocabMismatch { token, vocab_size }),
            None => Ok(()),
        }
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(v: Vec<TokenId>) -> Self {
        TokenSequence(v)
    }
}

impl From<&[TokenId]> for TokenSequence {
    fn from(v: &[TokenId]) -> Self {
        TokenSequence(v.to_vec())
    }
}

impl std::ops::Deref for TokenSequence {
    type Target = [TokenId];
    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

pub fn tokenize(text: &[u8]) -> TokenSequence {
    TokenSequence(text.iter().map(|&b| TokenId::from(b)).collect())
}

/// Inverse of [`tokenize`]. Special tokens carry no bytes and are dropped.
pub fn detokenize(seq: &[TokenId]) -> Vec<u8> {
    seq.iter().filter_map(|&t| u8::try_from(t).ok()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(pub u32);

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMeta {
    pub id: DocId,
    pub byte_len: usize,
    pub canary: bool,
    /// Planted repeat count for canary copies, 1 for ordinary documents.
    pub repeat_count: u32,
    /// Shared by all copies of the same canary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canary_group: Option<u32>,
}

/// An ordered, immutable collection of tokenized documents.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    documents: Vec<TokenSequence>,
    manifest: Vec<DocumentMeta>,
    by_id: HashMap<DocId, usize>,
}

impl Corpus {
    pub fn from_parts(documents: Vec<TokenSequence>, manifest: Vec<DocumentMeta>) -> Result<Self> {
        if documents.len() != manifest.len() {
            return Err(Error::invalid(format!(
                "manifest has {} entries for {} documents",
                manifest.len(),
                documents.len()
            )));
        }
        let mut by_id = HashMap::with_capacity(manifest.len());
        for (i, meta) in manifest.iter().enumerate() {
            if by_id.insert(meta.id, i).is_some() {
                return Err(Error::invalid(format!("duplicate document id {}", meta.id)));
            }
        }
        Ok(Corpus {
            documents,
            manifest,
            by_id,
        })
    }

    /// Builds a corpus of ordinary documents with ids `0..n`.
    pub fn from_texts<I, T>(texts: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        let mut documents = Vec::new();
        let mut manifest = Vec::new();
        for (i, text) in texts.into_iter().enumerate() {
            let bytes = text.as_ref();
            manifest.push(DocumentMeta {
                id: DocId(i as u32),
                byte_len: bytes.len(),
                canary: false,
                repeat_count: 1,
                canary_group: None,
            });
            documents.push(tokenize(bytes));
        }
        Corpus::from_parts(documents, manifest).expect("sequential ids are unique")
    }

    pub fn empty() -> Self {
        Corpus::from_parts(Vec::new(), Vec::new()).expect("empty corpus is valid")
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[TokenSequence] {
        &self.documents
    }

    pub fn manifest(&self) -> &[DocumentMeta] {
        &self.manifest
    }

    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(TokenSequence::len).sum()
    }

    pub fn position(&self, id: DocId) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    pub fn doc(&self, id: DocId) -> Option<&TokenSequence> {
        self.position(id).map(|i| &self.documents[i])
    }

    pub fn meta(&self, id: DocId) -> Option<&DocumentMeta> {
        self.position(id).map(|i| &self.manifest[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DocumentMeta, &TokenSequence)> {
        self.manifest.iter().zip(&self.documents)
    }

    /// Sub-corpus of documents whose metadata satisfies `keep`, ids preserved.
    pub fn filter(&self, mut keep: impl FnMut(&DocumentMeta) -> bool) -> Corpus {
        let (manifest, documents): (Vec<_>, Vec<_>) = self
            .iter()
            .filter(|(m, _)| keep(m))
            .map(|(m, d)| (m.clone(), d.clone()))
            .unzip();
        Corpus::from_parts(documents, manifest).expect("subset of a valid corpus")
    }

    pub(crate) fn next_doc_id(&self) -> u32 {
        self.manifest.iter().map(|m| m.id.0 + 1).max().unwrap_or(0)
    }

    pub(crate) fn next_canary_group(&self) -> u32 {
        self.manifest
            .iter()
            .filter_map(|m| m.canary_group.map(|g| g + 1))
            .max()
            .unwrap_or(0)
    }
}
