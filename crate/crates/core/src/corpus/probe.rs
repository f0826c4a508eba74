use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, DocId, TokenId, TokenSequence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbeId(pub u32);

impl fmt::Display for ProbeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One audit target: `k` context tokens followed by the `l` tokens the model
/// is expected to reproduce.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub probe_id: ProbeId,
    pub source_doc: DocId,
    /// Token offset of the first context token inside the source document.
    pub source_offset: usize,
    pub context: TokenSequence,
    pub target: TokenSequence,
}

impl Probe {
    /// Cuts a probe from `doc` at `offset`.
    pub fn cut(
        probe_id: ProbeId,
        source_doc: DocId,
        doc: &[TokenId],
        offset: usize,
        k: usize,
        l: usize,
    ) -> Option<Probe> {
        let end = offset.checked_add(k + l)?;
        if end > doc.len() {
            return None;
        }
        Some(Probe {
            probe_id,
            source_doc,
            source_offset: offset,
            context: doc[offset..offset + k].into(),
            target: doc[offset + k..end].into(),
        })
    }

    pub fn k(&self) -> usize {
        self.context.len()
    }

    pub fn l(&self) -> usize {
        self.target.len()
    }

    /// Offset of the first target token inside the source document.
    pub fn target_offset(&self) -> usize {
        self.source_offset + self.context.len()
    }

    pub fn window(&self) -> Vec<TokenId> {
        let mut w = Vec::with_capacity(self.k() + self.l());
        w.extend_from_slice(&self.context);
        w.extend_from_slice(&self.target);
        w
    }
}

/// Samples `count` windows of `k + l` tokens uniformly without replacement.
///
/// With `dedupe`, windows whose target tokens equal an already selected
/// probe's target are skipped, so `count` is bounded by the number of distinct
/// targets. Probe ids are assigned `0..count` in sampling order.
pub fn extract_probes(
    corpus: &Corpus,
    k: usize,
    l: usize,
    count: usize,
    seed: u64,
    dedupe: bool,
) -> Result<Vec<Probe>> {
    if k == 0 || l == 0 {
        return Err(Error::invalid("k and l must be at least 1"));
    }
    let window = k + l;
    // cumulative eligible-window counts per document
    let mut starts = Vec::with_capacity(corpus.len());
    let mut total = 0usize;
    for doc in corpus.documents() {
        starts.push(total);
        total += (doc.len() + 1).saturating_sub(window);
    }
    if total == 0 {
        return Err(Error::NoEligibleWindow { window });
    }
    let locate = |g: usize| -> (usize, usize) {
        // last document whose range starts at or before g; empty ranges sort first
        let d = starts.partition_point(|&s| s <= g) - 1;
        (d, g - starts[d])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let picks: Vec<(usize, usize)> = if !dedupe {
        if count > total {
            return Err(Error::NotEnoughWindows {
                requested: count,
                available: total,
            });
        }
        index::sample(&mut rng, total, count)
            .into_iter()
            .map(locate)
            .collect()
    } else {
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut rng);
        let mut seen: HashSet<&[TokenId]> = HashSet::new();
        let mut picks = Vec::with_capacity(count);
        for g in order {
            if picks.len() == count {
                break;
            }
            let (d, off) = locate(g);
            let target = &corpus.documents()[d][off + k..off + window];
            if seen.insert(target) {
                picks.push((d, off));
            }
        }
        if picks.len() < count {
            return Err(Error::NotEnoughWindows {
                requested: count,
                available: seen.len(),
            });
        }
        picks
    };

    Ok(picks
        .into_iter()
        .enumerate()
        .map(|(i, (d, off))| {
            let id = corpus.manifest()[d].id;
            Probe::cut(ProbeId(i as u32), id, &corpus.documents()[d], off, k, l)
                .expect("eligible window")
        })
        .collect())
}

/// One probe per canary group, cut at offset 0 of the group's first copy in
/// document order. Ids start at `first_id`.
pub fn probes_for_canaries(corpus: &Corpus, k: usize, l: usize, first_id: u32) -> Vec<Probe> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (meta, doc) in corpus.iter() {
        let Some(group) = meta.canary_group else {
            continue;
        };
        if !seen.insert(group) {
            continue;
        }
        let id = ProbeId(first_id + out.len() as u32);
        if let Some(p) = Probe::cut(id, meta.id, doc, 0, k, l) {
            out.push(p);
        }
    }
    out
}

pub fn write_probes(path: &Path, probes: &[Probe]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in probes {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_probes(path: &Path) -> Result<Vec<Probe>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{plant_canaries, CanarySpec};
    use std::collections::HashMap;

    fn doc_of(len: usize) -> Corpus {
        Corpus::from_texts([(0..len).map(|i| (i % 251) as u8).collect::<Vec<u8>>()])
    }

    #[test]
    fn exactly_one_window_at_96() {
        let probes = extract_probes(&doc_of(96), 32, 64, 1, 0, false).unwrap();
        assert_eq!(probes.len(), 1);
        assert_eq!(probes[0].source_offset, 0);
        assert!(matches!(
            extract_probes(&doc_of(96), 32, 64, 2, 0, false),
            Err(Error::NotEnoughWindows { available: 1, .. })
        ));
    }

    #[test]
    fn no_window_at_95() {
        assert!(matches!(
            extract_probes(&doc_of(95), 32, 64, 1, 0, false),
            Err(Error::NoEligibleWindow { window: 96 })
        ));
    }

    #[test]
    fn dedupe_collapses_identical_copies() {
        // 16 identical 100-token copies: 5 windows each, 5 distinct targets
        let text: Vec<u8> = (0..100usize).map(|i| b'a' + (i * 7 % 26) as u8).collect();
        let spec = CanarySpec {
            text: text.clone(),
            repeat_count: 16,
            placement_seed: 3,
        };
        let corpus = plant_canaries(&Corpus::empty(), &[spec], 0, 96).unwrap();

        // oracle: enumerate every window and hash its target
        let mut distinct: HashMap<Vec<TokenId>, usize> = HashMap::new();
        for doc in corpus.documents() {
            for off in 0..=doc.len() - 96 {
                *distinct.entry(doc[off + 32..off + 96].to_vec()).or_default() += 1;
            }
        }
        assert_eq!(distinct.len(), 5);

        let probes = extract_probes(&corpus, 32, 64, distinct.len(), 1, true).unwrap();
        let targets: HashSet<_> = probes.iter().map(|p| p.target.clone()).collect();
        assert_eq!(targets.len(), distinct.len());
        assert!(extract_probes(&corpus, 32, 64, distinct.len() + 1, 1, true).is_err());
        // without dedupe all 80 windows are available
        assert_eq!(extract_probes(&corpus, 32, 64, 80, 1, false).unwrap().len(), 80);
    }

    #[test]
    fn probes_match_corpus_and_are_deterministic() {
        let corpus = Corpus::from_texts(
            (0..30).map(|i| (0..(90 + i * 7)).map(|j| ((i * 31 + j * 17) % 256) as u8).collect::<Vec<u8>>()),
        );
        let a = extract_probes(&corpus, 8, 16, 200, 42, false).unwrap();
        let b = extract_probes(&corpus, 8, 16, 200, 42, false).unwrap();
        assert_eq!(a, b);
        let mut positions = HashSet::new();
        for p in &a {
            let doc = corpus.doc(p.source_doc).unwrap();
            assert_eq!(&doc[p.source_offset..p.source_offset + 24], p.window().as_slice());
            assert!(positions.insert((p.source_doc, p.source_offset)));
        }
    }

    #[test]
    fn skips_documents_shorter_than_window() {
        let corpus = Corpus::from_texts([vec![1u8; 10], vec![2u8; 0], vec![3u8; 30], vec![4u8; 5]]);
        let probes = extract_probes(&corpus, 4, 4, 23, 0, false).unwrap();
        assert!(probes.iter().all(|p| p.source_doc == DocId(0) || p.source_doc == DocId(2)));
    }

    #[test]
    fn probe_file_round_trip() {
        let probes = extract_probes(&doc_of(200), 32, 64, 10, 4, false).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_probes(f.path(), &probes).unwrap();
        assert_eq!(read_probes(f.path()).unwrap(), probes);
    }
}
