//! Repeat detection: finds training documents that share a long contiguous
//! token run with a probe target.
//!
//! Every length-`n` window of the corpus is indexed by a polynomial rolling
//! hash. A probe target is looked up window by window; each candidate is
//! verified token by token and extended in both directions to its maximal
//! run, so hash collisions can only cost time, never produce a false hit.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DocId, Probe, ProbeId, TokenId};
use crate::error::{Error, Result};

/// Mersenne prime 2^61 - 1.
pub const HASH_MODULUS: u64 = (1 << 61) - 1;
pub const HASH_BASE: u64 = 1_000_003;
pub const DEFAULT_WINDOW: usize = 30;

#[inline]
fn mul_mod(a: u64, b: u64) -> u64 {
    let p = u128::from(a) * u128::from(b);
    let lo = (p as u64) & HASH_MODULUS;
    let hi = (p >> 61) as u64;
    let s = lo + hi;
    if s >= HASH_MODULUS {
        s - HASH_MODULUS
    } else {
        s
    }
}

#[inline]
fn add_mod(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= HASH_MODULUS {
        s - HASH_MODULUS
    } else {
        s
    }
}

/// Rolling hashes of every length-`n` window of `seq`, in window order.
pub fn window_hashes(seq: &[TokenId], n: usize) -> Vec<u64> {
    if seq.len() < n || n == 0 {
        return Vec::new();
    }
    let mut top = 1u64; // BASE^(n-1)
    for _ in 1..n {
        top = mul_mod(top, HASH_BASE);
    }
    let mut h = 0u64;
    for &t in &seq[..n] {
        h = add_mod(mul_mod(h, HASH_BASE), u64::from(t) + 1);
    }
    let mut out = Vec::with_capacity(seq.len() - n + 1);
    out.push(h);
    for i in n..seq.len() {
        let outgoing = mul_mod(u64::from(seq[i - n]) + 1, top);
        h = add_mod(h, HASH_MODULUS - outgoing);
        h = add_mod(mul_mod(h, HASH_BASE), u64::from(seq[i]) + 1);
        out.push(h);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Posting {
    pub hash: u64,
    pub doc_id: DocId,
    pub offset: u32,
}

/// Sorted table of every length-`n` window hash in a corpus.
#[derive(Clone, Debug)]
pub struct NGramIndex {
    n: usize,
    postings: Vec<Posting>,
}

impl NGramIndex {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }

    pub fn postings(&self) -> &[Posting] {
        &self.postings
    }

    pub fn lookup(&self, hash: u64) -> &[Posting] {
        let lo = self.postings.partition_point(|p| p.hash < hash);
        let hi = self.postings.partition_point(|p| p.hash <= hash);
        &self.postings[lo..hi]
    }
}

pub fn build_index(corpus: &Corpus, n: usize) -> Result<NGramIndex> {
    if n < 2 {
        return Err(Error::invalid(format!("n-gram length must be >= 2, got {n}")));
    }
    let meta = corpus.manifest();
    let mut postings: Vec<Posting> = corpus
        .documents()
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, doc)| {
            let doc_id = meta[i].id;
            window_hashes(doc, n)
                .into_iter()
                .enumerate()
                .map(move |(offset, hash)| Posting {
                    hash,
                    doc_id,
                    offset: offset as u32,
                })
        })
        .collect();
    postings.par_sort_unstable();
    Ok(NGramIndex { n, postings })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RepeatHit {
    pub probe_id: ProbeId,
    pub doc_id: DocId,
    /// Start of the longest common run inside the document.
    pub doc_offset: usize,
    pub match_len: usize,
}

#[derive(Clone, Copy)]
struct Run {
    len: usize,
    doc_offset: usize,
}

fn record(best: &mut BTreeMap<DocId, Run>, doc: DocId, run: Run) {
    best.entry(doc)
        .and_modify(|cur| {
            if run.len > cur.len || (run.len == cur.len && run.doc_offset < cur.doc_offset) {
                *cur = run;
            }
        })
        .or_insert(run);
}

fn emit(probe_id: ProbeId, best: BTreeMap<DocId, Run>) -> impl Iterator<Item = RepeatHit> {
    best.into_iter().map(move |(doc_id, run)| RepeatHit {
        probe_id,
        doc_id,
        doc_offset: run.doc_offset,
        match_len: run.len,
    })
}

fn is_self(probe: &Probe, doc: DocId, doc_pos: usize, target_pos: usize) -> bool {
    doc == probe.source_doc && doc_pos as isize - target_pos as isize == probe.target_offset() as isize
}

/// One hit per (probe, document) holding the longest run of at least
/// `min_len` tokens; ties go to the smallest document offset. The probe's own
/// source window is excluded.
pub fn find_repeats(
    probes: &[Probe],
    index: &NGramIndex,
    corpus: &Corpus,
    min_len: usize,
) -> Result<Vec<RepeatHit>> {
    let n = index.n;
    if min_len < n {
        return Err(Error::MinLenBelowWindow { min_len, n });
    }
    let per_probe: Vec<Vec<RepeatHit>> = probes
        .par_iter()
        .map(|probe| {
            let target = probe.target.as_slice();
            let mut best = BTreeMap::new();
            for (j, hash) in window_hashes(target, n).into_iter().enumerate() {
                for posting in index.lookup(hash) {
                    let Some(doc) = corpus.doc(posting.doc_id) else {
                        continue;
                    };
                    let off = posting.offset as usize;
                    if doc[off..off + n] != target[j..j + n] {
                        continue;
                    }
                    if is_self(probe, posting.doc_id, off, j) {
                        continue;
                    }
                    // the leftmost window of this run extends it
                    if j > 0 && off > 0 && target[j - 1] == doc[off - 1] {
                        continue;
                    }
                    let right = target[j + n..]
                        .iter()
                        .zip(&doc[off + n..])
                        .take_while(|(a, b)| a == b)
                        .count();
                    let len = n + right;
                    if len >= min_len {
                        record(&mut best, posting.doc_id, Run { len, doc_offset: off });
                    }
                }
            }
            emit(probe.probe_id, best).collect()
        })
        .collect();
    Ok(per_probe.into_iter().flatten().collect())
}

/// Longest-common-substring dynamic program per (probe, document); the
/// reference for [`find_repeats`].
pub fn brute_force_repeats(probes: &[Probe], corpus: &Corpus, min_len: usize) -> Vec<RepeatHit> {
    let min_len = min_len.max(1);
    let per_probe: Vec<Vec<RepeatHit>> = probes
        .par_iter()
        .map(|probe| {
            let target = probe.target.as_slice();
            let mut best = BTreeMap::new();
            let mut prev = vec![0usize; target.len() + 1];
            let mut cur = vec![0usize; target.len() + 1];
            for (meta, doc) in corpus.iter() {
                let mut longest = Run { len: 0, doc_offset: 0 };
                prev.iter_mut().for_each(|v| *v = 0);
                for (dj, &dt) in doc.iter().enumerate() {
                    cur[0] = 0;
                    for (ti, &tt) in target.iter().enumerate() {
                        cur[ti + 1] = if tt == dt && !is_self(probe, meta.id, dj, ti) {
                            prev[ti] + 1
                        } else {
                            0
                        };
                        // strict comparison keeps the earliest run among equals
                        let len = cur[ti + 1];
                        if len > longest.len {
                            longest = Run {
                                len,
                                doc_offset: dj + 1 - len,
                            };
                        }
                    }
                    std::mem::swap(&mut prev, &mut cur);
                }
                if longest.len >= min_len {
                    best.insert(meta.id, longest);
                }
            }
            emit(probe.probe_id, best).collect()
        })
        .collect();
    per_probe.into_iter().flatten().collect()
}

/// Number of distinct documents with a hit for `probe_id`.
pub fn count_repeats(probe_id: ProbeId, hits: &[RepeatHit]) -> usize {
    hits.iter()
        .filter(|h| h.probe_id == probe_id)
        .map(|h| h.doc_id)
        .collect::<BTreeSet<_>>()
        .len()
}

/// Repeat counts for every probe, zero when a probe has no hits.
pub fn repeat_counts(probes: &[Probe], hits: &[RepeatHit]) -> BTreeMap<ProbeId, usize> {
    let mut docs: BTreeMap<ProbeId, BTreeSet<DocId>> =
        probes.iter().map(|p| (p.probe_id, BTreeSet::new())).collect();
    for h in hits {
        docs.entry(h.probe_id).or_default().insert(h.doc_id);
    }
    docs.into_iter().map(|(id, set)| (id, set.len())).collect()
}

pub fn write_hits(path: &Path, hits: &[RepeatHit]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for h in hits {
        serde_json::to_writer(&mut w, h)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_hits(path: &Path) -> Result<Vec<RepeatHit>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{plant_canaries, probes_for_canaries, CanarySpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_doc(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
        (0..len).map(|_| rng.gen()).collect()
    }

    #[test]
    fn rolling_matches_direct_hash() {
        let seq: Vec<TokenId> = (0..50).map(|i| (i * 37 % 257) as TokenId).collect();
        let rolled = window_hashes(&seq, 7);
        for (i, h) in rolled.iter().enumerate() {
            assert_eq!(*h, window_hashes(&seq[i..i + 7], 7)[0]);
        }
    }

    #[test]
    fn index_sizes() {
        let exact = Corpus::from_texts([vec![1u8; 30]]);
        assert_eq!(build_index(&exact, 30).unwrap().len(), 1);
        let short = Corpus::from_texts([vec![1u8; 29]]);
        assert_eq!(build_index(&short, 30).unwrap().len(), 0);
        assert!(build_index(&short, 1).is_err());
    }

    #[test]
    fn duplicated_doc_doubles_postings() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_doc(&mut rng, 80);
        let corpus = Corpus::from_texts([d.clone(), d]);
        let index = build_index(&corpus, 30).unwrap();
        assert_eq!(index.len(), 2 * 51);
        for p in index.postings() {
            assert!(index.lookup(p.hash).len() >= 2);
        }
    }

    #[test]
    fn canary_copies_minus_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = Corpus::from_texts((0..20).map(|_| random_doc(&mut rng, 150)));
        let spec = CanarySpec {
            text: random_doc(&mut rng, 100),
            repeat_count: 8,
            placement_seed: 4,
        };
        let corpus = plant_canaries(&base, &[spec], 0, 96).unwrap();
        let probes = probes_for_canaries(&corpus, 32, 64, 0);
        let index = build_index(&corpus, 30).unwrap();
        let hits = find_repeats(&probes, &index, &corpus, 30).unwrap();
        assert_eq!(hits.len(), 7);
        assert!(hits.iter().all(|h| h.match_len == 64));
        assert_eq!(count_repeats(probes[0].probe_id, &hits), 7);
    }

    #[test]
    fn unique_target_has_no_hits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let corpus = Corpus::from_texts((0..30).map(|_| random_doc(&mut rng, 200)));
        let probes = crate::corpus::extract_probes(&corpus, 32, 64, 5, 0, false).unwrap();
        let index = build_index(&corpus, 30).unwrap();
        assert!(find_repeats(&probes, &index, &corpus, 30).unwrap().is_empty());
        assert!(brute_force_repeats(&probes, &corpus, 30).is_empty());
    }

    #[test]
    fn threshold_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shared = random_doc(&mut rng, 30);
        let mut a = random_doc(&mut rng, 40);
        a.extend_from_slice(&shared[..29]);
        a.extend(random_doc(&mut rng, 40));
        let mut b = random_doc(&mut rng, 10);
        b.extend_from_slice(&shared[..29]);
        b.extend(random_doc(&mut rng, 20));
        let corpus = Corpus::from_texts([a.clone(), b]);
        let probe = Probe::cut(ProbeId(0), DocId(0), &corpus.documents()[0], 20, 8, 64).unwrap();
        let index = build_index(&corpus, 30).unwrap();
        assert!(find_repeats(&[probe.clone()], &index, &corpus, 30).unwrap().is_empty());
        assert!(brute_force_repeats(&[probe.clone()], &corpus, 30).is_empty());

        // one more shared token crosses the threshold
        let mut b30 = random_doc(&mut rng, 10);
        b30.extend_from_slice(&a[40..70]);
        let corpus = Corpus::from_texts([a, b30]);
        let index = build_index(&corpus, 30).unwrap();
        let hits = find_repeats(&[probe.clone()], &index, &corpus, 30).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].match_len, 30);
        assert_eq!(hits, brute_force_repeats(&[probe], &corpus, 30));
    }

    #[test]
    fn min_len_below_window_rejected() {
        let corpus = Corpus::from_texts([vec![0u8; 40]]);
        let index = build_index(&corpus, 30).unwrap();
        assert!(matches!(
            find_repeats(&[], &index, &corpus, 29),
            Err(Error::MinLenBelowWindow { .. })
        ));
    }

    #[test]
    fn brute_force_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let doc = random_doc(&mut rng, 200);
        let corpus = Corpus::from_texts([doc]);
        let probe = Probe::cut(ProbeId(0), DocId(0), &corpus.documents()[0], 50, 32, 64).unwrap();
        assert!(brute_force_repeats(&[probe.clone()], &Corpus::empty(), 30).is_empty());
        assert!(brute_force_repeats(&[probe.clone()], &corpus, 30).is_empty());
        let index = build_index(&corpus, 30).unwrap();
        assert!(find_repeats(&[probe], &index, &corpus, 30).unwrap().is_empty());
    }

    #[test]
    fn self_document_other_diagonal_counts() {
        // a document holding its own target twice repeats within itself
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let block = random_doc(&mut rng, 96);
        let mut doc = block.clone();
        doc.extend_from_slice(&block);
        let corpus = Corpus::from_texts([doc]);
        let probe = Probe::cut(ProbeId(0), DocId(0), &corpus.documents()[0], 0, 32, 64).unwrap();
        let index = build_index(&corpus, 30).unwrap();
        let hits = find_repeats(&[probe.clone()], &index, &corpus, 30).unwrap();
        assert_eq!(hits, brute_force_repeats(&[probe], &corpus, 30));
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_offset, 128);
    }

    #[test]
    fn hits_file_round_trip() {
        let hits = vec![RepeatHit {
            probe_id: ProbeId(3),
            doc_id: DocId(9),
            doc_offset: 12,
            match_len: 41,
        }];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_hits(f.path(), &hits).unwrap();
        assert_eq!(read_hits(f.path()).unwrap(), hits);
    }

    #[test]
    fn counting_rules() {
        let hit = |doc| RepeatHit {
            probe_id: ProbeId(1),
            doc_id: DocId(doc),
            doc_offset: 0,
            match_len: 30,
        };
        assert_eq!(count_repeats(ProbeId(1), &[]), 0);
        let seven: Vec<_> = (0..7).map(hit).collect();
        assert_eq!(count_repeats(ProbeId(1), &seven), 7);
        assert_eq!(count_repeats(ProbeId(1), &[hit(4), hit(4), hit(4)]), 1);
        assert_eq!(count_repeats(ProbeId(2), &seven), 0);
    }
}
