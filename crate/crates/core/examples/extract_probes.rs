//! Cut (context, target) probes from a corpus and write them as JSONL.

use memaudit::corpus::synth::{synthetic_corpus, SynthMix};
use memaudit::corpus::{detokenize, extract_probes, read_probes, write_probes};

fn main() -> memaudit::Result<()> {
    let corpus = synthetic_corpus(200, 200, 800, &SynthMix::default(), 3);
    let probes = extract_probes(&corpus, 32, 64, 500, 17, true)?;
    println!("{} probes from {} documents", probes.len(), corpus.len());

    let p = &probes[0];
    println!("probe {} from doc {} at offset {}", p.probe_id.0, p.source_doc.0, p.source_offset);
    println!("  context: {:?}", String::from_utf8_lossy(&detokenize(p.context.as_slice())));
    println!("  target:  {:?}", String::from_utf8_lossy(&detokenize(p.target.as_slice())));

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("probes.jsonl");
    write_probes(&path, &probes)?;
    assert_eq!(read_probes(&path)?, probes);
    println!("wrote and re-read {}", path.display());
    Ok(())
}
