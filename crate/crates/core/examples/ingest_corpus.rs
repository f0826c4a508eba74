//! Ingest a JSONL corpus, inspect the byte tokens and store it on disk.

use memaudit::corpus::{detokenize, ingest, load_corpus, save_corpus, tokenize, InputFormat, DOC_SEP};

fn main() -> memaudit::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let input = dir.path().join("docs.jsonl");
    std::fs::write(
        &input,
        concat!(
            "{\"text\": \"The lighthouse keeper logged the storm at dawn.\"}\n",
            "{\"text\": \"Invoice 4471: two crates of brass fittings.\"}\n",
            "{\"text\": \"caf\\u00e9 au lait\"}\n",
        ),
    )
    .expect("write input");

    let corpus = ingest(&input, InputFormat::Jsonl)?;
    println!("{} documents, {} tokens", corpus.len(), corpus.total_tokens());
    for (meta, doc) in corpus.iter() {
        println!("  doc {:>2}: {:>3} tokens, first {:?}", meta.id.0, doc.len(), &doc.as_slice()[..6]);
    }

    // Bytes map one-to-one onto tokens; 256 is reserved for the separator.
    let t = tokenize("é".as_bytes());
    println!("'é' -> {:?}, separator token {DOC_SEP}", t.as_slice());
    assert_eq!(detokenize(t.as_slice()), "é".as_bytes());

    let store = dir.path().join("corpus");
    save_corpus(&corpus, &store)?;
    let back = load_corpus(&store)?;
    assert_eq!(back, corpus);
    println!("round trip through {} ok", store.display());
    Ok(())
}
