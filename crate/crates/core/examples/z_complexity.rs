//! Compression-ratio complexity of a few strings and tercile bins over a
//! synthetic probe set.

use memaudit::complexity::{complexity_bins, quantile_edges, z_complexity, z_complexity_bytes, COMPRESSOR_ID};
use memaudit::corpus::synth::{synthetic_corpus, SynthMix};
use memaudit::corpus::extract_probes;

fn main() -> memaudit::Result<()> {
    println!("compressor: {COMPRESSOR_ID}");
    let samples: [(&str, Vec<u8>); 3] = [
        ("64 x 'a'", vec![b'a'; 64]),
        ("prose", b"Rain fell on the harbour while the ferry waited for the late train.".to_vec()),
        ("hex id", b"9f3a0c71e2b84d56a1f0c9e3b7d2a4f68e1c5b9d0a7f3e2c4b6d8a1e9f0c3b5".to_vec()),
    ];
    for (name, bytes) in &samples {
        println!("{name:>10}: z = {:.3}", z_complexity_bytes(bytes)?.value());
    }

    let corpus = synthetic_corpus(300, 200, 800, &SynthMix::default(), 2);
    let probes = extract_probes(&corpus, 32, 64, 600, 4, true)?;
    let z: Vec<f64> = probes
        .iter()
        .map(|p| z_complexity(p.target.as_slice()).map(|z| z.value()))
        .collect::<memaudit::Result<_>>()?;
    let edges = quantile_edges(&z, 3)?;
    println!("tercile edges: {edges:.3?}");
    let bins = complexity_bins(&probes, &edges)?;
    let mut counts = [0usize; 3];
    for b in bins.values() {
        counts[*b] += 1;
    }
    println!("probes per bin: {counts:?}");
    Ok(())
}
