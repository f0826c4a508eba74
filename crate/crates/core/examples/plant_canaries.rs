//! Generate a synthetic corpus, plant canaries at several repeat levels and
//! confirm each copy is found by the repeat scanner.

use memaudit::corpus::synth::{canary_specs, synthetic_corpus, SynthMix};
use memaudit::corpus::{plant_canaries, probes_for_canaries};
use memaudit::repeats::{build_index, find_repeats, repeat_counts};

fn main() -> memaudit::Result<()> {
    let base = synthetic_corpus(300, 200, 600, &SynthMix::default(), 11);
    let specs = canary_specs(&[1, 2, 4, 8, 16], 2, 112, 5);
    let planted = plant_canaries(&base, &specs, 6, 96)?;
    println!(
        "{} ordinary documents + {} canary copies = {} documents",
        base.len(),
        planted.len() - base.len(),
        planted.len()
    );
    println!("first canary: {:?}", String::from_utf8_lossy(&specs[0].text[..48]));

    let probes = probes_for_canaries(&planted, 32, 64, 0);
    let index = build_index(&planted, 30)?;
    let hits = find_repeats(&probes, &index, &planted, 30)?;
    let counts = repeat_counts(&probes, &hits);

    println!("{:>8} {:>8} {:>8}", "planted", "probes", "repeats");
    for p in &probes {
        let meta = planted.meta(p.source_doc).expect("probe source exists");
        let other_copies = counts[&p.probe_id];
        assert_eq!(other_copies as u32, meta.repeat_count - 1);
        println!("{:>8} {:>8} {:>8}", meta.repeat_count, p.probe_id.0, other_copies);
    }
    Ok(())
}
