//! Count how many other documents contain each probe target, using the
//! rolling-hash index and checking it against the brute-force scan.

use memaudit::corpus::{extract_probes, Corpus};
use memaudit::repeats::{brute_force_repeats, build_index, find_repeats, repeat_counts};

fn main() -> memaudit::Result<()> {
    let shared = "The committee approved the harbour budget after a long debate on Tuesday evening.";
    let texts: Vec<String> = (0..40)
        .map(|i| {
            if i % 8 == 0 {
                format!("Minutes {i}. {shared} Nothing else was discussed.")
            } else {
                format!("Note {i}: inventory line {} checked by clerk {} at bay {}.", i * 37, i % 5, i * 3)
            }
        })
        .collect();
    let corpus = Corpus::from_texts(&texts);
    let probes = extract_probes(&corpus, 8, 40, 60, 1, true)?;

    let index = build_index(&corpus, 30)?;
    let mut fast = find_repeats(&probes, &index, &corpus, 30)?;
    let mut slow = brute_force_repeats(&probes, &corpus, 30);
    fast.sort();
    slow.sort();
    assert_eq!(fast, slow);
    println!("{} index postings, {} hits (matches brute force)", index.len(), fast.len());

    let counts = repeat_counts(&probes, &fast);
    let repeated: Vec<_> = counts.iter().filter(|(_, &c)| c > 0).collect();
    println!("{} of {} probes repeat elsewhere", repeated.len(), probes.len());
    for (id, c) in repeated.iter().take(5) {
        println!("  probe {:>3}: {c} other documents", id.0);
    }
    Ok(())
}
