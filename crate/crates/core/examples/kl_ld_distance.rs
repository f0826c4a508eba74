//! Edit distance between a probe target and a model continuation.

use memaudit::corpus::tokenize;
use memaudit::metric::{continuation_distance, levenshtein};

fn main() {
    let target = tokenize(b"the quick brown fox jumps over the lazy dog");
    let cases: [&[u8]; 4] = [
        b"the quick brown fox jumps over the lazy dog",
        b"the quick brown fox jumped over the lazy dog",
        b"the quick brown cat jumps over the lazy cow",
        b"completely unrelated continuation text here",
    ];
    for c in cases {
        let cont = tokenize(c);
        let d = continuation_distance(target.as_slice(), cont.as_slice());
        println!("{:>3}  exact={:<5}  {:?}", d.value(), d.is_exact(), String::from_utf8_lossy(c));
    }

    // A capped distance is exact up to the cap and saturates at cap + 1.
    let a = tokenize(b"aaaaaaaaaaaaaaaa");
    let b = tokenize(b"bbbbbbbbbbbbbbbb");
    println!(
        "full {} / capped at 5 -> {}",
        levenshtein(a.as_slice(), b.as_slice(), None),
        levenshtein(a.as_slice(), b.as_slice(), Some(5))
    );
}
