//! Regress final kl-LD on log repeats and z-complexity, and tabulate the
//! binned means.

use memaudit::corpus::ProbeId;
use memaudit::dynamics::{binned_means, fit_memorization_model, MemorizationRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> memaudit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let records: Vec<MemorizationRecord> = (0..400)
        .map(|i| {
            let repeats = [0usize, 0, 0, 1, 3, 7, 15, 31][i % 8];
            let z = rng.gen_range(0.4..1.1);
            let kl_ld = (40.0 * z - 6.0 * (1.0 + repeats as f64).ln() + rng.gen_range(-5.0..5.0)).clamp(0.0, 64.0);
            MemorizationRecord {
                probe_id: ProbeId(i as u32),
                repeats,
                z_complexity: z,
                kl_ld,
            }
        })
        .collect();

    let fit = fit_memorization_model(&records, false)?;
    println!(
        "kl-LD = {:.2} {:+.2} ln(1+repeats) {:+.2} z   (R^2 {:.3})",
        fit.intercept, fit.repeats_coef, fit.complexity_coef, fit.r_squared
    );
    println!("standard errors {:.3?}", fit.std_errors);

    let cells = binned_means(&records, &[0.0, 1.0, 4.0, 16.0, 64.0], &[0.4, 0.65, 0.85, 1.1]);
    println!("{:>6} {:>6} {:>6} {:>8}", "rep", "z", "n", "mean");
    for c in cells {
        println!("{:>6} {:>6} {:>6} {:>8.2}", c.repeat_bin, c.complexity_bin, c.count, c.mean);
    }
    Ok(())
}
