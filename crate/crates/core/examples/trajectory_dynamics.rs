//! Delta distribution, Laplace fit and stationarity of kl-LD trajectories,
//! with the random-walk and i.i.d. controls.

use memaudit::corpus::ProbeId;
use memaudit::dynamics::{delta_histogram, deltas, fit_laplace, iid_control, random_walk_control, stationarity_stats, Trajectory};
use memaudit::stats;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> memaudit::Result<()> {
    // Mean-reverting series around a per-probe level, like unmemorized probes
    // that fluctuate without drifting.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trajectories: Vec<Trajectory> = (0..300)
        .map(|i| {
            let level = rng.gen_range(30.0..55.0);
            let mut x: f64 = level;
            let series = (0..12u64)
                .map(|c| {
                    x = level + 0.4 * (x - level) + rng.gen_range(-4.0..4.0);
                    (c * 100, x.round().clamp(0.0, 64.0) as usize)
                })
                .collect();
            Trajectory {
                probe_id: ProbeId(i),
                series,
                first_encounter_step: Some(0),
            }
        })
        .collect();

    let d: Vec<f64> = deltas(&trajectories).into_iter().map(|v| v as f64).collect();
    let h = delta_histogram(&trajectories);
    println!("{} deltas, histogram total {}", d.len(), h.total());
    println!("skewness {:.3}, median {}", stats::skewness(&d).unwrap(), stats::median(&d).unwrap());
    let fit = fit_laplace(&d)?;
    println!("Laplace location {:.2}, scale {:.2}, KS {:.3}", fit.location, fit.scale, fit.ks_statistic);

    let st = stationarity_stats(&trajectories)?;
    let s = &st.variance_slope;
    println!(
        "normalized variance slope {:.4} [{:.4}, {:.4}], contains 0: {}",
        s.slope,
        s.ci_low,
        s.ci_high,
        s.ci_contains_zero()
    );

    let sd = stats::variance(&d).unwrap().sqrt();
    let rw = random_walk_control(300, 12, sd, 50, 1)?;
    println!("random walks: {}/{} with a positive variance trend", rw.positive_significant, rw.repetitions);
    let iid = iid_control(300, 12, 2)?;
    println!("i.i.d. control slope CI [{:.4}, {:.4}]", iid.ci_low, iid.ci_high);
    Ok(())
}
