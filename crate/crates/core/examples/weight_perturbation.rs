//! Add Gaussian noise to a checkpoint's weights and keep the best of several
//! trials per probe.

use memaudit::corpus::{extract_probes, Corpus};
use memaudit::metric::kl_ld_batch;
use memaudit::model::{best_of_perturbations_batch, perturb, train, weight_delta, weight_histogram, ModelConfig};

fn main() -> memaudit::Result<()> {
    let texts: Vec<String> = (0..40)
        .map(|i| format!("Log {i}: valve {} opened, pressure {} kPa, operator initials R.K.", i % 4, 90 + i))
        .collect();
    let corpus = Corpus::from_texts(&texts);
    let cfg = ModelConfig {
        model_width: 32,
        layer_count: 1,
        head_count: 2,
        batch_size: 8,
        total_steps: 120,
        checkpoint_every: 60,
        warmup_steps: 10,
        ..ModelConfig::default()
    };
    let store = train(&corpus, &cfg)?;
    let base = store.get(60).expect("checkpoint at step 60");

    let noisy = perturb(base, 2e-3, 42)?;
    println!("||noise|| = {:.4}", weight_delta(base, &noisy)?);
    println!("||step 60 -> 120|| = {:.4}", weight_delta(base, store.latest())?);

    let probes = extract_probes(&corpus, 16, 32, 6, 2, true)?;
    let before = kl_ld_batch(base, &probes)?;
    let outcomes = best_of_perturbations_batch(base, &probes, 20, 2e-3, 7)?;
    println!("{:>6} {:>10} {:>10}", "probe", "unperturbed", "best of 20");
    for (o, d) in outcomes.iter().zip(before) {
        println!("{:>6} {:>10} {:>10}", o.probe_id.0, d.value(), o.min_kl_ld);
    }

    let h = weight_histogram(store.latest(), 8);
    println!("|w| histogram: {:?}", h.counts);
    Ok(())
}
