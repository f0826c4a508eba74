//! Calibrate the cross-entropy threshold on labeled probes, then flag probes
//! scored by a trained model.

use std::collections::BTreeMap;

use memaudit::corpus::{extract_probes, Corpus};
use memaudit::diagnostic::{apply_threshold, calibrate, score_probes};
use memaudit::dynamics::ClassLabel;
use memaudit::model::{train, ModelConfig};

fn main() -> memaudit::Result<()> {
    let seen: Vec<String> = (0..30).map(|i| format!("Ledger {i}: sold {} barrels of oil to the mill in Arden.", 3 + i)).collect();
    let unseen: Vec<String> = (0..30).map(|i| format!("Quartz {i} glimmers; vexed jocks hum {} wry fjords.", 7 * i)).collect();
    let corpus = Corpus::from_texts(&seen);
    let cfg = ModelConfig {
        model_width: 32,
        layer_count: 1,
        head_count: 2,
        batch_size: 8,
        total_steps: 150,
        checkpoint_every: 150,
        warmup_steps: 10,
        ..ModelConfig::default()
    };
    let model = train(&corpus, &cfg)?.latest().clone();

    // Trained-on probes stand in for latent ones, held-out text for controls.
    let mut probes = extract_probes(&corpus, 12, 24, 20, 1, true)?;
    let held_out = extract_probes(&Corpus::from_texts(&unseen), 12, 24, 20, 2, true)?;
    let offset = probes.len() as u32;
    probes.extend(held_out.into_iter().map(|mut p| {
        p.probe_id.0 += offset;
        p
    }));
    let labels: BTreeMap<_, _> = probes
        .iter()
        .map(|p| (p.probe_id, if p.probe_id.0 < offset { ClassLabel::Latent } else { ClassLabel::UnseenControl }))
        .collect();

    let scores = score_probes(&model, &probes)?;
    let of = |c: ClassLabel| -> Vec<f64> { scores.iter().filter(|s| labels[&s.probe_id] == c).map(|s| s.ce_loss).collect() };
    let cal = calibrate(&of(ClassLabel::Latent), &of(ClassLabel::UnseenControl))?;
    println!("threshold {:.3} nats/token, AUC {:.3}, Youden J {:.3}", cal.threshold, cal.auc, cal.youden_j);

    let report = apply_threshold(scores, cal.threshold, Some(&labels));
    let c = report.confusion.expect("labels given");
    println!(
        "flagged {}: tp {} fp {} tn {} fn {}",
        report.positives, c.true_positives, c.false_positives, c.true_negatives, c.false_negatives
    );
    Ok(())
}
