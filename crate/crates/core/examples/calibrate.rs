//! Scratch calibration: find a (beta, lr, epochs) region where the
//! held-out margin is non-decreasing across the DPO-weight sweep.

use speechworthy::align::{train, AlignConfig, MaskStrategy, SftConfig};
use speechworthy::corpus::{generate_style_corpus, mean_decode_nv, warmup_reference, CorpusSpec};
use speechworthy::tinylm::ModelConfig;

fn main() {
    let spec = CorpusSpec::default();
    let corpus = generate_style_corpus(&spec).unwrap();
    let warm = SftConfig { learning_rate: 0.03, epochs: 4, seed: 1 };
    let reference = warmup_reference(&corpus, ModelConfig::toy_default(), 0, &warm).unwrap();
    let probe: Vec<_> = corpus.heldout.iter().take(32).map(|e| e.prompt.clone()).collect();
    let nv_before = mean_decode_nv(&reference, &corpus.vocab, &probe, 24).unwrap();
    println!("nv_before={nv_before:.2}");

    for (beta, lr, epochs) in [
        (2.0, 0.00001, 1usize),
        (2.0, 0.000003, 1),
        (2.0, 0.000001, 1),
        (3.0, 0.000003, 1),
        (2.0, 0.000003, 2),
    ] {
        print!("beta={beta} lr={lr} epochs={epochs}: ");
        let mut margins = Vec::new();
        for w in [0.5, 0.9, 0.95, 0.99] {
            let cfg = AlignConfig {
                beta,
                learning_rate: lr,
                dpo_weight: w,
                epochs,
                mask_strategy: MaskStrategy::KqLn,
                seed: 0,
                ..AlignConfig::default()
            };
            let (policy, report) =
                train(&reference, &reference, &corpus.vocab, &corpus.train, &corpus.heldout, &cfg)
                    .unwrap();
            let nv_after = mean_decode_nv(&policy, &corpus.vocab, &probe, 24).unwrap();
            print!(
                "w={w}: acc={:.2} m={:.4} nv={:.1} | ",
                report.heldout_accuracy.unwrap(),
                report.heldout_mean_margin.unwrap(),
                nv_after
            );
            margins.push(report.heldout_mean_margin.unwrap());
        }
        let monotone = margins.windows(2).all(|p| p[1] >= p[0]);
        println!("monotone={monotone}");
    }
}
