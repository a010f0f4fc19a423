//! Instrumented warm-up: watch the loss trajectory on the real corpus.

use speechworthy::align::{train, train_sft, AlignConfig, MaskStrategy, SftConfig, SftExample};
use speechworthy::corpus::{generate_style_corpus, CorpusSpec};
use speechworthy::tinylm::{greedy_decode, ModelConfig, ModelParams};

fn main() {
    let spec = CorpusSpec { train_pairs: 50, heldout_pairs: 10, seed: 7 };
    let corpus = generate_style_corpus(&spec).unwrap();
    println!("vocab size {}", corpus.vocab.size());
    let ex0 = &corpus.train_raw[0];
    println!("example prompt={:?} chosen={:?} rejected={:?}", ex0.prompt, ex0.chosen, ex0.rejected);
    let t0 = &corpus.train[0];
    println!(
        "token lens: prompt={} chosen={} rejected={}",
        t0.prompt.len(),
        t0.chosen.len(),
        t0.rejected.len()
    );

    let params = ModelParams::init(ModelConfig::toy_default(), corpus.vocab.size(), 0).unwrap();
    let data: Vec<SftExample> = corpus
        .train
        .iter()
        .map(|ex| SftExample { prompt: ex.prompt.clone(), target: ex.rejected.clone() })
        .collect();

    for (lr, epochs) in [(0.05, 4), (0.1, 4)] {
        let t = std::time::Instant::now();
        let sft = SftConfig { learning_rate: lr, epochs, seed: 1 };
        let (trained, losses) = train_sft(&params, &corpus.vocab, &data, &sft).unwrap();
        let n = losses.len();
        println!(
            "lr={lr}: steps={n} first={:.3} mid={:.3} last={:.3} ({:?})",
            losses[0],
            losses[n / 2],
            losses[n - 1],
            t.elapsed()
        );
        for ex in corpus.heldout.iter().take(3) {
            let out = greedy_decode(&trained, &corpus.vocab, &ex.prompt, 20).unwrap();
            println!("  decode: {:?}", corpus.vocab.decode_text(&out.ids));
        }
        // One epoch of preference training on top.
        let acfg = AlignConfig {
            learning_rate: 0.2,
            epochs: 1,
            mask_strategy: MaskStrategy::KqLn,
            ..AlignConfig::default()
        };
        let (pol, report) =
            train(&trained, &trained, &corpus.vocab, &corpus.train, &corpus.heldout, &acfg)
                .unwrap();
        println!(
            "  after 1 epoch dpo: acc={:?} margin={:?} first_step_margin={:.4} last_step_margin={:.4}",
            report.heldout_accuracy,
            report.heldout_mean_margin,
            report.steps[0].margin,
            report.steps.last().unwrap().margin
        );
        let moved = !pol.bitwise_eq(&trained);
        println!("  dpo moved params: {moved}");
    }
}
