//! Minimal probe: does one SGD step move the loss on each config?

use speechworthy::align::{train_sft, SftConfig, SftExample};
use speechworthy::tinylm::{
    sequence_logprob, sequence_logprob_backward, sequence_logprob_with_trace, ModelConfig,
    ModelParams, Vocab,
};

fn probe(label: &str, cfg: ModelConfig) {
    let vocab = Vocab::from_corpus(&["あいうえおかきくけこ- *です。"]).unwrap();
    let params = ModelParams::init(cfg, vocab.size(), 0).unwrap();
    let prompt = vocab.encode_prompt("あいか").unwrap();
    let target = vocab.encode_response("- **うえ**").unwrap();

    let (lp, trace) = sequence_logprob_with_trace(&params, &vocab, &prompt, &target).unwrap();
    let grads = sequence_logprob_backward(&params, &trace, -1.0);
    let gnorm: f64 = (0..grads.num_slots())
        .map(|i| grads.slot(i).1.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    println!("{label}: initial loss {:.4}, grad norm {:.6}", -lp, gnorm);

    let data = vec![SftExample { prompt: prompt.clone(), target: target.clone() }];
    let sft = SftConfig { learning_rate: 0.1, epochs: 50, seed: 0 };
    let (trained, losses) = train_sft(&params, &vocab, &data, &sft).unwrap();
    println!(
        "{label}: loss after 50 steps {:.4} (from {:.4})",
        losses.last().unwrap(),
        losses[0]
    );
    let moved = !trained.bitwise_eq(&params);
    let lp2 = sequence_logprob(&trained, &vocab, &prompt, &target).unwrap();
    println!("{label}: params moved: {moved}, final logprob {:.4}", lp2);
}

fn main() {
    probe("tiny(2)", ModelConfig::tiny(2));
    probe("toy_default", ModelConfig::toy_default());
}
