//! Trains a bi-encoder on 64 generated pairs from 8 topics and checks that
//! every anchor retrieves its own positive.

use std::time::Instant;

use minaret::encoder::{BiEncoder, EncoderConfig};
use minaret::retrieval::evaluate;
use minaret::synthetic::{self_retrieval_set, topic_pairs, word_level_tokenizer};
use minaret::training::{train_retriever, HyperParams};

fn main() -> minaret::Result<()> {
    let pairs = topic_pairs(8, 8, 7);
    let texts: Vec<&str> = pairs.iter().flat_map(|p| [p.anchor.as_str(), p.positive.as_str()]).collect();
    let tokenizer = word_level_tokenizer(&texts)?;
    let encoder = BiEncoder::init(tokenizer, 32, EncoderConfig::default(), 7)?;
    let (corpus, evalset) = self_retrieval_set(&pairs)?;

    let before = evaluate(&encoder, &corpus, &evalset, &[1, 10])?;
    let hp = HyperParams {
        epochs: 60,
        batch_size: 16,
        learning_rate: 0.05,
        seed: 7,
        ..HyperParams::retrieval()
    };
    let start = Instant::now();
    let (encoder, report) = train_retriever(encoder, &[pairs], &hp)?;
    let after = evaluate(&encoder, &corpus, &evalset, &[1, 10])?;

    println!("trained {} steps in {:.2?}", report.step_losses.len(), start.elapsed());
    println!(
        "loss: first epoch {:.4}, last epoch {:.4}",
        report.epoch_losses[0],
        report.epoch_losses.last().unwrap()
    );
    for name in ["MRR@10", "Recall@10"] {
        println!("{name}: {:.3} -> {:.3}", before.metric(name).unwrap(), after.metric(name).unwrap());
    }
    Ok(())
}
