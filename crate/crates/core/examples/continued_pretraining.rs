//! Continues masked-language-model training on a small in-domain corpus.

use minaret::encoder::{BiEncoder, EncoderConfig};
use minaret::training::{pretrain, HyperParams, MlmConfig};
use minaret::vocab::{train_bpe, BpeTrainerConfig};

fn main() -> minaret::Result<()> {
    let corpus: Vec<String> = [
        "patience is light and prayer is proof",
        "charity extinguishes sin as water extinguishes fire",
        "the best of you are those who learn and teach",
        "speak good or remain silent",
        "prayer is the pillar of the religion",
        "patience at the first strike is true patience",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let tok = train_bpe(&corpus, &BpeTrainerConfig::new(140))?;
    let encoder = BiEncoder::init(tok, 24, EncoderConfig::default(), 5)?;

    let hp = HyperParams {
        epochs: 40,
        batch_size: 3,
        learning_rate: 0.02,
        seed: 5,
        ..HyperParams::pretraining()
    };
    let (_, report) = pretrain(encoder, &corpus, &hp, &MlmConfig::default())?;
    for (e, loss) in report.epoch_losses.iter().enumerate().step_by(8) {
        println!("epoch {e:>2}: masked-token loss {loss:.4}");
    }
    let n = report.step_losses.len();
    let head: f64 = report.step_losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = report.step_losses[n - 10..].iter().sum::<f64>() / 10.0;
    println!("{n} steps; mean loss of first 10 {head:.4}, last 10 {tail:.4}");
    Ok(())
}
