//! Builds an index, runs queries and writes MRR/recall plus a TREC run file.

use minaret::encoder::{BiEncoder, EncoderConfig};
use minaret::retrieval::{build_index, evaluate};
use minaret::synthetic::{self_retrieval_set, topic_pairs, word_level_tokenizer};
use minaret::training::{train_retriever, HyperParams};

fn main() -> minaret::Result<()> {
    let pairs = topic_pairs(4, 6, 9);
    let texts: Vec<&str> = pairs.iter().flat_map(|p| [p.anchor.as_str(), p.positive.as_str()]).collect();
    let encoder = BiEncoder::init(word_level_tokenizer(&texts)?, 16, EncoderConfig::default(), 9)?;
    let (corpus, evalset) = self_retrieval_set(&pairs)?;

    let untrained = evaluate(&encoder, &corpus, &evalset, &[10, 100])?;
    let hp = HyperParams {
        epochs: 40,
        batch_size: 8,
        learning_rate: 0.05,
        seed: 9,
        ..HyperParams::retrieval()
    };
    let (encoder, _) = train_retriever(encoder, std::slice::from_ref(&pairs), &hp)?;
    let trained = evaluate(&encoder, &corpus, &evalset, &[10, 100])?;

    println!("untrained:\n{}", untrained.to_text());
    println!("trained:\n{}", trained.to_text());
    print!("first run lines:\n{}", trained.to_trec("demo").lines().take(3).map(|l| format!("{l}\n")).collect::<String>());

    let index = build_index(&encoder, &corpus)?;
    let hits = index.search_text(&encoder, &pairs[0].anchor, 3)?;
    println!("top 3 for {:?}:", pairs[0].anchor);
    for h in hits {
        println!("  {} {:.4}", h.doc_id, h.score);
    }
    Ok(())
}
