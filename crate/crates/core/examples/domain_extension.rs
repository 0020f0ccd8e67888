//! Adds domain words to a model's vocabulary. Each new row starts as the mean
//! of the rows the old tokenizer split the word into.

use minaret::encoder::{BiEncoder, EncoderConfig, EMBEDDING_TENSOR};
use minaret::surgery::extend_model;
use minaret::vocab::{train_bpe, BpeTrainerConfig};

fn main() -> minaret::Result<()> {
    let base_tok = train_bpe(["the prophet spoke of patience and prayer"], &BpeTrainerConfig::new(60))?;
    let base = BiEncoder::init(base_tok.clone(), 8, EncoderConfig::default(), 3)?;
    let ckpt = base.to_checkpoint();

    let new_tokens: Vec<String> = ["▁prophethood", "▁prayers", "▁qiyam"].iter().map(|s| s.to_string()).collect();
    let ext = extend_model(&ckpt, &new_tokens, &base_tok, 11)?;

    let emb = ext.checkpoint.require(EMBEDDING_TENSOR)?;
    for t in &new_tokens {
        let pieces: Vec<&str> = base_tok
            .segment_piece(t)
            .into_iter()
            .map(|i| base_tok.vocab().token(i).unwrap())
            .collect();
        let id = ext.tokenizer.vocab().id_of(t).unwrap() as usize;
        println!("{t:<14} id {id:<4} from {pieces:?}: {:.4?}", &emb.row(id)[..3]);
    }
    println!("random rows for: {:?}", ext.fallback_tokens);

    let model = BiEncoder::from_checkpoint(ext.checkpoint, ext.tokenizer, EncoderConfig::default(), 0)?;
    let ids = model.tokenizer().encode("the prophethood");
    println!("'the prophethood' now encodes to {} pieces: {ids:?}", ids.len() - 2);
    Ok(())
}
