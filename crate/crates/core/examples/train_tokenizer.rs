//! Trains a small bilingual BPE tokenizer, inspects its merges and round-trips
//! text through encode/decode and the JSON file format.

use minaret::vocab::{train_bpe, BpeTokenizer, BpeTrainerConfig};

const CORPUS: &[&str] = &[
    "the mercy of the merciful is the mercy of all",
    "read in the name of your lord who created",
    "الحمد لله رب العالمين الرحمن الرحيم",
    "بسم الله الرحمن الرحيم",
    "the lord of the worlds the most merciful",
];

fn main() -> minaret::Result<()> {
    let tok = train_bpe(CORPUS, &BpeTrainerConfig::new(120))?;
    println!("vocabulary: {} tokens, {} merges", tok.vocab_size(), tok.merges().len());
    for (i, (l, r)) in tok.merges().iter().take(8).enumerate() {
        println!("  merge {i}: {l:?} + {r:?}");
    }

    for text in ["the merciful lord", "الرحمن الرحيم", "zebra"] {
        let ids = tok.encode(text);
        let pieces: Vec<&str> = ids.iter().map(|&i| tok.vocab().token(i).unwrap()).collect();
        println!("{text:?} -> {pieces:?} -> {:?}", tok.decode(&ids)?);
    }

    let dir = std::env::temp_dir().join("minaret-train-tokenizer");
    let path = dir.join("tokenizer.json");
    tok.save(&path)?;
    let reloaded = BpeTokenizer::load(&path)?;
    assert_eq!(reloaded.to_json(), tok.to_json());
    println!("saved to {} (vocab hash {})", path.display(), &tok.fingerprint()[..12]);
    Ok(())
}
