//! Shrinks a trilingual model to two languages: intersect the donor
//! tokenizer with a bilingual one, keep only the shared embedding rows and
//! carry every other tensor over unchanged.

use minaret::encoder::{BiEncoder, EncoderConfig, SentenceEncoder};
use minaret::surgery::reduce_model;
use minaret::vocab::{intersect_tokenizers, train_bpe, BpeTrainerConfig};

const ENGLISH: &str = "the book of guidance for those who reflect upon the signs";
const ARABIC: &str = "ذلك الكتاب لا ريب فيه هدى للمتقين";
const FRENCH: &str = "le livre de la guidance pour ceux qui réfléchissent aux signes";

fn main() -> minaret::Result<()> {
    let donor_tok = train_bpe([ENGLISH, ARABIC, FRENCH], &BpeTrainerConfig::new(160))?;
    let donor = BiEncoder::init(donor_tok.clone(), 16, EncoderConfig::default(), 1)?;
    let donor_ckpt = donor.to_checkpoint();

    let bilingual = train_bpe([ENGLISH, ARABIC], &BpeTrainerConfig::new(110))?;
    let mapping = intersect_tokenizers(&donor_tok, &bilingual)?;
    let reduced_tok = donor_tok.restrict(&mapping)?;
    let reduced = reduce_model(&donor_ckpt, &mapping)?;

    println!(
        "donor vocabulary {} -> shared {} ({} bilingual tokens)",
        donor_tok.vocab_size(),
        mapping.new_size(),
        bilingual.vocab_size()
    );
    for (name, t) in reduced.tensors() {
        let before = donor_ckpt.get(name).unwrap();
        let same = before.data == t.data;
        println!("  {name:<26} {:?} -> {:?}{}", before.shape, t.shape, if same { " (unchanged)" } else { "" });
    }

    let model = BiEncoder::from_checkpoint(reduced, reduced_tok, EncoderConfig::default(), 0)?;
    let a = donor.encode(&[ARABIC])?;
    let b = model.encode(&[ARABIC])?;
    let cos: f32 = a.row(0).iter().zip(b.row(0)).map(|(x, y)| x * y).sum();
    println!("cosine between donor and reduced embeddings of the Arabic line: {cos:.4}");
    Ok(())
}
