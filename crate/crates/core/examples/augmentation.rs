//! Builds an in-domain training set: question/passage links become pairs,
//! related passages become candidates, a pair classifier filters them and the
//! results are merged without duplicates.

use std::collections::BTreeSet;

use minaret::augment::{build_candidates, expand_qa, merge_datasets, parse_qa_records, parse_relations, score_and_filter};
use minaret::encoder::{BiEncoder, EncoderConfig};
use minaret::retrieval::Corpus;
use minaret::synthetic::word_level_tokenizer;
use minaret::training::{train_cross_encoder, with_random_negatives, HyperParams, Lang};

const PASSAGES: &str = "\
1\tgive charity in secret and in public
2\tcharity does not decrease wealth
3\tpray at the two ends of the day
4\tprayer restrains from indecency
5\tfast as those before you fasted
6\tthe month of fasting is ramadan
";
const QA: &str = "\
q1\twhat is said about charity\t1,2
q2\twhen should one pray\t3
q3\twhat is said about fasting\t5,6
";
const RELATIONS: &str = "\
1\t2\trelated
2\t1\trelated
3\t4\trelated
5\t6\trelated
1\t6\trelated
4\t5\trelated
";

fn main() -> minaret::Result<()> {
    let passages = Corpus::parse_tsv(PASSAGES)?;
    let records = parse_qa_records(QA)?;
    let reserved = BTreeSet::from(["q2".to_string()]);
    let qa_pairs = expand_qa(&records, &passages, &reserved, Lang::En, "qa")?;
    println!("question pairs: {} (q2 held out)", qa_pairs.len());

    let candidates = build_candidates(&parse_relations(RELATIONS)?, &passages, Lang::En)?;
    println!("relation candidates after dedup: {}", candidates.len());

    let texts: Vec<&str> = passages.entries().iter().map(|(_, t)| t.as_str()).chain(["what is said about when should one pray"]).collect();
    let scorer = BiEncoder::init(word_level_tokenizer(&texts)?, 16, EncoderConfig::default(), 2)?;
    let hp = HyperParams {
        epochs: 30,
        batch_size: 8,
        learning_rate: 0.05,
        seed: 2,
        ..HyperParams::retrieval()
    };
    let labelled = with_random_negatives(&candidates[..3], 2, 2);
    let (scorer, _) = train_cross_encoder(scorer, &labelled, &hp)?;

    let (kept, report) = score_and_filter(&candidates, &scorer, 0.5)?;
    for s in &report {
        println!("  {:.3}  {:?} / {:?}", s.score, s.pair.anchor, s.pair.positive);
    }
    let merged = merge_datasets(&[qa_pairs, kept]);
    println!("training pairs: {} ({} duplicates dropped)", merged.pairs.len(), merged.duplicates.len());
    Ok(())
}
