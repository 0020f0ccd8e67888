//! Small generated datasets for demos and tests: separable topic pairs and a
//! general/in-domain concept benchmark.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::retrieval::{Corpus, EvalSet, Qrels};
use crate::training::{Lang, TrainingPair};
use crate::vocab::{train_bpe, BpeTokenizer, BpeTrainerConfig};

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Draws `n` distinct pronounceable words of three syllables.
pub fn pseudo_words(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w: String = (0..3)
            .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
            .collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// A tokenizer whose vocabulary is large enough to hold every word of
/// `texts` as a single token.
pub fn word_level_tokenizer<S: AsRef<str>>(texts: &[S]) -> Result<BpeTokenizer> {
    let words: BTreeSet<&str> = texts.iter().flat_map(|t| t.as_ref().split_whitespace()).collect();
    let chars: BTreeSet<char> = words.iter().flat_map(|w| w.chars()).collect();
    let budget = 5 + 2 * chars.len() + words.iter().map(|w| w.chars().count()).sum::<usize>();
    train_bpe(texts.iter().map(AsRef::as_ref), &BpeTrainerConfig::new(budget))
}

/// `topics * per_topic` pairs. Every anchor shares a topic word with the
/// other anchors of its topic and has two words of its own; positives are
/// built the same way from a disjoint word list, so each pair is separable.
pub fn topic_pairs(topics: usize, per_topic: usize, seed: u64) -> Vec<TrainingPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = pseudo_words(2 * topics + 4 * topics * per_topic, &mut rng);
    let mut it = words.into_iter();
    let mut out = Vec::with_capacity(topics * per_topic);
    for _ in 0..topics {
        let (ta, tp) = (it.next().unwrap(), it.next().unwrap());
        for _ in 0..per_topic {
            let a = format!("{ta} {} {}", it.next().unwrap(), it.next().unwrap());
            let p = format!("{tp} {} {}", it.next().unwrap(), it.next().unwrap());
            out.push(TrainingPair::new(a, p, Lang::En, "topics"));
        }
    }
    out
}

/// Queries are the anchors, documents the positives; pair `i` is relevant.
pub fn self_retrieval_set(pairs: &[TrainingPair]) -> Result<(Corpus, EvalSet)> {
    let corpus = Corpus::new(
        pairs
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("d{i}"), p.positive.clone()))
            .collect(),
    )?;
    let queries: Vec<(String, String)> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("q{i}"), p.anchor.clone()))
        .collect();
    let qrels: Qrels = (0..pairs.len())
        .map(|i| (format!("q{i}"), BTreeSet::from([format!("d{i}")])))
        .collect();
    let evalset = EvalSet::new(queries, qrels, &corpus)?;
    Ok((corpus, evalset))
}

/// Concepts have a query-side word and an unrelated document-side word, so
/// retrieval works only for concepts whose two words were aligned in
/// training. General pairs use general concepts only, in-domain pairs use
/// domain concepts only. Every evaluation query mixes two general concepts
/// with one domain concept, and the corpus holds a distractor sharing only
/// the general part and one sharing only the domain part.
#[derive(Debug, Clone)]
pub struct DomainShift {
    pub general: Vec<TrainingPair>,
    pub domain: Vec<TrainingPair>,
    pub corpus: Corpus,
    pub evalset: EvalSet,
    pub tokenizer: BpeTokenizer,
}

#[derive(Debug, Clone, Copy)]
pub struct DomainShiftConfig {
    pub general_concepts: usize,
    pub domain_concepts: usize,
    pub general_pairs: usize,
    pub domain_pairs: usize,
    pub queries: usize,
}

impl Default for DomainShiftConfig {
    fn default() -> Self {
        Self {
            general_concepts: 40,
            domain_concepts: 16,
            general_pairs: 480,
            domain_pairs: 64,
            queries: 32,
        }
    }
}

fn distinct(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    pool.choose_multiple(rng, k).copied().collect()
}

impl DomainShift {
    pub fn generate(cfg: &DomainShiftConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.general_concepts + cfg.domain_concepts;
        let words = pseudo_words(2 * n, &mut rng);
        let (qw, dw) = words.split_at(n);
        let general: Vec<usize> = (0..cfg.general_concepts).collect();
        let domain: Vec<usize> = (cfg.general_concepts..n).collect();
        let q_text = |cs: &[usize]| cs.iter().map(|&c| qw[c].as_str()).collect::<Vec<_>>().join(" ");
        let d_text = |cs: &[usize]| cs.iter().map(|&c| dw[c].as_str()).collect::<Vec<_>>().join(" ");
        let pairs = |pool: &[usize], count: usize, source: &str, rng: &mut ChaCha8Rng| -> Vec<TrainingPair> {
            (0..count)
                .map(|_| {
                    let cs = distinct(pool, 3, rng);
                    TrainingPair::new(q_text(&cs), d_text(&cs), Lang::En, source)
                })
                .collect()
        };
        let general_pairs = pairs(&general, cfg.general_pairs, "general", &mut rng);
        let domain_pairs = pairs(&domain, cfg.domain_pairs, "domain", &mut rng);

        let mut docs = Vec::new();
        let mut queries = Vec::new();
        let mut qrels = BTreeMap::new();
        for i in 0..cfg.queries {
            let g = distinct(&general, 4, &mut rng);
            let d = distinct(&domain, 2, &mut rng);
            let target = [g[0], g[1], d[0]];
            let same_general = [g[0], g[1], d[1]];
            let same_domain = [g[2], g[3], d[0]];
            queries.push((format!("q{i}"), q_text(&target)));
            qrels.insert(format!("q{i}"), BTreeSet::from([format!("d{i}")]));
            docs.push((format!("d{i}"), d_text(&target)));
            docs.push((format!("d{i}g"), d_text(&same_general)));
            docs.push((format!("d{i}d"), d_text(&same_domain)));
        }
        let corpus = Corpus::new(docs)?;
        let evalset = EvalSet::new(queries, qrels, &corpus)?;
        let all_text: Vec<String> = words.clone();
        let tokenizer = word_level_tokenizer(&all_text)?;
        Ok(Self {
            general: general_pairs,
            domain: domain_pairs,
            corpus,
            evalset,
            tokenizer,
        })
    }
}

/// Random lowercase text over `alphabet`, for tokenizer round-trip checks.
pub fn random_text(alphabet: &[char], words: usize, rng: &mut ChaCha8Rng) -> String {
    (0..words)
        .map(|_| {
            let len = rng.gen_range(1..7);
            (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}
