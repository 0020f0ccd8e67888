use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use log::debug;

use super::{word_symbols, BpeTokenizer, Vocabulary, DEFAULT_SPECIALS, DEFAULT_WORD_PREFIX};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BpeTrainerConfig {
    /// Upper bound on the final vocabulary size, specials included.
    pub vocab_size: usize,
    /// Symbols seen fewer times than this are left out of the base alphabet.
    pub min_char_frequency: u64,
    pub word_prefix: String,
    pub specials: Vec<String>,
}

impl BpeTrainerConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            min_char_frequency: 1,
            word_prefix: DEFAULT_WORD_PREFIX.to_string(),
            specials: DEFAULT_SPECIALS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Symbol id that never takes part in a pair (characters below the alphabet
/// frequency threshold).
const BARRIER: u32 = u32::MAX;

type Pair = (u32, u32);

struct Word {
    symbols: Vec<u32>,
    freq: u64,
}

#[derive(PartialEq, Eq)]
struct Candidate {
    count: u64,
    left: String,
    right: String,
    pair: Pair,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap: highest count first, then the lexicographically smallest pair.
        self.count
            .cmp(&other.count)
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedy BPE over whitespace-split words.
///
/// Each round merges the adjacent symbol pair with the highest corpus count,
/// breaking ties by the lexicographic order of `(left, right)`. Training stops
/// when the vocabulary reaches `vocab_size` or no pair remains.
pub fn train_bpe<I, S>(corpus: I, config: &BpeTrainerConfig) -> Result<BpeTokenizer>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if config.specials.len() != super::NUM_SPECIALS {
        return Err(Error::config(format!(
            "expected {} special tokens, got {}",
            super::NUM_SPECIALS,
            config.specials.len()
        )));
    }
    if config.word_prefix.is_empty() {
        return Err(Error::config("word prefix must not be empty"));
    }

    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            *word_counts.entry(w.to_string()).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::input("cannot train a tokenizer on an empty corpus"));
    }

    let mut symbol_counts: BTreeMap<String, u64> = BTreeMap::new();
    let split: Vec<(Vec<String>, u64)> = word_counts
        .into_iter()
        .map(|(w, f)| {
            let syms = word_symbols(&w, &config.word_prefix);
            for s in &syms {
                *symbol_counts.entry(s.clone()).or_default() += f;
            }
            (syms, f)
        })
        .collect();

    let alphabet: Vec<String> = symbol_counts
        .into_iter()
        .filter(|(_, c)| *c >= config.min_char_frequency)
        .map(|(s, _)| s)
        .collect();
    let base = config.specials.len() + alphabet.len();
    if config.vocab_size < base {
        return Err(Error::config(format!(
            "target vocabulary size {} is below the base alphabet plus specials ({base})",
            config.vocab_size
        )));
    }

    let mut tokens = config.specials.clone();
    tokens.extend(alphabet);
    let mut vocab = Vocabulary::new(tokens)?;

    let mut words: Vec<Word> = split
        .into_iter()
        .map(|(syms, freq)| Word {
            symbols: syms
                .iter()
                .map(|s| vocab.id_of(s).unwrap_or(BARRIER))
                .collect(),
            freq,
        })
        .collect();

    let mut counts: HashMap<Pair, u64> = HashMap::new();
    let mut occurs: HashMap<Pair, BTreeSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in pairs_of(&w.symbols) {
            *counts.entry(p).or_default() += w.freq;
            occurs.entry(p).or_default().insert(wi);
        }
    }
    let mut heap: BinaryHeap<Candidate> = counts
        .iter()
        .map(|(&p, &c)| candidate(&vocab, p, c))
        .collect();

    let mut merges: Vec<(String, String)> = Vec::new();
    while vocab.len() < config.vocab_size {
        let Some(best) = heap.pop() else { break };
        let current = counts.get(&best.pair).copied().unwrap_or(0);
        if current == 0 {
            continue;
        }
        if current != best.count {
            // Stale entry; a fresher one with the current count is queued.
            continue;
        }

        let merged = format!("{}{}", best.left, best.right);
        let merged_id = match vocab.id_of(&merged) {
            Some(id) => id,
            None => vocab.push(merged),
        };
        merges.push((best.left, best.right));

        let affected: Vec<usize> = occurs
            .remove(&best.pair)
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        let mut touched: BTreeSet<Pair> = BTreeSet::new();
        for wi in affected {
            let word = &mut words[wi];
            if !pairs_of(&word.symbols).any(|p| p == best.pair) {
                continue;
            }
            for p in pairs_of(&word.symbols) {
                let c = counts.get_mut(&p).expect("pair counted");
                *c -= word.freq;
                touched.insert(p);
            }
            word.symbols = apply_merge(&word.symbols, best.pair, merged_id);
            for p in pairs_of(&word.symbols) {
                *counts.entry(p).or_default() += word.freq;
                occurs.entry(p).or_default().insert(wi);
                touched.insert(p);
            }
        }
        for p in touched {
            let c = counts[&p];
            if c == 0 {
                counts.remove(&p);
            } else if p != best.pair {
                heap.push(candidate(&vocab, p, c));
            }
        }
        counts.remove(&best.pair);
    }
    debug!(
        "trained BPE tokenizer: {} tokens, {} merges",
        vocab.len(),
        merges.len()
    );

    BpeTokenizer::from_parts(vocab, merges, config.word_prefix.clone(), Vec::new())
}

fn candidate(vocab: &Vocabulary, pair: Pair, count: u64) -> Candidate {
    Candidate {
        count,
        left: vocab.token(pair.0).expect("known id").to_string(),
        right: vocab.token(pair.1).expect("known id").to_string(),
        pair,
    }
}

fn pairs_of(symbols: &[u32]) -> impl Iterator<Item = Pair> + '_ {
    symbols
        .windows(2)
        .filter(|w| w[0] != BARRIER && w[1] != BARRIER)
        .map(|w| (w[0], w[1]))
}

/// Non-overlapping left-to-right replacement of `pair` by `merged`.
pub(crate) fn apply_merge(symbols: &[u32], pair: Pair, merged: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(merged);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    out
}
