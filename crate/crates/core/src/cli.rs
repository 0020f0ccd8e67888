//! Command-line front end: one subcommand per pipeline step.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::augment;
use crate::checkpoint::ModelCheckpoint;
use crate::encoder::{BiEncoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::pipeline::{load_config, resolve, run_multistage_config, Manifest, MultistageConfig};
use crate::retrieval::{build_index, evaluate, Corpus, EmbeddingIndex, EvalSet, DEFAULT_CUTOFFS};
use crate::service::{start, SearchService};
use crate::surgery::{extend_model, reduce_model};
use crate::training::{
    load_pairs, pretrain, save_pairs, train_cross_encoder, train_retriever, with_random_negatives, HyperParams, Lang,
    LrSchedule, MlmConfig,
};
use crate::vocab::{intersect_tokenizers, train_bpe, BpeTokenizer, BpeTrainerConfig, VocabIntersection};

#[derive(Parser, Debug)]
#[command(name = "minaret", version, about = "Vocabulary surgery, domain adaptation and dense-retrieval training")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// JSON file with default settings (a manifest also works).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a BPE tokenizer on text files (one document per line).
    TrainTokenizer(TrainTokenizerArgs),
    /// Intersect a donor tokenizer with a new one and write the id mapping.
    Intersect(IntersectArgs),
    /// Keep only the mapped embedding rows of a checkpoint.
    Reduce(ReduceArgs),
    /// Append domain tokens, initialised from their subtoken embeddings.
    Extend(ExtendArgs),
    /// Continue masked-language-model training on a corpus.
    Pretrain(PretrainArgs),
    /// Build in-domain pairs from question links and passage relations.
    Augment(AugmentArgs),
    /// Train the bi-encoder on anchor/positive pairs.
    TrainRetriever(TrainRetrieverArgs),
    /// Run the stages listed in a config file.
    Multistage(MultistageArgs),
    /// Encode a corpus into a search index.
    Index(IndexArgs),
    /// Query an index.
    Search(SearchArgs),
    /// Compute MRR and recall for a query set.
    Eval(EvalArgs),
    /// Serve an index over HTTP.
    Serve(ServeArgs),
    /// Print a summary of a checkpoint, tokenizer or index.
    Describe(DescribeArgs),
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct ModelArgs {
    /// Model checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Tokenizer JSON matching the checkpoint.
    #[arg(long)]
    tokenizer: Option<PathBuf>,
}

impl ModelArgs {
    fn tokenizer(&self) -> Result<&Path> {
        need(&self.tokenizer, "tokenizer")
    }

    fn load(&self) -> Result<BiEncoder> {
        BiEncoder::load(need(&self.checkpoint, "checkpoint")?, self.tokenizer()?)
    }

    /// Loads the checkpoint, or starts a fresh encoder of width `dim`.
    fn load_or_init(&self, dim: Option<usize>, seed: u64) -> Result<BiEncoder> {
        match (&self.checkpoint, dim) {
            (Some(_), _) => self.load(),
            (None, Some(d)) => BiEncoder::init(BpeTokenizer::load(self.tokenizer()?)?, d, EncoderConfig::default(), seed),
            (None, None) => Err(Error::config("give --checkpoint, or --dim to start from scratch")),
        }
    }

    fn record(&self, m: &mut Manifest) -> Result<()> {
        for p in self.checkpoint.iter().chain(&self.tokenizer) {
            m.input(p)?;
        }
        Ok(())
    }
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct HpArgs {
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    warmup_proportion: Option<f64>,
    /// `warmup_linear` or `constant`.
    #[arg(long)]
    schedule: Option<String>,
    /// Similarity scale of the contrastive objective.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl HpArgs {
    fn apply(&self, mut hp: HyperParams) -> Result<HyperParams> {
        if let Some(v) = self.batch_size {
            hp.batch_size = v;
        }
        if let Some(v) = self.epochs {
            hp.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            hp.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            hp.weight_decay = v;
        }
        if let Some(v) = self.warmup_proportion {
            hp.warmup_proportion = v;
        }
        if let Some(v) = &self.schedule {
            hp.schedule = serde_json::from_value::<LrSchedule>(Value::from(v.as_str()))
                .map_err(|_| Error::config(format!("unknown schedule `{v}`")))?;
        }
        if let Some(v) = self.scale {
            hp.scale = v;
        }
        hp.seed = self.seed.unwrap_or(0);
        hp.validate()?;
        Ok(hp)
    }
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainTokenizerArgs {
    /// Text files; every line is one document.
    #[arg(long)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Characters rarer than this are left out of the alphabet.
    #[arg(long)]
    min_char_frequency: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the vocabulary as `token \t id` lines.
    #[arg(long)]
    vocab_out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct IntersectArgs {
    /// Tokenizer of the model whose weights are kept.
    #[arg(long)]
    donor: Option<PathBuf>,
    /// Tokenizer trained on the target languages.
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Mapping file, `token \t old_id \t new_id`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Donor tokenizer restricted to the shared tokens.
    #[arg(long)]
    tokenizer_out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct ReduceArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct ExtendArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// New tokens, one per line.
    #[arg(long)]
    tokens: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tokenizer_out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct PretrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Width of a freshly initialised model when no checkpoint is given.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    mask_prob: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    hp: HpArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct AugmentArgs {
    /// Passage collection, `doc_id \t text`.
    #[arg(long)]
    passages: Option<PathBuf>,
    /// Questions, `qid \t question \t pid,pid,...`.
    #[arg(long)]
    qa: Option<PathBuf>,
    /// Question ids held out for evaluation, one per line.
    #[arg(long)]
    reserved: Option<PathBuf>,
    /// Passage relations, `left_id \t right_id \t source`.
    #[arg(long)]
    relations: Option<PathBuf>,
    /// `en` or `ar`.
    #[arg(long)]
    lang: Option<String>,
    /// Pair scorer used to filter relation pairs.
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Train the scorer on these pairs (with random negatives) first.
    #[arg(long)]
    scorer_train: Vec<PathBuf>,
    #[arg(long)]
    scorer_out: Option<PathBuf>,
    #[arg(long)]
    negatives: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    hp: HpArgs,
    #[arg(long)]
    threshold: Option<f32>,
    /// Further pairs files appended to the result.
    #[arg(long)]
    merge: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scored candidates, `anchor \t positive \t score`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainRetrieverArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dim: Option<usize>,
    /// Pairs files, `anchor \t positive \t lang \t source`.
    #[arg(long)]
    pairs: Vec<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    hp: HpArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct MultistageArgs {
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct IndexArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct SearchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    query: Vec<String>,
    /// Queries file, `qid \t text`.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Metric cutoffs, comma separated.
    #[arg(long, value_delimiter = ',')]
    cutoffs: Vec<usize>,
    /// TREC run file.
    #[arg(long)]
    run_out: Option<PathBuf>,
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Run tag in the TREC file.
    #[arg(long)]
    tag: Option<String>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct ServeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct DescribeArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
}

fn need<'a, T: ?Sized>(v: &'a Option<impl AsRef<T> + 'a>, name: &str) -> Result<&'a T> {
    v.as_ref()
        .map(AsRef::as_ref)
        .ok_or_else(|| Error::config(format!("missing required setting --{}", name.replace('_', "-"))))
}

fn need_any<T>(v: &[T], name: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::config(format!("missing required setting --{}", name.replace('_', "-"))));
    }
    Ok(())
}

fn read_lines(paths: &[PathBuf], m: &mut Manifest) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for p in paths {
        m.input(p)?;
        out.extend(io::read_to_string(p)?.lines().map(str::to_string));
    }
    Ok(out)
}

fn finish(m: &mut Manifest, outputs: &[&Path], manifest_path: &Path) -> Result<()> {
    for o in outputs {
        m.output(o)?;
    }
    m.save(manifest_path)
}

fn cmd_train_tokenizer(a: TrainTokenizerArgs, out: &mut dyn Write) -> Result<()> {
    need_any(&a.corpus, "corpus")?;
    let path = need::<Path>(&a.out, "out")?;
    let size = a.vocab_size.ok_or_else(|| Error::config("missing required setting --vocab-size"))?;
    let mut m = Manifest::new("train-tokenizer", &a);
    let lines = read_lines(&a.corpus, &mut m)?;
    let cfg = BpeTrainerConfig {
        min_char_frequency: a.min_char_frequency.unwrap_or(1),
        ..BpeTrainerConfig::new(size)
    };
    let tok = train_bpe(&lines, &cfg)?;
    tok.save(path)?;
    let mut outs = vec![path];
    if let Some(v) = &a.vocab_out {
        tok.vocab().save_tsv(v)?;
        outs.push(v);
    }
    finish(&mut m, &outs, &Manifest::path_for(path))?;
    writeln!(out, "vocab_size\t{}\nmerges\t{}", tok.vocab_size(), tok.merges().len())?;
    Ok(())
}

fn cmd_intersect(a: IntersectArgs, out: &mut dyn Write) -> Result<()> {
    let donor_path = need::<Path>(&a.donor, "donor")?;
    let other_path = need::<Path>(&a.tokenizer, "tokenizer")?;
    let path = need::<Path>(&a.out, "out")?;
    let mut m = Manifest::new("intersect", &a);
    m.input(donor_path)?;
    m.input(other_path)?;
    let donor = BpeTokenizer::load(donor_path)?;
    let mapping = intersect_tokenizers(&donor, &BpeTokenizer::load(other_path)?)?;
    if mapping.specials_only {
        warn!("the tokenizers share no tokens besides the specials");
    }
    io::write_bytes(path, mapping.to_tsv().as_bytes())?;
    let mut outs = vec![path];
    if let Some(t) = &a.tokenizer_out {
        donor.restrict(&mapping)?.save(t)?;
        outs.push(t);
    }
    finish(&mut m, &outs, &Manifest::path_for(path))?;
    writeln!(out, "shared_tokens\t{}", mapping.new_size())?;
    Ok(())
}

fn cmd_reduce(a: ReduceArgs, out: &mut dyn Write) -> Result<()> {
    let src_path = need::<Path>(&a.checkpoint, "checkpoint")?;
    let map_path = need::<Path>(&a.mapping, "mapping")?;
    let path = need::<Path>(&a.out, "out")?;
    let mut m = Manifest::new("reduce", &a);
    m.input(src_path)?;
    m.input(map_path)?;
    let mapping = VocabIntersection::from_tsv(&io::read_to_string(map_path)?)?;
    let reduced = reduce_model(&ModelCheckpoint::load(src_path)?, &mapping)?;
    reduced.save(path)?;
    finish(&mut m, &[path], &Manifest::path_for(path))?;
    writeln!(out, "embedding_rows\t{}", reduced.vocab_size()?)?;
    Ok(())
}

fn cmd_extend(a: ExtendArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt_path = need::<Path>(&a.model.checkpoint, "checkpoint")?;
    let tokens_path = need::<Path>(&a.tokens, "tokens")?;
    let path = need::<Path>(&a.out, "out")?;
    let tok_out = need::<Path>(&a.tokenizer_out, "tokenizer_out")?;
    let mut m = Manifest::new("extend", &a);
    a.model.record(&mut m)?;
    m.input(tokens_path)?;
    let seed = a.seed.unwrap_or(0);
    m.seed = Some(seed);
    let tokens: Vec<String> = io::read_to_string(tokens_path)?
        .lines()
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect();
    let tok = BpeTokenizer::load(a.model.tokenizer()?)?;
    let ext = extend_model(&ModelCheckpoint::load(ckpt_path)?, &tokens, &tok, seed)?;
    ext.checkpoint.save(path)?;
    ext.tokenizer.save(tok_out)?;
    finish(&mut m, &[path, tok_out], &Manifest::path_for(path))?;
    writeln!(
        out,
        "added_tokens\t{}\nfallback_tokens\t{}",
        tokens.len(),
        ext.fallback_tokens.len()
    )?;
    Ok(())
}

fn cmd_pretrain(a: PretrainArgs, out: &mut dyn Write) -> Result<()> {
    need_any(&a.corpus, "corpus")?;
    let path = need::<Path>(&a.out, "out")?;
    let hp = a.hp.apply(HyperParams::pretraining())?;
    let mut m = Manifest::new("pretrain", &a);
    m.seed = Some(hp.seed);
    a.model.record(&mut m)?;
    let lines = read_lines(&a.corpus, &mut m)?;
    let enc = a.model.load_or_init(a.dim, hp.seed)?;
    let mlm = MlmConfig {
        mask_prob: a.mask_prob.unwrap_or(MlmConfig::default().mask_prob),
        ..MlmConfig::default()
    };
    let (enc, report) = pretrain(enc, &lines, &hp, &mlm)?;
    enc.to_checkpoint().save(path)?;
    m.details = serde_json::json!({ "hyperparams": hp, "epoch_losses": report.epoch_losses });
    finish(&mut m, &[path], &Manifest::path_for(path))?;
    writeln!(out, "steps\t{}", report.step_losses.len())?;
    if let Some(l) = report.epoch_losses.last() {
        writeln!(out, "final_epoch_loss\t{l:.6}")?;
    }
    Ok(())
}

fn cmd_augment(a: AugmentArgs, out: &mut dyn Write) -> Result<()> {
    let path = need::<Path>(&a.out, "out")?;
    let lang: Lang = a.lang.as_deref().unwrap_or("en").parse()?;
    let threshold = a.threshold.unwrap_or(0.5);
    let mut m = Manifest::new("augment", &a);
    let passages = match &a.passages {
        Some(p) => {
            m.input(p)?;
            Some(Corpus::load(p)?)
        }
        None => None,
    };
    let need_passages = || passages.as_ref().ok_or_else(|| Error::config("missing required setting --passages"));
    let mut sets = Vec::new();

    if let Some(qa) = &a.qa {
        m.input(qa)?;
        let reserved: BTreeSet<String> = match &a.reserved {
            Some(r) => {
                m.input(r)?;
                io::read_to_string(r)?.lines().map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
            }
            None => BTreeSet::new(),
        };
        let pairs = augment::expand_qa(&augment::load_qa_records(qa)?, need_passages()?, &reserved, lang, "qa")?;
        writeln!(out, "qa_pairs\t{}", pairs.len())?;
        sets.push(pairs);
    }

    let mut outs: Vec<PathBuf> = vec![path.to_path_buf()];
    if let Some(rel) = &a.relations {
        m.input(rel)?;
        let candidates = augment::build_candidates(&augment::load_relations(rel)?, need_passages()?, lang)?;
        a.model.record(&mut m)?;
        let mut scorer = a.model.load()?;
        if !a.scorer_train.is_empty() {
            let hp = a.hp.apply(HyperParams::retrieval())?;
            m.seed = Some(hp.seed);
            let mut positives = Vec::new();
            for f in &a.scorer_train {
                m.input(f)?;
                positives.extend(load_pairs(f)?);
            }
            let labelled = with_random_negatives(&positives, a.negatives.unwrap_or(1), hp.seed);
            scorer = train_cross_encoder(scorer, &labelled, &hp)?.0;
            if let Some(s) = &a.scorer_out {
                scorer.to_checkpoint().save(s)?;
                outs.push(s.clone());
            }
        }
        let (kept, report) = augment::score_and_filter(&candidates, &scorer, threshold)?;
        if let Some(r) = &a.report {
            io::write_bytes(r, augment::format_score_report(&report).as_bytes())?;
            outs.push(r.clone());
        }
        writeln!(out, "candidates\t{}\nkept\t{}", candidates.len(), kept.len())?;
        sets.push(kept);
    }

    for f in &a.merge {
        m.input(f)?;
        sets.push(load_pairs(f)?);
    }
    if sets.is_empty() {
        return Err(Error::config("nothing to do: give --qa, --relations or --merge"));
    }
    let merged = augment::merge_datasets(&sets);
    save_pairs(path, &merged.pairs)?;
    m.details = serde_json::json!({ "threshold": threshold, "duplicates_dropped": merged.duplicates.len() });
    let out_refs: Vec<&Path> = outs.iter().map(PathBuf::as_path).collect();
    finish(&mut m, &out_refs, &Manifest::path_for(path))?;
    writeln!(out, "pairs\t{}\nduplicates_dropped\t{}", merged.pairs.len(), merged.duplicates.len())?;
    Ok(())
}

fn cmd_train_retriever(a: TrainRetrieverArgs, out: &mut dyn Write) -> Result<()> {
    need_any(&a.pairs, "pairs")?;
    let path = need::<Path>(&a.out, "out")?;
    let hp = a.hp.apply(HyperParams::retrieval())?;
    let mut m = Manifest::new("train-retriever", &a);
    m.seed = Some(hp.seed);
    a.model.record(&mut m)?;
    let mut datasets = Vec::new();
    for f in &a.pairs {
        m.input(f)?;
        datasets.push(load_pairs(f)?);
    }
    let enc = a.model.load_or_init(a.dim, hp.seed)?;
    let (enc, report) = train_retriever(enc, &datasets, &hp)?;
    enc.to_checkpoint().save(path)?;
    m.details = serde_json::json!({ "hyperparams": hp, "epoch_losses": report.epoch_losses });
    finish(&mut m, &[path], &Manifest::path_for(path))?;
    writeln!(out, "steps\t{}", report.step_losses.len())?;
    if let Some(l) = report.epoch_losses.last() {
        writeln!(out, "final_epoch_loss\t{l:.6}")?;
    }
    Ok(())
}

fn cmd_multistage(a: MultistageArgs, config: Option<Map<String, Value>>, out: &mut dyn Write) -> Result<()> {
    let mut map = config.ok_or_else(|| Error::config("multistage needs --config with a `stages` list"))?;
    if let Some(Value::Object(section)) = map.remove("multistage") {
        map.extend(section);
    }
    if let Some(d) = &a.output_dir {
        map.insert("output_dir".into(), Value::from(d.display().to_string()));
    }
    let cfg = MultistageConfig::from_map(map)?;
    let (outcome, _) = run_multistage_config(&cfg)?;
    for (r, _) in &outcome.stages {
        writeln!(
            out,
            "stage\t{}\tpairs\t{}\tfinal_epoch_loss\t{:.6}",
            r.name,
            r.pair_counts.iter().sum::<usize>(),
            r.epoch_losses.last().copied().unwrap_or(f64::NAN)
        )?;
    }
    Ok(())
}

fn cmd_index(a: IndexArgs, out: &mut dyn Write) -> Result<()> {
    let corpus_path = need::<Path>(&a.corpus, "corpus")?;
    let path = need::<Path>(&a.out, "out")?;
    let mut m = Manifest::new("index", &a);
    a.model.record(&mut m)?;
    m.input(corpus_path)?;
    let enc = a.model.load()?;
    let index = build_index(&enc, &Corpus::load(corpus_path)?)?;
    index.save(path)?;
    let sidecar = EmbeddingIndex::sidecar_path(path);
    finish(&mut m, &[path, &sidecar], &Manifest::path_for(path))?;
    writeln!(out, "documents\t{}\ndim\t{}", index.len(), index.dim())?;
    Ok(())
}

fn load_service(model: &ModelArgs, index: &Option<PathBuf>) -> Result<SearchService<BiEncoder>> {
    let index = EmbeddingIndex::load(need::<Path>(index, "index")?)?;
    SearchService::new(index, model.load()?)
}

fn cmd_search(a: SearchArgs, out: &mut dyn Write) -> Result<()> {
    let svc = load_service(&a.model, &a.index)?;
    let mut queries: Vec<(String, String)> = a
        .query
        .iter()
        .enumerate()
        .map(|(i, q)| ((i + 1).to_string(), q.clone()))
        .collect();
    if let Some(f) = &a.queries {
        queries.extend(crate::retrieval::parse_queries(&io::read_to_string(f)?)?);
    }
    if queries.is_empty() {
        return Err(Error::config("give --query or --queries"));
    }
    let k = a.k.unwrap_or(10);
    for (qid, text) in &queries {
        for (r, h) in svc.search(text, k)?.iter().enumerate() {
            writeln!(out, "{qid}\t{}\t{}\t{:.6}", r + 1, h.doc_id, h.score)?;
        }
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let corpus = Corpus::load(need::<Path>(&a.corpus, "corpus")?)?;
    let evalset = EvalSet::load(
        need::<Path>(&a.queries, "queries")?,
        need::<Path>(&a.qrels, "qrels")?,
        &corpus,
    )?;
    let enc = a.model.load()?;
    let cutoffs = if a.cutoffs.is_empty() {
        DEFAULT_CUTOFFS.to_vec()
    } else {
        a.cutoffs.clone()
    };
    let report = evaluate(&enc, &corpus, &evalset, &cutoffs)?;
    let text = report.to_text();
    if let Some(p) = &a.run_out {
        io::write_bytes(p, report.to_trec(a.tag.as_deref().unwrap_or("minaret")).as_bytes())?;
    }
    if let Some(p) = &a.report_out {
        io::write_bytes(p, text.as_bytes())?;
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_serve(a: ServeArgs, out: &mut dyn Write) -> Result<()> {
    let svc = load_service(&a.model, &a.index)?;
    let addr = format!("{}:{}", a.host.as_deref().unwrap_or("127.0.0.1"), a.port.unwrap_or(8080));
    let running = start(svc, &addr, a.threads.unwrap_or(4))?;
    writeln!(out, "listening\thttp://{}", running.addr())?;
    out.flush()?;
    running.wait();
    Ok(())
}

fn cmd_describe(a: DescribeArgs, out: &mut dyn Write) -> Result<()> {
    let mut any = false;
    if let Some(p) = &a.checkpoint {
        any = true;
        let c = ModelCheckpoint::load(p)?;
        writeln!(out, "{}", c.describe())?;
        if let Ok(rows) = c.vocab_size() {
            writeln!(out, "embedding_rows\t{rows}")?;
        }
        writeln!(out, "sha256\t{}", c.fingerprint())?;
    }
    if let Some(p) = &a.tokenizer {
        any = true;
        let t = BpeTokenizer::load(p)?;
        writeln!(
            out,
            "vocab_size\t{}\nmerges\t{}\nadded_tokens\t{}\nvocab_hash\t{}",
            t.vocab_size(),
            t.merges().len(),
            t.added_tokens().len(),
            t.fingerprint()
        )?;
    }
    if let Some(p) = &a.index {
        any = true;
        let idx = EmbeddingIndex::load(p)?;
        writeln!(out, "documents\t{}\ndim\t{}\nencoder\t{}", idx.len(), idx.dim(), idx.fingerprint())?;
    }
    if !any {
        return Err(Error::config("give --checkpoint, --tokenizer or --index"));
    }
    Ok(())
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let config = cli.config.as_deref().map(load_config).transpose()?;
    let cfg = config.as_ref();
    match cli.command {
        Command::TrainTokenizer(a) => cmd_train_tokenizer(resolve("train-tokenizer", &a, cfg)?, out),
        Command::Intersect(a) => cmd_intersect(resolve("intersect", &a, cfg)?, out),
        Command::Reduce(a) => cmd_reduce(resolve("reduce", &a, cfg)?, out),
        Command::Extend(a) => cmd_extend(resolve("extend", &a, cfg)?, out),
        Command::Pretrain(a) => cmd_pretrain(resolve("pretrain", &a, cfg)?, out),
        Command::Augment(a) => cmd_augment(resolve("augment", &a, cfg)?, out),
        Command::TrainRetriever(a) => cmd_train_retriever(resolve("train-retriever", &a, cfg)?, out),
        Command::Multistage(a) => cmd_multistage(a, config, out),
        Command::Index(a) => cmd_index(resolve("index", &a, cfg)?, out),
        Command::Search(a) => cmd_search(resolve("search", &a, cfg)?, out),
        Command::Eval(a) => cmd_eval(resolve("eval", &a, cfg)?, out),
        Command::Serve(a) => cmd_serve(resolve("serve", &a, cfg)?, out),
        Command::Describe(a) => cmd_describe(resolve("describe", &a, cfg)?, out),
    }
}

/// Runs the command line `argv` (program name first), writing results to
/// `out` and diagnostics to stderr. Returns the process exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() || e.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                1
            } else {
                0
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run_with(argv, &mut lock)
}
