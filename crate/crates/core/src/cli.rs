//! Pipeline commands behind the `dmn` binary. Each command validates the
//! whole run configuration and its inputs before writing anything.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::config::{Ranker, RunConfig};
use crate::corpus::{build_candidates, load_dataset, load_qa_collection, window_context, write_dataset, DialogExample};
use crate::error::{Error, Result};
use crate::eval::{evaluate_against, evaluate_groups, rank_scored_lines, read_scored_lines, Metrics, RankedLabels};
use crate::knowledge::{expand_with, KnowledgeCache, PrfExpander};
use crate::model::{dataset_vocab, Knowledge, Model, ModelConfig, Variant};
use crate::retrieval::{bm25_rank_responses, IndexedField, InvertedIndex};
use crate::seed;
use crate::text::Tokenizer;
use crate::training::{train_with, EpochLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Index,
    BuildData,
    Train,
    Eval,
    Rank,
    Expand,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Index => "index",
            Command::BuildData => "build-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Rank => "rank",
            Command::Expand => "expand",
        }
    }
}

pub fn run(command: Command, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Index => cmd_index(cfg, out),
        Command::BuildData => cmd_build_data(cfg, out),
        Command::Train => cmd_train(cfg, out),
        Command::Eval => cmd_eval(cfg, out).map(|_| ()),
        Command::Rank => cmd_rank(cfg, out),
        Command::Expand => cmd_expand(cfg, out),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn io_out(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Writes through `f` into `output` when set, else into `out`.
fn emit(cfg: &RunConfig, out: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    match cfg.optional("output") {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w).map_err(|e| Error::io(p, e))?;
            finish(p, w)
        }
        None => f(out).map_err(io_out),
    }
}

/// Fails unless the external knowledge source can be opened.
fn require_knowledge_source(cfg: &RunConfig) -> Result<()> {
    match (cfg.optional("index"), cfg.optional("qa")) {
        (Some(p), _) if p.exists() => Ok(()),
        (_, Some(_)) => cfg.existing("qa").map(|_| ()),
        (Some(p), None) => Err(Error::Config(format!(
            "index: {} does not exist and no `qa` is set",
            p.display()
        ))),
        (None, None) => Err(Error::Config("this command needs `index` or `qa`".into())),
    }
}

/// Loads the saved index, or builds one from the QA collection.
fn open_index(cfg: &RunConfig, tokenizer: &Tokenizer, field: IndexedField) -> Result<InvertedIndex> {
    if let Some(p) = cfg.optional("index").filter(|p| p.exists()) {
        let index = InvertedIndex::load(p)?;
        if field != IndexedField::Text && index.field() != field {
            log::warn!(
                "index {} holds field `{}`, expected `{}`",
                p.display(),
                index.field().as_str(),
                field.as_str()
            );
        }
        return Ok(index);
    }
    let (pairs, skipped) = load_qa_collection(cfg.path("qa")?, tokenizer)?;
    if skipped > 0 {
        log::warn!("{skipped} QA pairs with an empty question or answer were skipped");
    }
    InvertedIndex::build(pairs, field)
}

fn load_cache(cfg: &RunConfig) -> Result<KnowledgeCache> {
    match cfg.optional("cache").filter(|p| p.exists()) {
        Some(p) => KnowledgeCache::load(p),
        None => Ok(KnowledgeCache::default()),
    }
}

fn save_cache(cfg: &RunConfig, cache: &KnowledgeCache) -> Result<()> {
    match cfg.optional("cache") {
        Some(p) => cache.save(p),
        None => Ok(()),
    }
}

fn needs_index(model: &ModelConfig) -> bool {
    model.variant != Variant::Dmn
}

pub fn cmd_index(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    let qa = cfg.existing("qa")?;
    let dest = cfg.path("index")?;
    let tokenizer = cfg.tokenizer()?;
    let (pairs, skipped) = load_qa_collection(qa, &tokenizer)?;
    let index = InvertedIndex::build(pairs, cfg.index_field())?;
    index.save(dest)?;
    writeln!(
        out,
        "indexed {} documents (field {}, {} skipped), average length {:.2}, {} terms -> {}",
        index.doc_count(),
        index.field().as_str(),
        skipped,
        index.avg_doc_len(),
        index.term_count(),
        dest.display()
    )
    .map_err(io_out)
}

/// Reads the `build-data` input: `context<TAB>response` lines, or dataset
/// lines whose label-1 rows give the true responses. Every response in the
/// file, whatever its label, joins the negative pool.
fn read_dialogs(path: &Path, tokenizer: &Tokenizer, c: usize) -> Result<(Vec<DialogExample>, Vec<Vec<String>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    let mut pool = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |m: String| Error::Data(format!("{}:{}: {m}", path.display(), n + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        let (positive, context, response) = match fields.as_slice() {
            [ctx, resp] => (true, *ctx, *resp),
            _ => {
                let parsed = crate::corpus::parse_dataset_line(&line, n + 1).map_err(|e| at(e.to_string()))?;
                (parsed.label == 1, parsed.context, parsed.response)
            }
        };
        let response = tokenizer.tokenize(response);
        if response.is_empty() {
            log::warn!("{}:{}: empty response skipped", path.display(), n + 1);
            continue;
        }
        if seen.insert(response.clone()) {
            pool.push(response.clone());
        }
        if !positive {
            continue;
        }
        let turns: Vec<Vec<String>> = context
            .split(crate::corpus::TURN_DELIMITER)
            .map(|u| tokenizer.tokenize(u))
            .filter(|u| !u.is_empty())
            .collect();
        if turns.is_empty() {
            return Err(at("empty context".into()));
        }
        examples.push(DialogExample {
            dialog_id: examples.len().to_string(),
            context: window_context(&turns, c),
            candidates: vec![crate::corpus::Candidate { response, label: 1 }],
        });
    }
    Ok((examples, pool))
}

pub fn cmd_build_data(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    let input = cfg.existing("input")?;
    let dest = cfg.path("output")?;
    let tokenizer = cfg.tokenizer()?;
    let (mut examples, pool) = read_dialogs(input, &tokenizer, cfg.model.c)?;
    let pool_index = InvertedIndex::from_docs(pool.into_iter().enumerate().map(|(i, r)| (format!("r{i}"), r)))?;
    let bm25 = cfg.model.knowledge.bm25;
    for (i, ex) in examples.iter_mut().enumerate() {
        let positive = ex.candidates[0].response.clone();
        let s = seed::derive_indexed(cfg.seed, "sampler", i as u64);
        ex.candidates = build_candidates(&positive, &pool_index, cfg.n_neg, cfg.sampler, &bm25, s)
            .map_err(|e| Error::Data(format!("dialog {i}: {e}")))?;
    }
    let mut w = create(dest)?;
    write_dataset(&examples, &mut w).map_err(|e| Error::io(dest, e))?;
    finish(dest, w)?;
    writeln!(
        out,
        "wrote {} dialogs with {} candidates each ({} sampler) -> {}",
        examples.len(),
        cfg.n_neg + 1,
        cfg.sampler.as_str(),
        dest.display()
    )
    .map_err(io_out)
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    let train_path = cfg.existing("train")?;
    let valid_path = match cfg.optional("valid") {
        Some(_) => Some(cfg.existing("valid")?),
        None => None,
    };
    let checkpoint = cfg.path("checkpoint")?;
    if cfg.optional("embeddings").is_some() {
        cfg.existing("embeddings")?;
    }
    if needs_index(&cfg.model) {
        require_knowledge_source(cfg)?;
    }
    let tokenizer = cfg.tokenizer()?;
    let train = load_dataset(train_path, &tokenizer, cfg.model.c)?;
    let valid = match valid_path {
        Some(p) => load_dataset(p, &tokenizer, cfg.model.c)?,
        None => Vec::new(),
    };
    let index = if needs_index(&cfg.model) {
        Some(open_index(cfg, &tokenizer, cfg.index_field())?)
    } else {
        None
    };
    let mut knowledge = Knowledge {
        index: index.as_ref(),
        cache: load_cache(cfg)?,
    };
    let vocab = dataset_vocab(&train, &cfg.model, &mut knowledge, cfg.min_count)?;
    let mut model = Model::new(cfg.model.clone(), vocab, cfg.seed_for("init"))?;
    if let Some(p) = cfg.optional("embeddings") {
        let n = model.params.load_embeddings(p, &model.vocab)?;
        log::info!("{n} embedding rows loaded from {}", p.display());
    }
    let prepared_train = model.prepare_all(&train, &mut knowledge)?;
    let prepared_valid = model.prepare_all(&valid, &mut knowledge)?;
    save_cache(cfg, &knowledge.cache)?;

    let mut log_file = match cfg.optional("log") {
        Some(p) => Some((p, create(p)?)),
        None => None,
    };
    let mut write_row = |line: &str, out: &mut dyn Write| -> Result<()> {
        writeln!(out, "{line}").map_err(io_out)?;
        if let Some((p, w)) = log_file.as_mut() {
            writeln!(w, "{line}").map_err(|e| Error::io(*p, e))?;
        }
        Ok(())
    };
    write_row(EpochLog::TSV_HEADER, out)?;
    let mut row_error = None;
    let outcome = train_with(
        &prepared_train,
        &prepared_valid,
        &model.config,
        &cfg.train_config(),
        model.params.clone(),
        |row| {
            if row_error.is_none() {
                row_error = write_row(&row.tsv_row(), out).err();
            }
        },
    )?;
    if let Some(e) = row_error {
        return Err(e);
    }
    if let Some((p, w)) = log_file {
        finish(p, w)?;
    }
    model.params = outcome.params;
    model.save(checkpoint)?;
    writeln!(
        out,
        "# {} triples, {} examples skipped, best epoch {}, checkpoint {}",
        outcome.triples,
        outcome.examples_skipped,
        outcome.best_epoch.map_or_else(|| "-".to_string(), |e| e.to_string()),
        checkpoint.display()
    )
    .map_err(io_out)
}

/// `(candidate, score)` pairs by descending score.
pub type Ranking = Vec<(usize, f64)>;

/// Test dialogs and their rankings under the configured ranker.
pub fn rank_dataset(cfg: &RunConfig) -> Result<(Vec<DialogExample>, Vec<Ranking>)> {
    cfg.validate()?;
    let test_path = cfg.existing("test")?;
    let tokenizer = cfg.tokenizer()?;
    match cfg.ranker {
        Ranker::Model => {
            let model = Model::load(cfg.existing("checkpoint")?)?;
            if needs_index(&model.config) {
                require_knowledge_source(cfg)?;
            }
            let test = load_dataset(test_path, &tokenizer, model.config.c)?;
            let field = match model.config.variant {
                Variant::Kd => IndexedField::Concatenated,
                _ => IndexedField::Answer,
            };
            let index = if needs_index(&model.config) {
                Some(open_index(cfg, &tokenizer, cfg.index_field.unwrap_or(field))?)
            } else {
                None
            };
            let mut knowledge = Knowledge {
                index: index.as_ref(),
                cache: load_cache(cfg)?,
            };
            let prepared = model.prepare_all(&test, &mut knowledge)?;
            save_cache(cfg, &knowledge.cache)?;
            let ranks = prepared.iter().map(|p| model.rank(p)).collect::<Result<_>>()?;
            Ok((test, ranks))
        }
        Ranker::Bm25 | Ranker::Bm25Prf => {
            let test = load_dataset(test_path, &tokenizer, cfg.model.c)?;
            let index = if cfg.ranker == Ranker::Bm25Prf {
                require_knowledge_source(cfg)?;
                Some(open_index(
                    cfg,
                    &tokenizer,
                    cfg.index_field.unwrap_or(IndexedField::Answer),
                )?)
            } else {
                None
            };
            let k = &cfg.model.knowledge;
            let expander = index.as_ref().map(|i| PrfExpander {
                index: i,
                depth: k.prf_depth,
                terms: k.prf_terms,
                bm25: k.bm25,
            });
            let ranks = test
                .iter()
                .map(|e| bm25_rank_responses(e, expander.as_ref(), &k.bm25))
                .collect();
            Ok((test, ranks))
        }
    }
}

pub fn cmd_rank(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let (test, ranks) = rank_dataset(cfg)?;
    emit(cfg, out, |w| {
        for (ex, ranking) in test.iter().zip(&ranks) {
            for (r, (cand, score)) in ranking.iter().enumerate() {
                writeln!(w, "{}\t{}\t{}\t{}", ex.dialog_id, cand, score, r + 1)?;
            }
        }
        Ok(())
    })
}

/// Reads a ranking file: three columns `group_id score label`, or the four
/// columns written by `rank`, whose labels come from `test`.
fn read_rankings(path: &Path, test: Option<&[DialogExample]>) -> Result<Vec<RankedLabels>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let at = |line: usize, m: &str| Error::Data(format!("{}:{line}: {m}", path.display()));
    let columns = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .map_or(3, |l| l.split('\t').count());
    if columns == 3 {
        let lines = read_scored_lines(text.as_bytes()).map_err(|e| match e {
            Error::Parse { line, message } => at(line, &message),
            other => other,
        })?;
        return Ok(rank_scored_lines(&lines));
    }
    if columns != 4 {
        return Err(at(1, "expected 3 or 4 tab-separated columns"));
    }
    let test = test.ok_or_else(|| Error::Config("four-column rankings need `test` for their labels".into()))?;
    let by_id: std::collections::HashMap<&str, &DialogExample> =
        test.iter().map(|e| (e.dialog_id.as_str(), e)).collect();
    let mut groups: std::collections::BTreeMap<String, Vec<(usize, usize)>> = Default::default();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(at(n + 1, "expected 4 columns"));
        }
        let cand: usize = f[1].trim().parse().map_err(|_| at(n + 1, "bad candidate index"))?;
        let rank: usize = f[3].trim().parse().map_err(|_| at(n + 1, "bad rank"))?;
        let ex = by_id
            .get(f[0])
            .ok_or_else(|| at(n + 1, &format!("dialog `{}` is not in the test set", f[0])))?;
        if cand >= ex.candidates.len() {
            return Err(at(n + 1, "candidate index out of range"));
        }
        groups.entry(f[0].to_string()).or_default().push((rank, cand));
    }
    Ok(groups
        .into_iter()
        .map(|(id, mut items)| {
            items.sort();
            let ex = by_id[id.as_str()];
            let labels = items.iter().map(|&(_, c)| ex.candidates[c].label).collect();
            RankedLabels::new(id, labels)
        })
        .collect())
}

fn write_report(cfg: &RunConfig, out: &mut dyn Write, m: &Metrics) -> Result<()> {
    writeln!(out, "{m}\n{}\n{}", Metrics::TSV_HEADER, m.tsv_row()).map_err(io_out)?;
    if let Some(p) = cfg.optional("output") {
        let mut w = create(p)?;
        writeln!(w, "{}\n{}", Metrics::TSV_HEADER, m.tsv_row()).map_err(|e| Error::io(p, e))?;
        finish(p, w)?;
    }
    Ok(())
}

/// Evaluates a ranking file when `rankings` is set, otherwise ranks `test`
/// with the configured ranker first.
pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<Metrics> {
    cfg.validate()?;
    let metrics = match cfg.optional("rankings") {
        Some(_) => {
            let path = cfg.existing("rankings")?;
            let test = match cfg.optional("test") {
                Some(_) => Some(load_dataset(cfg.existing("test")?, &cfg.tokenizer()?, usize::MAX)?),
                None => None,
            };
            let ranked = read_rankings(path, test.as_deref())?;
            match &test {
                Some(t) => evaluate_against(&ranked, t.iter().map(|e| e.dialog_id.as_str()))?,
                None => evaluate_groups(&ranked),
            }
        }
        None => {
            let (test, ranks) = rank_dataset(cfg)?;
            let ranked: Vec<RankedLabels> = test
                .iter()
                .zip(&ranks)
                .map(|(e, r)| RankedLabels::from_ranking(e.dialog_id.clone(), &e.labels(), r))
                .collect();
            evaluate_groups(&ranked)
        }
    };
    write_report(cfg, out, &metrics)?;
    Ok(metrics)
}

/// Writes `dialog_id, candidate_index, expansion terms, expanded response`
/// for every candidate of the input dataset.
pub fn cmd_expand(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    let input = match cfg.optional("input") {
        Some(_) => cfg.existing("input")?,
        None => cfg.existing("test")?,
    };
    require_knowledge_source(cfg)?;
    let tokenizer = cfg.tokenizer()?;
    let data = load_dataset(input, &tokenizer, usize::MAX)?;
    let index = open_index(cfg, &tokenizer, cfg.index_field.unwrap_or(IndexedField::Answer))?;
    let mut prf_cfg = cfg.model.clone();
    prf_cfg.variant = Variant::Prf;
    let mut knowledge = Knowledge::with_index(&index).with_cache(load_cache(cfg)?);
    let mut rows = Vec::new();
    for ex in &data {
        for (i, c) in ex.candidates.iter().enumerate() {
            let terms = knowledge.expansion_terms(&prf_cfg, &c.response)?;
            rows.push(format!(
                "{}\t{}\t{}\t{}",
                ex.dialog_id,
                i,
                terms.join(" "),
                expand_with(&c.response, &terms).join(" ")
            ));
        }
    }
    save_cache(cfg, &knowledge.cache)?;
    emit(cfg, out, |w| rows.iter().try_for_each(|r| writeln!(w, "{r}")))
}
