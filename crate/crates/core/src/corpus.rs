//! Conversation datasets and the external QA collection.
//!
//! Dataset lines are `label<TAB>context<TAB>response`, with context turns
//! joined by [`TURN_DELIMITER`]. Consecutive lines sharing the same context
//! string form one [`DialogExample`].

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::retrieval::{Bm25Params, InvertedIndex};
use crate::text::Tokenizer;

pub const TURN_DELIMITER: &str = "__eot__";

/// Retrieval depth used when sampling BM25 negatives.
pub const NEGATIVE_POOL_DEPTH: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub response: Vec<String>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogExample {
    pub dialog_id: String,
    pub context: Vec<Vec<String>>,
    pub candidates: Vec<Candidate>,
}

impl DialogExample {
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label == 1)
            .map(|(i, _)| i)
    }

    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label == 0)
            .map(|(i, _)| i)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.candidates.iter().map(|c| c.label).collect()
    }

    pub fn validate(&self, max_context: usize) -> Result<()> {
        if self.context.is_empty() {
            return Err(Error::Data(format!("{}: empty context", self.dialog_id)));
        }
        if self.context.len() > max_context {
            return Err(Error::Data(format!(
                "{}: context has {} turns, window is {max_context}",
                self.dialog_id,
                self.context.len()
            )));
        }
        if self.candidates.is_empty() {
            return Err(Error::Data(format!("{}: no candidates", self.dialog_id)));
        }
        if self.candidates.iter().any(|c| c.label > 1) {
            return Err(Error::Data(format!("{}: non-binary label", self.dialog_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaPair {
    pub id: String,
    pub question: Vec<String>,
    pub answer: Vec<String>,
}

/// One raw dataset line before tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLine<'a> {
    pub label: u8,
    pub context: &'a str,
    pub utterances: Vec<&'a str>,
    pub response: &'a str,
}

pub fn parse_dataset_line(line: &str, line_no: usize) -> Result<DatasetLine<'_>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(Error::parse(
            line_no,
            format!("expected label<TAB>context<TAB>response, got {} fields", fields.len()),
        ));
    }
    let label = match fields[0].trim() {
        "0" => 0,
        "1" => 1,
        other => return Err(Error::parse(line_no, format!("non-binary label `{other}`"))),
    };
    let utterances: Vec<&str> = fields[1]
        .split(TURN_DELIMITER)
        .map(str::trim)
        .filter(|u| !u.is_empty())
        .collect();
    if utterances.is_empty() {
        return Err(Error::parse(line_no, "empty context"));
    }
    Ok(DatasetLine {
        label,
        context: fields[1],
        utterances,
        response: fields[2],
    })
}

/// Last `min(len, c)` utterances, order preserved.
pub fn window_context<T: Clone>(utterances: &[T], c: usize) -> Vec<T> {
    let start = utterances.len().saturating_sub(c);
    utterances[start..].to_vec()
}

/// Streams a dataset, grouping consecutive lines with identical context.
/// `dialog_id`s are the zero-based group numbers.
pub fn read_dataset<R: BufRead>(input: R, tokenizer: &Tokenizer, max_context: usize) -> Result<Vec<DialogExample>> {
    let mut out: Vec<DialogExample> = Vec::new();
    let mut current_context: Option<String> = None;
    for (n, line) in input.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::parse(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_dataset_line(&line, line_no)?;
        let candidate = Candidate {
            response: tokenizer.tokenize(parsed.response),
            label: parsed.label,
        };
        match (&current_context, out.last_mut()) {
            (Some(ctx), Some(example)) if ctx == parsed.context => example.candidates.push(candidate),
            _ => {
                let turns: Vec<Vec<String>> = parsed.utterances.iter().map(|u| tokenizer.tokenize(u)).collect();
                out.push(DialogExample {
                    dialog_id: out.len().to_string(),
                    context: window_context(&turns, max_context),
                    candidates: vec![candidate],
                });
                current_context = Some(parsed.context.to_string());
            }
        }
    }
    for example in &out {
        example.validate(max_context)?;
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, tokenizer: &Tokenizer, max_context: usize) -> Result<Vec<DialogExample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(std::io::BufReader::new(file), tokenizer, max_context).map_err(|e| match e {
        Error::Parse { line, message } => Error::Data(format!("{}:{line}: {message}", path.display())),
        other => other,
    })
}

/// Reads `id<TAB>question<TAB>answer` lines. Pairs whose question or answer
/// tokenizes to nothing are skipped; the skip count is returned.
pub fn read_qa_collection<R: BufRead>(input: R, tokenizer: &Tokenizer) -> Result<(Vec<QaPair>, usize)> {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (n, line) in input.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::parse(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(line_no, "expected id<TAB>question<TAB>answer"));
        }
        let pair = QaPair {
            id: fields[0].to_string(),
            question: tokenizer.tokenize(fields[1]),
            answer: tokenizer.tokenize(fields[2]),
        };
        if pair.question.is_empty() || pair.answer.is_empty() {
            skipped += 1;
            continue;
        }
        pairs.push(pair);
    }
    Ok((pairs, skipped))
}

pub fn load_qa_collection(path: &Path, tokenizer: &Tokenizer) -> Result<(Vec<QaPair>, usize)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_qa_collection(std::io::BufReader::new(file), tokenizer)
}

/// Writes `id<TAB>question<TAB>answer` lines with tokens joined by spaces.
pub fn write_qa_collection<W: Write>(pairs: &[QaPair], mut out: W) -> std::io::Result<()> {
    for p in pairs {
        writeln!(out, "{}\t{}\t{}", p.id, p.question.join(" "), p.answer.join(" "))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampler {
    Uniform,
    #[default]
    Bm25,
}

impl Sampler {
    pub fn as_str(&self) -> &'static str {
        match self {
            Sampler::Uniform => "uniform",
            Sampler::Bm25 => "bm25",
        }
    }
}

impl std::str::FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Sampler::Uniform),
            "bm25" => Ok(Sampler::Bm25),
            other => Err(Error::Config(format!("sampler must be uniform|bm25, got `{other}`"))),
        }
    }
}

/// Picks `n_neg` negatives for `positive` from the response pool.
///
/// With [`Sampler::Bm25`] the positive is the query and negatives are drawn
/// uniformly from the top [`NEGATIVE_POOL_DEPTH`] hits. Candidates equal to
/// the positive token sequence, and repeats of the same sequence, are
/// excluded. Returns pool document numbers in sampled order.
pub fn sample_negatives(
    positive: &[String],
    pool: &InvertedIndex,
    n_neg: usize,
    sampler: Sampler,
    params: &Bm25Params,
    seed: u64,
) -> Result<Vec<usize>> {
    if n_neg == 0 {
        return Ok(Vec::new());
    }
    let ranked: Vec<usize> = match sampler {
        Sampler::Bm25 => pool
            .search(params, positive, NEGATIVE_POOL_DEPTH.min(pool.doc_count()))
            .into_iter()
            .map(|h| h.doc)
            .collect(),
        Sampler::Uniform => (0..pool.doc_count()).collect(),
    };
    let mut seen: HashSet<&[String]> = HashSet::new();
    seen.insert(positive);
    let eligible: Vec<usize> = ranked
        .into_iter()
        .filter(|&d| seen.insert(pool.doc_tokens(d)))
        .collect();
    if eligible.len() < n_neg {
        return Err(Error::Shortfall {
            wanted: n_neg,
            available: eligible.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, eligible.len(), n_neg)
        .into_iter()
        .map(|i| eligible[i])
        .collect())
}

/// Positive (label 1) followed by the sampled negatives (label 0).
pub fn build_candidates(
    positive: &[String],
    pool: &InvertedIndex,
    n_neg: usize,
    sampler: Sampler,
    params: &Bm25Params,
    seed: u64,
) -> Result<Vec<Candidate>> {
    let negatives = sample_negatives(positive, pool, n_neg, sampler, params, seed)?;
    let mut out = Vec::with_capacity(n_neg + 1);
    out.push(Candidate {
        response: positive.to_vec(),
        label: 1,
    });
    out.extend(negatives.into_iter().map(|d| Candidate {
        response: pool.doc_tokens(d).to_vec(),
        label: 0,
    }));
    Ok(out)
}

/// Writes examples in the dataset format, one line per candidate, with
/// tokens joined by single spaces.
pub fn write_dataset<W: Write>(examples: &[DialogExample], mut out: W) -> std::io::Result<()> {
    for ex in examples {
        let context = ex
            .context
            .iter()
            .map(|u| u.join(" "))
            .collect::<Vec<_>>()
            .join(&format!(" {TURN_DELIMITER} "));
        for c in &ex.candidates {
            writeln!(out, "{}\t{}\t{}", c.label, context, c.response.join(" "))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn parse_lines() {
        let l = parse_dataset_line("1\thi __eot__ how are you\tfine thanks", 1).unwrap();
        assert_eq!(l.label, 1);
        assert_eq!(l.utterances, vec!["hi", "how are you"]);
        assert_eq!(l.response, "fine thanks");

        let l = parse_dataset_line("0\thello\tbye", 1).unwrap();
        assert_eq!((l.label, l.utterances.len()), (0, 1));

        match parse_dataset_line("2\ta\tb", 7) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 7);
                assert!(message.contains("non-binary"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_dataset_line("1\tonly two", 1).is_err());
    }

    #[test]
    fn windowing() {
        let u: Vec<usize> = (0..12).collect();
        assert_eq!(window_context(&u, 10), (2..12).collect::<Vec<_>>());
        assert_eq!(window_context(&u[..3], 10), vec![0, 1, 2]);
        assert_eq!(window_context(&u[..1], 1), vec![0]);
    }

    #[test]
    fn groups_consecutive_lines() {
        let data = "1\ta __eot__ b\tyes\n0\ta __eot__ b\tno\n0\ta __eot__ b\tnah\n1\tc\tok\n0\tc\tnope\n";
        let ex = read_dataset(data.as_bytes(), &Tokenizer::default(), 10).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].candidates.len(), 3);
        assert_eq!(ex[0].context, vec![toks("a"), toks("b")]);
        assert_eq!(ex[1].dialog_id, "1");
        assert_eq!(ex[1].positives().collect::<Vec<_>>(), vec![0]);

        let ex = read_dataset(data.as_bytes(), &Tokenizer::default(), 1).unwrap();
        assert_eq!(ex[0].context, vec![toks("b")]);
    }

    #[test]
    fn qa_collection_skips_empty_pairs() {
        let data = "q1\tHow do I reset?\tHold the button.\nq2\t!!!\tsomething\n";
        let (pairs, skipped) = read_qa_collection(data.as_bytes(), &Tokenizer::default()).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(skipped, 1);
        assert_eq!(pairs[0].question, toks("how do i reset"));
    }

    fn pool(n: usize) -> InvertedIndex {
        InvertedIndex::from_docs((0..n).map(|i| (format!("r{i}"), toks(&format!("common word{i} tail{}", i % 7)))))
            .unwrap()
    }

    #[test]
    fn candidates_from_large_pool() {
        let idx = pool(10_000);
        let pos = toks("common word3 tail3");
        let p = Bm25Params::default();
        let c = build_candidates(&pos, &idx, 9, Sampler::Bm25, &p, 42).unwrap();
        assert_eq!(c.len(), 10);
        assert_eq!(c.iter().filter(|c| c.label == 1).count(), 1);
        assert!(c[1..].iter().all(|c| c.response != pos));
        assert_eq!(c, build_candidates(&pos, &idx, 9, Sampler::Bm25, &p, 42).unwrap());

        let c = build_candidates(&pos, &idx, 9, Sampler::Uniform, &p, 1).unwrap();
        assert_eq!(c.len(), 10);
    }

    #[test]
    fn candidate_edge_cases() {
        let idx = pool(5);
        let p = Bm25Params::default();
        let pos = toks("common word0 tail0");
        let only = build_candidates(&pos, &idx, 0, Sampler::Bm25, &p, 0).unwrap();
        assert_eq!(only.len(), 1);
        assert!(matches!(
            build_candidates(&pos, &idx, 9, Sampler::Bm25, &p, 0),
            Err(Error::Shortfall {
                wanted: 9,
                available: 4
            })
        ));
    }
}
