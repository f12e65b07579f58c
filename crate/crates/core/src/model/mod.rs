//! The deep matching network and its knowledge-augmented variants.
//!
//! For each of the `c` context slots an interaction stack between the
//! utterance and the response (embedding similarities, BiGRU-state
//! similarities and, for [`Variant::Kd`], PPMI values from retrieved QA
//! pairs) goes through convolution, ReLU and max pooling. The flattened
//! per-slot features run through a context BiGRU whose concatenated states
//! feed a tanh/softmax MLP; the class-1 probability is the score.

mod config;
mod forward;
mod params;
mod prepare;

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{Channel, Channels, KnowledgeConfig, ModelConfig, Variant};
pub use forward::{encode_context, encode_text, interaction_stack, score_candidate, TextNodes};
pub use params::{Bound, ModelParams, EMBEDDING_INIT};
pub use prepare::{
    context_slots, dataset_vocab, prepare_dataset, prepare_example, response_tokens, Knowledge, PreparedCandidate,
    PreparedExample,
};

pub(crate) use config::{parse_bool, parse_num};

use crate::corpus::DialogExample;
use crate::error::{Error, Result};
use crate::nn::{parse_param_lines, write_param_lines, Graph, Tensor};
use crate::text::{EncodedText, Vocabulary};

pub const CHECKPOINT_HEADER: &str = "dmn-checkpoint\t1";

/// Scores of every candidate of `example`, in candidate order.
pub fn score(example: &PreparedExample, params: &ModelParams, cfg: &ModelConfig) -> Result<Vec<f64>> {
    let vocab_size = params
        .get("embedding")
        .map(|t| t.rows())
        .ok_or_else(|| Error::Shape("parameters lack an embedding table".into()))?;
    example.check(cfg, vocab_size)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g, cfg);
    let ctx = encode_context(&mut g, &bound, cfg, example);
    Ok(example
        .candidates
        .iter()
        .map(|cand| {
            let s = score_candidate(&mut g, &bound, cfg, &ctx, cand, None);
            g.scalar(s)
        })
        .collect())
}

/// Interaction stack (`channels x l_r x l_u`) for one utterance and
/// response. `m3` must be given exactly when the knowledge channel is on.
pub fn build_stack(
    utterance: &EncodedText,
    response: &EncodedText,
    params: &ModelParams,
    cfg: &ModelConfig,
    m3: Option<&Tensor>,
) -> Result<Tensor> {
    if utterance.ids.len() != cfg.l_u || response.ids.len() != cfg.l_r {
        return Err(Error::Shape(format!(
            "stack needs {}-token utterances and {}-token responses",
            cfg.l_u, cfg.l_r
        )));
    }
    match m3 {
        Some(m) if !cfg.channels.m3 || m.shape() != [cfg.l_r, cfg.l_u] => {
            return Err(Error::Shape(format!(
                "knowledge matrix {:?} does not fit channels {} at {}x{}",
                m.shape(),
                cfg.channels,
                cfg.l_r,
                cfg.l_u
            )))
        }
        None if cfg.channels.m3 => return Err(Error::Shape("knowledge channel needs a matrix".into())),
        _ => {}
    }
    let vocab_size = params.get("embedding").map_or(0, |t| t.rows());
    if utterance.ids.iter().chain(&response.ids).any(|&i| i >= vocab_size) {
        return Err(Error::Shape("token id outside the embedding table".into()));
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, cfg);
    let u = encode_text(&mut g, &bound, cfg, utterance);
    let r = encode_text(&mut g, &bound, cfg, response);
    let s = interaction_stack(&mut g, &bound, cfg, u, r, m3);
    Ok(g.tensor(s))
}

/// `(candidate, score)` by descending score, ties by candidate index.
pub fn rank_scores(scores: &[f64]) -> Vec<(usize, f64)> {
    let mut order: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order
}

pub fn rank(example: &PreparedExample, params: &ModelParams, cfg: &ModelConfig) -> Result<Vec<(usize, f64)>> {
    Ok(rank_scores(&score(example, params, cfg)?))
}

/// Configuration, vocabulary and parameters: everything needed to score.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, vocab.len(), &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { config, vocab, params })
    }

    pub fn prepare(&self, example: &DialogExample, knowledge: &mut Knowledge<'_>) -> Result<PreparedExample> {
        prepare_example(example, &self.config, &self.vocab, knowledge)
    }

    pub fn prepare_all(
        &self,
        examples: &[DialogExample],
        knowledge: &mut Knowledge<'_>,
    ) -> Result<Vec<PreparedExample>> {
        prepare_dataset(examples, &self.config, &self.vocab, knowledge)
    }

    pub fn score(&self, example: &PreparedExample) -> Result<Vec<f64>> {
        score(example, &self.params, &self.config)
    }

    pub fn rank(&self, example: &PreparedExample) -> Result<Vec<(usize, f64)>> {
        rank(example, &self.params, &self.config)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CHECKPOINT_HEADER}")?;
        writeln!(out, "[config]")?;
        for (k, v) in self.config.to_pairs() {
            writeln!(out, "{k}={v}")?;
        }
        writeln!(out, "[vocab]")?;
        self.vocab.write_to(&mut out)?;
        writeln!(out, "[params]")?;
        write_param_lines(&mut out, self.params.iter())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let lines: Vec<String> = input
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::Data(e.to_string()))?;
        if lines.first().map(String::as_str) != Some(CHECKPOINT_HEADER) {
            return Err(Error::parse(1, format!("expected header `{CHECKPOINT_HEADER}`")));
        }
        let mut sections: Vec<(&str, Vec<(usize, &str)>)> = Vec::new();
        for (i, line) in lines.iter().enumerate().skip(1) {
            match line.as_str() {
                "[config]" | "[vocab]" | "[params]" => sections.push((line.as_str(), Vec::new())),
                l => match sections.last_mut() {
                    Some((_, body)) => body.push((i + 1, l)),
                    None if l.is_empty() => {}
                    None => return Err(Error::parse(i + 1, "content before the first section")),
                },
            }
        }
        let section = |name: &str| {
            sections
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, b)| b.clone())
                .ok_or_else(|| Error::Data(format!("checkpoint lacks a {name} section")))
        };
        let mut config = ModelConfig::default();
        for (n, line) in section("[config]")? {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(n, "expected key=value"))?;
            if !config.set(k, v)? {
                return Err(Error::parse(n, format!("unknown config key `{k}`")));
            }
        }
        config.validate()?;
        let vocab = Vocabulary::from_lines(section("[vocab]")?.into_iter().filter(|(_, l)| !l.is_empty()))?;
        let named = parse_param_lines(section("[params]")?.into_iter())?;
        let params = ModelParams::from_named(&config, vocab.len(), named)?;
        Ok(Self { config, vocab, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests;
