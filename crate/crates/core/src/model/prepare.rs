//! Turning tokenized dialogs into fixed-shape network inputs, including the
//! knowledge lookups of the two augmented variants.

use super::config::{ModelConfig, Variant};
use crate::corpus::{window_context, DialogExample, QaPair};
use crate::error::{Error, Result};
use crate::knowledge::{expand_with, ppmi_fill, retrieve_qa_pairs, KnowledgeCache, PpmiStats, PrfExpander};
use crate::nn::Tensor;
use crate::retrieval::InvertedIndex;
use crate::text::{build_vocab, encode_with, EncodedText, Truncate, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCandidate {
    pub response: EncodedText,
    pub label: u8,
    /// One `l_r x l_u` PPMI matrix per context slot (knowledge variant).
    pub m3: Option<Vec<Tensor>>,
}

/// A context of exactly `c` encoded utterance slots (front-padded with
/// empty utterances, so the most recent turn is last) and its candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample {
    pub dialog_id: String,
    pub utterances: Vec<EncodedText>,
    pub candidates: Vec<PreparedCandidate>,
}

impl PreparedExample {
    pub fn labels(&self) -> Vec<u8> {
        self.candidates.iter().map(|c| c.label).collect()
    }

    /// Checks that the example fits `cfg` and a vocabulary of `vocab_size`.
    pub fn check(&self, cfg: &ModelConfig, vocab_size: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Shape(format!("example {}: {m}", self.dialog_id)));
        if self.utterances.len() != cfg.c {
            return bad(format!(
                "{} utterance slots, model expects {}",
                self.utterances.len(),
                cfg.c
            ));
        }
        if self.candidates.is_empty() {
            return bad("no candidates".into());
        }
        let text_ok = |t: &EncodedText, len: usize| {
            t.ids.len() == len && t.true_len <= len && t.ids.iter().all(|&i| i < vocab_size)
        };
        if !self.utterances.iter().all(|u| text_ok(u, cfg.l_u)) {
            return bad(format!("utterances must be {} valid ids", cfg.l_u));
        }
        for (k, cand) in self.candidates.iter().enumerate() {
            if !text_ok(&cand.response, cfg.l_r) {
                return bad(format!("candidate {k}: response must be {} valid ids", cfg.l_r));
            }
            match (&cand.m3, cfg.channels.m3) {
                (None, false) => {}
                (Some(m), true) if m.len() == cfg.c && m.iter().all(|t| t.shape() == [cfg.l_r, cfg.l_u]) => {}
                _ => {
                    return bad(format!(
                        "candidate {k}: knowledge channel needs {} matrices of {}x{}",
                        cfg.c, cfg.l_r, cfg.l_u
                    ))
                }
            }
        }
        Ok(())
    }
}

/// The `c` context slots for `context`: the most recent turns, optionally
/// without the last one, preceded by `None` for missing turns.
pub fn context_slots(context: &[Vec<String>], c: usize, include_current_turn: bool) -> Vec<Option<&[String]>> {
    let turns = if include_current_turn || context.is_empty() {
        context
    } else {
        &context[..context.len() - 1]
    };
    let kept = window_context(&(0..turns.len()).collect::<Vec<_>>(), c);
    let mut slots: Vec<Option<&[String]>> = vec![None; c - kept.len()];
    slots.extend(kept.into_iter().map(|i| Some(turns[i].as_slice())));
    slots
}

/// Access to the external collection plus a memo of lookups.
#[derive(Debug, Default)]
pub struct Knowledge<'a> {
    pub index: Option<&'a InvertedIndex>,
    pub cache: KnowledgeCache,
}

impl<'a> Knowledge<'a> {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_index(index: &'a InvertedIndex) -> Self {
        Self {
            index: Some(index),
            cache: KnowledgeCache::default(),
        }
    }

    pub fn with_cache(mut self, cache: KnowledgeCache) -> Self {
        self.cache = cache;
        self
    }

    fn require_index(&self, variant: Variant) -> Result<&'a InvertedIndex> {
        self.index
            .ok_or_else(|| Error::Config(format!("variant {variant} needs an external QA index")))
    }

    fn index_tag(index: &InvertedIndex) -> String {
        format!("{}:{}:{:e}", index.doc_count(), index.term_count(), index.avg_doc_len())
    }

    /// Expansion terms for `response`, memoized.
    pub fn expansion_terms(&mut self, cfg: &ModelConfig, response: &[String]) -> Result<Vec<String>> {
        let index = self.require_index(cfg.variant)?;
        let k = &cfg.knowledge;
        let expander = PrfExpander {
            index,
            depth: k.prf_depth,
            terms: k.prf_terms,
            bm25: k.bm25,
        };
        let params = format!(
            "{}/{}/{:e}/{:e}/{}",
            k.prf_depth,
            k.prf_terms,
            k.bm25.k1,
            k.bm25.b,
            Self::index_tag(index)
        );
        let key = KnowledgeCache::key("prf", &params, response);
        Ok(self
            .cache
            .tokens_or_insert_with(key, || expander.expansion_terms(response)))
    }

    /// QA pairs retrieved for `response`, memoized by document id.
    pub fn qa_pairs(&mut self, cfg: &ModelConfig, response: &[String]) -> Result<Vec<&'a QaPair>> {
        let index = self.require_index(cfg.variant)?;
        let k = &cfg.knowledge;
        let params = format!(
            "{}/{:e}/{:e}/{}",
            k.kd_depth,
            k.bm25.k1,
            k.bm25.b,
            Self::index_tag(index)
        );
        let key = KnowledgeCache::key("kd", &params, response);
        let ids = self.cache.tokens_or_insert_with(key, || {
            retrieve_qa_pairs(response, index, k.kd_depth, &k.bm25)
                .into_iter()
                .map(|p| p.id.clone())
                .collect()
        });
        ids.iter()
            .map(|id| {
                index
                    .doc_number(id)
                    .and_then(|d| index.pair(d))
                    .ok_or_else(|| Error::Data(format!("cached QA pair `{id}` is not in the index")))
            })
            .collect()
    }
}

/// Response tokens as fed to the network: original tokens truncated to
/// `l_r` first, then expansion terms appended and cut to `l_r`, so original
/// tokens always win.
pub fn response_tokens(cfg: &ModelConfig, response: &[String], expansion: &[String]) -> Vec<String> {
    let kept = if response.len() <= cfg.l_r {
        response
    } else {
        match cfg.truncate {
            Truncate::Head => &response[..cfg.l_r],
            Truncate::Tail => &response[response.len() - cfg.l_r..],
        }
    };
    let mut out = expand_with(kept, expansion);
    out.truncate(cfg.l_r);
    out
}

pub fn prepare_example(
    example: &DialogExample,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    knowledge: &mut Knowledge<'_>,
) -> Result<PreparedExample> {
    let slots = context_slots(&example.context, cfg.c, cfg.include_current_turn);
    let utterances: Vec<EncodedText> = slots
        .iter()
        .map(|s| match s {
            Some(t) => encode_with(t, vocab, cfg.l_u, cfg.truncate),
            None => EncodedText::padding(cfg.l_u),
        })
        .collect();
    let utterance_strings: Vec<Vec<&str>> = utterances.iter().map(|u| u.decode(vocab)).collect();

    let mut candidates = Vec::with_capacity(example.candidates.len());
    for cand in &example.candidates {
        let response = if cfg.variant == Variant::Prf {
            let terms = knowledge.expansion_terms(cfg, &cand.response)?;
            let tokens = response_tokens(cfg, &cand.response, &terms);
            encode_with(&tokens, vocab, cfg.l_r, Truncate::Head)
        } else {
            encode_with(&cand.response, vocab, cfg.l_r, cfg.truncate)
        };
        let m3 = if cfg.channels.m3 {
            let pairs = knowledge.qa_pairs(cfg, &cand.response)?;
            let stats = PpmiStats::new(&pairs, cfg.knowledge.ppmi_counting);
            let resp_strings = response.decode(vocab);
            Some(
                utterance_strings
                    .iter()
                    .map(|u| {
                        let mut m = Tensor::zeros(&[cfg.l_r, cfg.l_u]);
                        if !pairs.is_empty() {
                            ppmi_fill(&stats, &resp_strings, u, &mut m);
                        }
                        m
                    })
                    .collect(),
            )
        } else {
            None
        };
        candidates.push(PreparedCandidate {
            response,
            label: cand.label,
            m3,
        });
    }
    Ok(PreparedExample {
        dialog_id: example.dialog_id.clone(),
        utterances,
        candidates,
    })
}

/// Vocabulary over every context and candidate token of `examples`, plus
/// the expansion terms the network will see for [`Variant::Prf`].
pub fn dataset_vocab(
    examples: &[DialogExample],
    cfg: &ModelConfig,
    knowledge: &mut Knowledge<'_>,
    min_count: usize,
) -> Result<Vocabulary> {
    let mut streams: Vec<Vec<String>> = Vec::new();
    for ex in examples {
        streams.extend(ex.context.iter().cloned());
        for c in &ex.candidates {
            if cfg.variant == Variant::Prf {
                let terms = knowledge.expansion_terms(cfg, &c.response)?;
                streams.push(response_tokens(cfg, &c.response, &terms));
            } else {
                streams.push(c.response.clone());
            }
        }
    }
    Ok(build_vocab(streams, min_count))
}

pub fn prepare_dataset(
    examples: &[DialogExample],
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    knowledge: &mut Knowledge<'_>,
) -> Result<Vec<PreparedExample>> {
    cfg.validate()?;
    examples
        .iter()
        .map(|e| prepare_example(e, cfg, vocab, knowledge))
        .collect()
}
