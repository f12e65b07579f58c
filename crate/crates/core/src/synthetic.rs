//! Seeded synthetic corpora with planted structure, used by the examples
//! and the behavioral checks.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Candidate, DialogExample, QaPair};
use crate::model::{ModelConfig, Variant};
use crate::nn::PoolEdge;

/// Training and validation dialogs plus an optional external QA collection.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<DialogExample>,
    pub valid: Vec<DialogExample>,
    pub qa: Vec<QaPair>,
}

fn words(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn fill(rng: &mut ChaCha8Rng, pool: &[String], lo: usize, hi: usize) -> Vec<String> {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect()
}

fn insert_at_random(rng: &mut ChaCha8Rng, tokens: &mut Vec<String>, word: &str) {
    let at = rng.gen_range(0..=tokens.len());
    tokens.insert(at, word.to_string());
}

/// Puts the positive at a random slot so that index tie-breaking carries
/// no signal.
fn shuffle_in(rng: &mut ChaCha8Rng, positive: Vec<String>, negatives: Vec<Vec<String>>) -> Vec<Candidate> {
    let mut cands: Vec<Candidate> = negatives
        .into_iter()
        .map(|response| Candidate { response, label: 0 })
        .collect();
    let at = rng.gen_range(0..=cands.len());
    cands.insert(
        at,
        Candidate {
            response: positive,
            label: 1,
        },
    );
    cands
}

fn other_than(rng: &mut ChaCha8Rng, n: usize, not: usize) -> usize {
    loop {
        let k = rng.gen_range(0..n);
        if k != not {
            return k;
        }
    }
}

/// Dialogs whose positive response repeats a distinctive cue token from the
/// context while every negative carries a different cue. Context and
/// response fillers come from disjoint word pools, so the cue is the only
/// lexical overlap.
pub fn lexical_cue(n_train: usize, n_valid: usize, n_neg: usize, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cues = words("cue", 40);
    let ctx = words("ctx", 30);
    let rsp = words("rsp", 30);
    // cues cycle so every one of them occurs in training
    let make = |i: usize, id: String, rng: &mut ChaCha8Rng| {
        let k = i % cues.len();
        let turns = rng.gen_range(1..=3);
        let mut context: Vec<Vec<String>> = (0..turns).map(|_| fill(rng, &ctx, 2, 4)).collect();
        let slot = rng.gen_range(0..turns);
        insert_at_random(rng, &mut context[slot], &cues[k]);
        let mut positive = fill(rng, &rsp, 2, 4);
        insert_at_random(rng, &mut positive, &cues[k]);
        let negatives = (0..n_neg)
            .map(|_| {
                let mut r = fill(rng, &rsp, 2, 4);
                let j = other_than(rng, cues.len(), k);
                insert_at_random(rng, &mut r, &cues[j]);
                r
            })
            .collect();
        DialogExample {
            dialog_id: id,
            context,
            candidates: shuffle_in(rng, positive, negatives),
        }
    };
    let train = (0..n_train).map(|i| make(i, format!("t{i}"), &mut rng)).collect();
    let valid = (0..n_valid).map(|i| make(i, format!("v{i}"), &mut rng)).collect();
    SyntheticCorpus {
        train,
        valid,
        qa: Vec::new(),
    }
}

/// Number of topics in [`planted_prf`].
pub const PRF_TOPICS: usize = 20;

/// Dialogs about `topicK` whose positive answer only says `fixK`, with an
/// external QA collection whose answers pair `fixK` with `topicK`. The
/// positive therefore shares no word with its context until expansion
/// restores the topic term. Some negatives borrow a context filler word so
/// that plain lexical matching is actively misled.
pub fn planted_prf(n_train: usize, n_valid: usize, n_neg: usize, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics = words("topic", PRF_TOPICS);
    let fixes = words("fix", PRF_TOPICS);
    let ctx = words("ctx", 30);
    let rsp = words("rsp", 30);
    let ans = words("ans", 30);
    let qst = words("qst", 30);

    let mut qa = Vec::new();
    for k in 0..PRF_TOPICS {
        for j in 0..5 {
            let mut question = fill(&mut rng, &qst, 2, 3);
            insert_at_random(&mut rng, &mut question, &topics[k]);
            let mut answer = fill(&mut rng, &ans, 2, 3);
            insert_at_random(&mut rng, &mut answer, &topics[k]);
            insert_at_random(&mut rng, &mut answer, &fixes[k]);
            qa.push(QaPair {
                id: format!("q{k}_{j}"),
                question,
                answer,
            });
        }
    }

    let make = |i: usize, id: String, rng: &mut ChaCha8Rng| {
        let k = i % PRF_TOPICS;
        let turns = rng.gen_range(1..=2);
        let mut context: Vec<Vec<String>> = (0..turns).map(|_| fill(rng, &ctx, 2, 4)).collect();
        for _ in 0..2 {
            let slot = rng.gen_range(0..turns);
            insert_at_random(rng, &mut context[slot], &topics[k]);
        }
        let flat: Vec<String> = context.iter().flatten().cloned().collect();
        let mut positive = fill(rng, &rsp, 2, 3);
        insert_at_random(rng, &mut positive, &fixes[k]);
        let negatives = (0..n_neg)
            .map(|_| {
                let mut r = fill(rng, &rsp, 2, 3);
                let j = other_than(rng, PRF_TOPICS, k);
                insert_at_random(rng, &mut r, &fixes[j]);
                if rng.gen_bool(0.5) {
                    let w = flat.choose(rng).expect("context is non-empty").clone();
                    if !topics.contains(&w) {
                        insert_at_random(rng, &mut r, &w);
                    }
                }
                r
            })
            .collect();
        DialogExample {
            dialog_id: id,
            context,
            candidates: shuffle_in(rng, positive, negatives),
        }
    };
    let train = (0..n_train).map(|i| make(i, format!("t{i}"), &mut rng)).collect();
    let valid = (0..n_valid).map(|i| make(i, format!("v{i}"), &mut rng)).collect();
    SyntheticCorpus { train, valid, qa }
}

/// A handful of short dialogs over a ten-word vocabulary, with QA pairs
/// drawn from the same words so that every knowledge lookup succeeds.
pub fn tiny(seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = words("w", 10);
    let make = |id: String, rng: &mut ChaCha8Rng| {
        let turns = rng.gen_range(1..=3);
        let context = (0..turns).map(|_| fill(rng, &vocab, 1, 5)).collect();
        let positive = fill(rng, &vocab, 1, 5);
        let negatives = (0..2).map(|_| fill(rng, &vocab, 1, 5)).collect();
        DialogExample {
            dialog_id: id,
            context,
            candidates: shuffle_in(rng, positive, negatives),
        }
    };
    let train = (0..8).map(|i| make(format!("t{i}"), &mut rng)).collect();
    let valid = (0..4).map(|i| make(format!("v{i}"), &mut rng)).collect();
    let qa = (0..12)
        .map(|i| QaPair {
            id: format!("qa{i}"),
            question: fill(&mut rng, &vocab, 2, 5),
            answer: fill(&mut rng, &vocab, 2, 5),
        })
        .collect();
    SyntheticCorpus { train, valid, qa }
}

/// Small network for [`tiny`] data: two context slots, four tokens per
/// text, three-dimensional embeddings, hidden size two and two kernels.
pub fn tiny_config(variant: Variant) -> ModelConfig {
    let mut cfg = ModelConfig::for_variant(variant);
    cfg.c = 2;
    cfg.l_u = 4;
    cfg.l_r = 4;
    cfg.d = 3;
    cfg.hidden = 2;
    cfg.context_hidden = 2;
    cfg.kernel = (2, 2);
    cfg.kernels = 2;
    cfg.pool = (2, 2);
    cfg.pool_edge = PoolEdge::Partial;
    cfg.mlp_hidden = 3;
    cfg.dropout = 0.0;
    cfg.knowledge.prf_depth = 3;
    cfg.knowledge.prf_terms = 2;
    cfg.knowledge.kd_depth = 3;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexical_cue_shape() {
        let s = lexical_cue(20, 5, 9, 3);
        assert_eq!((s.train.len(), s.valid.len()), (20, 5));
        for ex in s.train.iter().chain(&s.valid) {
            assert_eq!(ex.candidates.len(), 10);
            assert_eq!(ex.positives().count(), 1);
            let ctx: Vec<&String> = ex.context.iter().flatten().collect();
            for c in &ex.candidates {
                let shared = c.response.iter().filter(|t| ctx.contains(t)).count();
                assert_eq!(shared > 0, c.label == 1, "{ex:?}");
            }
        }
        assert_eq!(lexical_cue(20, 5, 9, 3), s);
    }

    #[test]
    fn planted_positive_has_no_lexical_overlap() {
        let s = planted_prf(30, 10, 9, 4);
        assert_eq!(s.qa.len(), PRF_TOPICS * 5);
        for ex in &s.train {
            let ctx: Vec<&String> = ex.context.iter().flatten().collect();
            let pos = &ex.candidates[ex.positives().next().unwrap()];
            assert!(pos.response.iter().all(|t| !ctx.contains(&t)));
        }
    }

    #[test]
    fn tiny_config_is_valid() {
        for v in [Variant::Dmn, Variant::Prf, Variant::Kd] {
            tiny_config(v).validate().unwrap();
        }
        let s = tiny(1);
        assert!(s.train.iter().all(|e| e.validate(3).is_ok()));
    }
}
