//! External knowledge: pseudo-relevance-feedback expansion of candidate
//! responses, and PPMI term-correspondence matrices distilled from
//! retrieved QA pairs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::QaPair;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::retrieval::{Bm25Params, InvertedIndex};
use crate::text::{PAD_TOKEN, UNK_TOKEN};

/// Maximum-likelihood unigram model over feedback documents.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackModel {
    pub term_probs: BTreeMap<String, f64>,
    pub source_doc_ids: Vec<String>,
}

impl FeedbackModel {
    /// The `w` most probable terms, ties broken lexicographically.
    pub fn top_terms(&self, w: usize) -> Vec<String> {
        let mut terms: Vec<(&String, f64)> = self.term_probs.iter().map(|(t, p)| (t, *p)).collect();
        terms.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        terms.into_iter().take(w).map(|(t, _)| t.clone()).collect()
    }
}

pub fn feedback_language_model<S: AsRef<str>>(docs: &[(S, &[String])]) -> Result<FeedbackModel> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for (_, tokens) in docs {
        for t in tokens.iter() {
            *counts.entry(t.clone()).or_insert(0) += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyFeedback);
    }
    Ok(FeedbackModel {
        term_probs: counts.into_iter().map(|(t, c)| (t, c as f64 / total as f64)).collect(),
        source_doc_ids: docs.iter().map(|(id, _)| id.as_ref().to_string()).collect(),
    })
}

/// Pseudo-relevance-feedback response expansion.
#[derive(Debug, Clone, Copy)]
pub struct PrfExpander<'a> {
    pub index: &'a InvertedIndex,
    /// Feedback depth: number of retrieved documents.
    pub depth: usize,
    /// Number of expansion terms appended.
    pub terms: usize,
    pub bm25: Bm25Params,
}

impl<'a> PrfExpander<'a> {
    pub fn new(index: &'a InvertedIndex, depth: usize, terms: usize) -> Self {
        Self {
            index,
            depth,
            terms,
            bm25: Bm25Params::default(),
        }
    }

    /// Terms to append to `response`; empty when nothing is retrieved.
    pub fn expansion_terms(&self, response: &[String]) -> Vec<String> {
        if self.terms == 0 || self.depth == 0 {
            return Vec::new();
        }
        let hits = self.index.search(&self.bm25, response, self.depth);
        let docs: Vec<(&str, &[String])> = hits
            .iter()
            .map(|h| (self.index.doc_id(h.doc), self.index.doc_tokens(h.doc)))
            .collect();
        match feedback_language_model(&docs) {
            Ok(model) => model.top_terms(self.terms),
            Err(_) => Vec::new(),
        }
    }

    pub fn expand(&self, response: &[String]) -> Vec<String> {
        expand_with(response, &self.expansion_terms(response))
    }
}

pub fn expand_with(response: &[String], terms: &[String]) -> Vec<String> {
    let mut out = response.to_vec();
    out.extend(terms.iter().cloned());
    out
}

/// Retrieves the top `depth` feedback documents for `response` and appends
/// the `terms` most frequent terms of their language model.
pub fn expand_response(response: &[String], index: &InvertedIndex, depth: usize, terms: usize) -> Vec<String> {
    PrfExpander::new(index, depth, terms).expand(response)
}

/// Top-`depth` QA pairs for `response` by BM25. The index must have been
/// built from QA pairs.
pub fn retrieve_qa_pairs<'a>(
    response: &[String],
    index: &'a InvertedIndex,
    depth: usize,
    bm25: &Bm25Params,
) -> Vec<&'a QaPair> {
    if depth == 0 {
        return Vec::new();
    }
    index
        .search(bm25, response, depth)
        .into_iter()
        .filter_map(|h| index.pair(h.doc))
        .collect()
}

/// How term occurrences inside a QA pair are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PpmiCounting {
    /// Bag-of-words frequencies.
    #[default]
    Frequency,
    /// Set membership: each distinct term counts once per pair.
    Binary,
}

impl PpmiCounting {
    pub fn as_str(&self) -> &'static str {
        match self {
            PpmiCounting::Frequency => "frequency",
            PpmiCounting::Binary => "binary",
        }
    }
}

impl std::str::FromStr for PpmiCounting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frequency" => Ok(PpmiCounting::Frequency),
            "binary" => Ok(PpmiCounting::Binary),
            other => Err(Error::Config(format!(
                "ppmi_counting must be frequency|binary, got `{other}`"
            ))),
        }
    }
}

type Bag<'a> = HashMap<&'a str, f64>;

fn bag(tokens: &[String], counting: PpmiCounting) -> Bag<'_> {
    let mut m: HashMap<&str, f64> = HashMap::new();
    match counting {
        PpmiCounting::Frequency => {
            for t in tokens {
                *m.entry(t.as_str()).or_insert(0.0) += 1.0;
            }
        }
        PpmiCounting::Binary => {
            for t in tokens.iter().collect::<HashSet<_>>() {
                m.insert(t.as_str(), 1.0);
            }
        }
    }
    m
}

/// Co-occurrence statistics of answer terms (response side) against
/// question terms (utterance side) over a retrieved QA pair set.
///
/// The joint probability of `(a, q)` is the cross-product count
/// `sum_p count(a in A_p) * count(q in Q_p)` normalized by
/// `sum_p |A_p| * |Q_p|`; marginals are pooled unigram probabilities over
/// all answers and all questions respectively.
#[derive(Debug, Clone)]
pub struct PpmiStats<'a> {
    /// `(answer bag, question bag)` per retrieved pair.
    per_pair: Vec<(Bag<'a>, Bag<'a>)>,
    answer_marginals: HashMap<&'a str, f64>,
    question_marginals: HashMap<&'a str, f64>,
    answer_total: f64,
    question_total: f64,
    joint_total: f64,
}

impl<'a> PpmiStats<'a> {
    pub fn new(pairs: &[&'a QaPair], counting: PpmiCounting) -> Self {
        let mut stats = Self {
            per_pair: Vec::new(),
            answer_marginals: HashMap::new(),
            question_marginals: HashMap::new(),
            answer_total: 0.0,
            question_total: 0.0,
            joint_total: 0.0,
        };
        for pair in pairs.iter().copied() {
            let a = bag(&pair.answer, counting);
            let q = bag(&pair.question, counting);
            let a_len: f64 = a.values().sum();
            let q_len: f64 = q.values().sum();
            for (t, c) in &a {
                *stats.answer_marginals.entry(t).or_insert(0.0) += c;
            }
            for (t, c) in &q {
                *stats.question_marginals.entry(t).or_insert(0.0) += c;
            }
            stats.answer_total += a_len;
            stats.question_total += q_len;
            stats.joint_total += a_len * q_len;
            stats.per_pair.push((a, q));
        }
        stats
    }

    pub fn pair_count(&self, answer_term: &str, question_term: &str) -> f64 {
        self.per_pair
            .iter()
            .map(|(a, q)| a.get(answer_term).copied().unwrap_or(0.0) * q.get(question_term).copied().unwrap_or(0.0))
            .sum()
    }

    pub fn answer_marginal(&self, term: &str) -> f64 {
        self.answer_marginals.get(term).copied().unwrap_or(0.0)
    }

    pub fn question_marginal(&self, term: &str) -> f64 {
        self.question_marginals.get(term).copied().unwrap_or(0.0)
    }

    /// `max(0, ln(p_joint / (p(a|A) p(q|Q))))`, zero when any factor is zero
    /// or either term is a reserved token.
    pub fn ppmi(&self, response_term: &str, utterance_term: &str) -> f64 {
        if is_reserved(response_term) || is_reserved(utterance_term) || self.joint_total == 0.0 {
            return 0.0;
        }
        let pa = self.answer_marginal(response_term) / self.answer_total;
        let pq = self.question_marginal(utterance_term) / self.question_total;
        let joint = self.pair_count(response_term, utterance_term) / self.joint_total;
        if pa == 0.0 || pq == 0.0 || joint == 0.0 {
            return 0.0;
        }
        (joint / (pa * pq)).ln().max(0.0)
    }
}

fn is_reserved(t: &str) -> bool {
    t == PAD_TOKEN || t == UNK_TOKEN
}

/// `l_r x l_u` PPMI matrix; rows follow response positions and columns
/// utterance positions. Positions past either sequence are zero.
pub fn ppmi_matrix<S: AsRef<str>>(
    response: &[S],
    utterance: &[S],
    retrieved: &[&QaPair],
    l_r: usize,
    l_u: usize,
    counting: PpmiCounting,
) -> Tensor {
    let mut m = Tensor::zeros(&[l_r, l_u]);
    if retrieved.is_empty() {
        return m;
    }
    let stats = PpmiStats::new(retrieved, counting);
    ppmi_fill(&stats, response, utterance, &mut m);
    m
}

pub(crate) fn ppmi_fill<S: AsRef<str>>(stats: &PpmiStats<'_>, response: &[S], utterance: &[S], m: &mut Tensor) {
    let (l_r, l_u) = (m.rows(), m.cols());
    let mut memo: HashMap<(&str, &str), f64> = HashMap::new();
    for (i, r) in response.iter().take(l_r).enumerate() {
        for (j, u) in utterance.iter().take(l_u).enumerate() {
            let key = (r.as_ref(), u.as_ref());
            let v = *memo.entry(key).or_insert_with(|| stats.ppmi(key.0, key.1));
            m.set(i, j, v);
        }
    }
}

/// Content-addressed store of knowledge lookups, persisted as TSV
/// `key<TAB>payload`, sorted by key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeCache {
    entries: BTreeMap<String, String>,
}

impl KnowledgeCache {
    pub fn key(kind: &str, params: &str, tokens: &[String]) -> String {
        let mut h = Sha256::new();
        h.update(kind.as_bytes());
        h.update([0]);
        h.update(params.as_bytes());
        h.update([0]);
        h.update(tokens.join(" ").as_bytes());
        let digest = h.finalize();
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn insert(&mut self, key: String, payload: String) {
        self.entries.insert(key, payload);
    }

    /// Cached token list for `key`, computing and storing it on a miss.
    pub fn tokens_or_insert_with(&mut self, key: String, f: impl FnOnce() -> Vec<String>) -> Vec<String> {
        if let Some(p) = self.entries.get(&key) {
            return p.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect();
        }
        let v = f();
        self.entries.insert(key, v.join(" "));
        v
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(out, "{k}\t{v}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::parse(n + 1, e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(n + 1, "expected key<TAB>payload"))?;
            entries.insert(k.to_string(), v.to_string());
        }
        Ok(Self { entries })
    }

    /// Missing file yields an empty cache.
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::File::open(path) {
            Ok(f) => Self::read_from(std::io::BufReader::new(f)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn qa(id: &str, q: &str, a: &str) -> QaPair {
        QaPair {
            id: id.into(),
            question: toks(q),
            answer: toks(a),
        }
    }

    #[test]
    fn feedback_model_counts() {
        let d = toks("a a b");
        let m = feedback_language_model(&[("x", &d[..])]).unwrap();
        assert_eq!(m.term_probs["a"], 2.0 / 3.0);
        assert_eq!(m.term_probs["b"], 1.0 / 3.0);

        let (a, b) = (toks("a"), toks("b"));
        let m = feedback_language_model(&[("1", &a[..]), ("2", &b[..])]).unwrap();
        assert_eq!(m.term_probs["a"], 0.5);
        assert_eq!(m.term_probs["b"], 0.5);
        assert!((m.term_probs.values().sum::<f64>() - 1.0).abs() < 1e-9);

        let empty: Vec<String> = Vec::new();
        assert!(matches!(
            feedback_language_model(&[("e", &empty[..])]),
            Err(Error::EmptyFeedback)
        ));
    }

    #[test]
    fn expansion_appends_most_frequent_terms() {
        let idx = InvertedIndex::from_docs([("d", toks("excel settings settings"))]).unwrap();
        let r = toks("open excel");
        assert_eq!(expand_response(&r, &idx, 10, 1), toks("open excel settings"));
        assert_eq!(expand_response(&r, &idx, 10, 0), r);
        assert_eq!(
            expand_response(&toks("nothing matches"), &idx, 10, 5),
            toks("nothing matches")
        );
        // only 2 distinct terms available
        assert_eq!(expand_response(&r, &idx, 10, 10).len(), r.len() + 2);
    }

    #[test]
    fn ppmi_toy_values() {
        let pairs = [qa("1", "x", "y"), qa("2", "z", "w")];
        let refs: Vec<&QaPair> = pairs.iter().collect();
        let m = ppmi_matrix(&toks("y w"), &toks("x z"), &refs, 3, 3, PpmiCounting::Frequency);
        assert!((m.at(0, 0) - 2f64.ln()).abs() < 1e-15);
        // y and z never co-occur
        assert_eq!(m.at(0, 1), 0.0);
        assert!((m.at(1, 1) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(m.at(2, 2), 0.0);

        let m = ppmi_matrix(&toks("y"), &toks("x"), &[], 2, 4, PpmiCounting::Frequency);
        assert_eq!(m.shape(), &[2, 4]);
        assert!(m.data().iter().all(|&v| v == 0.0));

        let m = ppmi_matrix(&["<unk>", "y"], &["x", "<pad>"], &refs, 2, 2, PpmiCounting::Frequency);
        assert_eq!(m.data(), &[0.0, 0.0, 2f64.ln(), 0.0]);
    }

    #[test]
    fn binary_counting_ignores_repeats() {
        let pairs = [qa("1", "x x", "y y y"), qa("2", "z", "w")];
        let refs: Vec<&QaPair> = pairs.iter().collect();
        let bin = ppmi_matrix(&toks("y"), &toks("x"), &refs, 1, 1, PpmiCounting::Binary);
        assert!((bin.at(0, 0) - 2f64.ln()).abs() < 1e-15);
        let freq = ppmi_matrix(&toks("y"), &toks("x"), &refs, 1, 1, PpmiCounting::Frequency);
        // joint 6/7, p(y)=3/4, p(x)=2/3
        assert!((freq.at(0, 0) - ((6.0 / 7.0) / (0.75 * 2.0 / 3.0f64)).ln()).abs() < 1e-12);
    }

    #[test]
    fn retrieve_pairs() {
        let idx = InvertedIndex::build(
            vec![qa("1", "wifi broken", "restart router")],
            crate::retrieval::IndexedField::Concatenated,
        )
        .unwrap();
        let got = retrieve_qa_pairs(&toks("router"), &idx, 1, &Bm25Params::default());
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, "1");

        let empty = InvertedIndex::build(Vec::new(), crate::retrieval::IndexedField::Concatenated).unwrap();
        assert!(retrieve_qa_pairs(&toks("router"), &empty, 10, &Bm25Params::default()).is_empty());
    }

    #[test]
    fn cache_round_trip() {
        let mut c = KnowledgeCache::default();
        let key = KnowledgeCache::key("prf", "10/10", &toks("a b"));
        assert_eq!(key.len(), 32);
        let v = c.tokens_or_insert_with(key.clone(), || toks("x y"));
        assert_eq!(v, toks("x y"));
        let v = c.tokens_or_insert_with(key, || panic!("should hit"));
        assert_eq!(v, toks("x y"));
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(KnowledgeCache::read_from(&buf[..]).unwrap(), c);
    }
}
