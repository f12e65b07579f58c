//! Inverted index with BM25 scoring over the external QA collection, plus
//! the BM25 / BM25-PRF response rankers used as baselines.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::corpus::{DialogExample, QaPair};
use crate::error::{Error, Result};
use crate::knowledge::PrfExpander;

const INDEX_MAGIC: &str = "dmn-index";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    /// `ln((n - df + 0.5) / (df + 0.5) + 1)`, non-negative for any df.
    pub fn idf(&self, doc_count: usize, df: usize) -> f64 {
        let (n, df) = (doc_count as f64, df as f64);
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    pub fn term_weight(&self, idf: f64, tf: usize, doc_len: usize, avg_len: f64) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - self.b + self.b * doc_len as f64 / avg_len;
        idf * (tf * (self.k1 + 1.0)) / (tf + self.k1 * norm)
    }
}

/// Which part of a QA pair a document is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndexedField {
    Question,
    Answer,
    Concatenated,
    /// Plain documents that are not QA pairs (e.g. a response pool).
    Text,
}

impl IndexedField {
    pub fn as_str(&self) -> &'static str {
        match self {
            IndexedField::Question => "question",
            IndexedField::Answer => "answer",
            IndexedField::Concatenated => "concatenated",
            IndexedField::Text => "text",
        }
    }

    pub fn select(&self, pair: &QaPair) -> Vec<String> {
        match self {
            IndexedField::Question => pair.question.clone(),
            IndexedField::Answer | IndexedField::Text => pair.answer.clone(),
            IndexedField::Concatenated => {
                let mut v = pair.question.clone();
                v.extend(pair.answer.iter().cloned());
                v
            }
        }
    }
}

impl std::str::FromStr for IndexedField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "question" => IndexedField::Question,
            "answer" => IndexedField::Answer,
            "concatenated" => IndexedField::Concatenated,
            "text" => IndexedField::Text,
            other => return Err(Error::Config(format!("unknown index field `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    /// Internal document number; see [`InvertedIndex::doc_id`].
    pub doc: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    field: IndexedField,
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
    docs: Vec<Vec<String>>,
    pairs: Vec<QaPair>,
    lengths: Vec<usize>,
    postings: HashMap<String, Vec<Posting>>,
    avg_doc_len: f64,
}

impl InvertedIndex {
    fn empty(field: IndexedField) -> Self {
        Self {
            field,
            ids: Vec::new(),
            lookup: HashMap::new(),
            docs: Vec::new(),
            pairs: Vec::new(),
            lengths: Vec::new(),
            postings: HashMap::new(),
            avg_doc_len: 0.0,
        }
    }

    /// Indexes the chosen field of each pair; the pairs themselves are kept
    /// so that retrieval can hand back whole QA pairs.
    pub fn build<I>(pairs: I, field: IndexedField) -> Result<Self>
    where
        I: IntoIterator<Item = QaPair>,
    {
        let mut index = Self::empty(field);
        for pair in pairs {
            let tokens = field.select(&pair);
            index.push(pair.id.clone(), tokens)?;
            index.pairs.push(pair);
        }
        index.finish();
        Ok(index)
    }

    /// Indexes plain token documents.
    pub fn from_docs<I, S>(docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<String>)>,
        S: Into<String>,
    {
        let mut index = Self::empty(IndexedField::Text);
        for (id, tokens) in docs {
            index.push(id.into(), tokens)?;
        }
        index.finish();
        Ok(index)
    }

    fn push(&mut self, id: String, tokens: Vec<String>) -> Result<()> {
        if self.lookup.contains_key(&id) {
            return Err(Error::DuplicateDoc(id));
        }
        let doc = self.ids.len();
        let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
        for t in &tokens {
            *tf.entry(t.as_str()).or_insert(0) += 1;
        }
        for (term, count) in tf {
            self.postings.entry(term.to_string()).or_default().push(Posting {
                doc: doc as u32,
                tf: count,
            });
        }
        self.lookup.insert(id.clone(), doc);
        self.ids.push(id);
        self.lengths.push(tokens.len());
        self.docs.push(tokens);
        Ok(())
    }

    fn finish(&mut self) {
        self.avg_doc_len = if self.lengths.is_empty() {
            0.0
        } else {
            self.lengths.iter().sum::<usize>() as f64 / self.lengths.len() as f64
        };
    }

    pub fn field(&self) -> IndexedField {
        self.field
    }

    pub fn doc_count(&self) -> usize {
        self.ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_id(&self, doc: usize) -> &str {
        &self.ids[doc]
    }

    pub fn doc_number(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn doc_len(&self, doc: usize) -> usize {
        self.lengths[doc]
    }

    /// Tokens of the indexed field of a document.
    pub fn doc_tokens(&self, doc: usize) -> &[String] {
        &self.docs[doc]
    }

    /// The stored QA pair, when the index was built from pairs.
    pub fn pair(&self, doc: usize) -> Option<&QaPair> {
        self.pairs.get(doc)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    fn tf(&self, term: &str, doc: usize) -> usize {
        let list = self.postings(term);
        list.binary_search_by_key(&(doc as u32), |p| p.doc)
            .map(|i| list[i].tf as usize)
            .unwrap_or(0)
    }

    pub fn bm25_score(&self, params: &Bm25Params, query: &[String], doc_id: &str) -> Result<f64> {
        let doc = self
            .doc_number(doc_id)
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))?;
        Ok(self.score_doc(params, query, doc))
    }

    pub(crate) fn score_doc(&self, params: &Bm25Params, query: &[String], doc: usize) -> f64 {
        let mut score = 0.0;
        for term in query {
            let tf = self.tf(term, doc);
            if tf == 0 {
                continue;
            }
            let idf = params.idf(self.doc_count(), self.postings(term).len());
            score += params.term_weight(idf, tf, self.lengths[doc], self.avg_doc_len);
        }
        score
    }

    /// Top-`k` documents sharing at least one term with the query, by
    /// descending BM25 and then ascending document id.
    pub fn search(&self, params: &Bm25Params, query: &[String], k: usize) -> Vec<Hit> {
        let mut scores: HashMap<usize, f64> = HashMap::new();
        // Accumulate in query order so each document's sum matches score_doc.
        for term in query {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = params.idf(self.doc_count(), list.len());
            for p in list {
                let doc = p.doc as usize;
                let w = params.term_weight(idf, p.tf as usize, self.lengths[doc], self.avg_doc_len);
                *scores.entry(doc).or_insert(0.0) += w;
            }
        }
        let mut hits: Vec<Hit> = scores.into_iter().map(|(doc, score)| Hit { doc, score }).collect();
        hits.sort_unstable_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| self.ids[a.doc].cmp(&self.ids[b.doc]))
        });
        hits.truncate(k);
        hits
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{INDEX_MAGIC}\t{INDEX_VERSION}")?;
        writeln!(out, "field\t{}", self.field.as_str())?;
        writeln!(
            out,
            "docs\t{}\t{}",
            self.ids.len(),
            if self.pairs.is_empty() { 0 } else { 1 }
        )?;
        for (doc, id) in self.ids.iter().enumerate() {
            write!(out, "{id}\t{}\t{}", self.lengths[doc], self.docs[doc].join(" "))?;
            if let Some(pair) = self.pairs.get(doc) {
                write!(out, "\t{}\t{}", pair.question.join(" "), pair.answer.join(" "))?;
            }
            writeln!(out)?;
        }
        let terms: BTreeMap<&String, &Vec<Posting>> = self.postings.iter().collect();
        writeln!(out, "terms\t{}", terms.len())?;
        for (term, list) in terms {
            write!(out, "{term}\t{}\t", list.len())?;
            for (i, p) in list.iter().enumerate() {
                if i > 0 {
                    write!(out, " ")?;
                }
                write!(out, "{}:{}", p.doc, p.tf)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input
            .lines()
            .enumerate()
            .map(|(n, l)| l.map(|l| (n + 1, l)).map_err(|e| Error::parse(n + 1, e.to_string())));
        let mut next = |what: &str| -> Result<(usize, String)> {
            lines
                .next()
                .unwrap_or_else(|| Err(Error::Data(format!("index truncated before {what}"))))
        };

        let (n, header) = next("header")?;
        if header != format!("{INDEX_MAGIC}\t{INDEX_VERSION}") {
            return Err(Error::parse(n, format!("unsupported index header `{header}`")));
        }
        let (n, field) = next("field")?;
        let field: IndexedField = field
            .strip_prefix("field\t")
            .ok_or_else(|| Error::parse(n, "expected field line"))?
            .parse()?;
        let (n, docs) = next("docs")?;
        let parts: Vec<&str> = docs.split('\t').collect();
        if parts.len() != 3 || parts[0] != "docs" {
            return Err(Error::parse(n, "expected docs line"));
        }
        let doc_count: usize = parts[1].parse().map_err(|_| Error::parse(n, "bad doc count"))?;
        let has_pairs = parts[2] == "1";

        let mut index = Self::empty(field);
        let split = |s: &str| -> Vec<String> { s.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect() };
        for _ in 0..doc_count {
            let (n, line) = next("document")?;
            let cols: Vec<&str> = line.split('\t').collect();
            let want = if has_pairs { 5 } else { 3 };
            if cols.len() != want {
                return Err(Error::parse(n, format!("expected {want} columns")));
            }
            let len: usize = cols[1].parse().map_err(|_| Error::parse(n, "bad length"))?;
            let tokens = split(cols[2]);
            if tokens.len() != len {
                return Err(Error::parse(n, "length does not match tokens"));
            }
            let id = cols[0].to_string();
            if index.lookup.insert(id.clone(), index.ids.len()).is_some() {
                return Err(Error::DuplicateDoc(id));
            }
            if has_pairs {
                index.pairs.push(QaPair {
                    id: id.clone(),
                    question: split(cols[3]),
                    answer: split(cols[4]),
                });
            }
            index.ids.push(id);
            index.lengths.push(len);
            index.docs.push(tokens);
        }

        let (n, terms) = next("terms")?;
        let term_count: usize = terms
            .strip_prefix("terms\t")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(n, "expected terms line"))?;
        for _ in 0..term_count {
            let (n, line) = next("postings")?;
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(n, "expected term<TAB>df<TAB>postings"));
            }
            let df: usize = cols[1].parse().map_err(|_| Error::parse(n, "bad df"))?;
            let mut list = Vec::with_capacity(df);
            for entry in cols[2].split(' ') {
                let (d, tf) = entry
                    .split_once(':')
                    .ok_or_else(|| Error::parse(n, format!("bad posting `{entry}`")))?;
                let doc: u32 = d.parse().map_err(|_| Error::parse(n, "bad doc number"))?;
                let tf: u32 = tf.parse().map_err(|_| Error::parse(n, "bad tf"))?;
                if doc as usize >= doc_count {
                    return Err(Error::parse(n, "posting refers to unknown doc"));
                }
                list.push(Posting { doc, tf });
            }
            if list.len() != df {
                return Err(Error::parse(n, "df does not match posting count"));
            }
            index.postings.insert(cols[0].to_string(), list);
        }
        index.finish();
        Ok(index)
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

/// Scores each candidate as a document of a micro-collection made of the
/// candidate set, with `query` as the query. Returns `(candidate, score)`
/// by descending score, ties by candidate index.
pub fn rank_candidates(query: &[String], candidates: &[Vec<String>], params: &Bm25Params) -> Vec<(usize, f64)> {
    let docs = candidates.iter().enumerate().map(|(i, c)| (i.to_string(), c.clone()));
    // Candidate ids are their positions, so they are unique.
    let index = InvertedIndex::from_docs(docs).expect("positional ids are unique");
    let mut ranked: Vec<(usize, f64)> = (0..candidates.len())
        .map(|i| (i, index.score_doc(params, query, i)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// BM25 baseline: the concatenated context is the query. With an expander
/// this becomes BM25-PRF, matching the context against expanded responses.
pub fn bm25_rank_responses(
    example: &DialogExample,
    expander: Option<&PrfExpander<'_>>,
    params: &Bm25Params,
) -> Vec<(usize, f64)> {
    let query: Vec<String> = example.context.iter().flatten().cloned().collect();
    let candidates: Vec<Vec<String>> = example
        .candidates
        .iter()
        .map(|c| match expander {
            Some(e) => e.expand(&c.response),
            None => c.response.clone(),
        })
        .collect();
    rank_candidates(&query, &candidates, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn two_docs() -> InvertedIndex {
        InvertedIndex::from_docs([("d1", toks("a b")), ("d2", toks("b"))]).unwrap()
    }

    #[test]
    fn build_small_index() {
        let idx = two_docs();
        assert_eq!(idx.postings("a"), &[Posting { doc: 0, tf: 1 }]);
        assert_eq!(
            idx.postings("b"),
            &[Posting { doc: 0, tf: 1 }, Posting { doc: 1, tf: 1 }]
        );
        assert_eq!(idx.avg_doc_len(), 1.5);

        let empty = InvertedIndex::from_docs(Vec::<(String, Vec<String>)>::new()).unwrap();
        assert_eq!(empty.doc_count(), 0);
        assert!(empty.search(&Bm25Params::default(), &toks("a"), 3).is_empty());

        let dup = InvertedIndex::from_docs([("x", toks("a")), ("x", toks("b"))]);
        assert!(matches!(dup, Err(Error::DuplicateDoc(_))));
    }

    #[test]
    fn bm25_single_doc_value() {
        let idx = InvertedIndex::from_docs([("d", toks("a"))]).unwrap();
        let p = Bm25Params::default();
        let s = idx.bm25_score(&p, &toks("a"), "d").unwrap();
        // idf = ln(0.5/1.5 + 1) = ln(4/3); tf part = 2.2 / 2.2 = 1
        assert!((s - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((s - 0.2877).abs() < 1e-4);
        assert_eq!(idx.bm25_score(&p, &[], "d").unwrap(), 0.0);
        assert_eq!(idx.bm25_score(&p, &toks("zzz"), "d").unwrap(), 0.0);
        assert!(matches!(
            idx.bm25_score(&p, &toks("a"), "nope"),
            Err(Error::UnknownDoc(_))
        ));
    }

    #[test]
    fn repeated_query_terms_count_per_occurrence() {
        let idx = two_docs();
        let p = Bm25Params::default();
        let once = idx.bm25_score(&p, &toks("a"), "d1").unwrap();
        let twice = idx.bm25_score(&p, &toks("a a"), "d1").unwrap();
        assert_eq!(twice, once + once);
    }

    #[test]
    fn search_limits_and_ties() {
        let idx = InvertedIndex::from_docs([("c", toks("x y")), ("a", toks("x y")), ("b", toks("x q"))]).unwrap();
        let p = Bm25Params::default();
        let hits = idx.search(&p, &toks("x"), 10);
        assert_eq!(hits.len(), 3);
        let ids: Vec<&str> = hits.iter().map(|h| idx.doc_id(h.doc)).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(idx.search(&p, &toks("oov"), 10).is_empty());
        assert_eq!(idx.search(&p, &toks("x"), 1).len(), 1);
    }

    #[test]
    fn rank_candidates_cases() {
        let p = Bm25Params::default();
        let q = toks("how to fix wifi");
        let ranked = rank_candidates(&q, &[toks("cake recipe"), toks("how to fix wifi")], &p);
        assert_eq!(ranked[0].0, 1);

        let ranked = rank_candidates(&q, &[toks("a"), toks("b"), toks("c")], &p);
        assert_eq!(ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(ranked.iter().all(|r| r.1 == 0.0));
    }

    #[test]
    fn index_round_trip_with_pairs() {
        let pairs = vec![
            QaPair {
                id: "q1".into(),
                question: toks("wifi down"),
                answer: toks("restart router router"),
            },
            QaPair {
                id: "q2".into(),
                question: toks("excel crash"),
                answer: toks("update office"),
            },
        ];
        let idx = InvertedIndex::build(pairs, IndexedField::Concatenated).unwrap();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        let back = InvertedIndex::read_from(&buf[..]).unwrap();
        assert_eq!(back, idx);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }
}
