//! Tokenization, vocabulary construction and fixed-length encoding.
//!
//! Everything that consumes text (retrieval, knowledge extraction and the
//! matching network) shares one [`Tokenizer`] and one [`Vocabulary`], so a
//! token means the same thing in every channel.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub stopwords: BTreeSet<String>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            stopwords: BTreeSet::new(),
        }
    }
}

impl Tokenizer {
    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stopwords.extend(words.into_iter().map(Into::into));
        self
    }

    /// Reads a stopword list: UTF-8, one token per line, blank lines ignored.
    pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect())
    }

    pub fn tokenize(&self, raw: &str) -> Vec<String> {
        tokenize(raw, self)
    }
}

/// Splits on whitespace, then applies lowercasing, ASCII punctuation removal and
/// stopword filtering as configured. Tokens emptied by punctuation removal
/// are dropped.
pub fn tokenize(raw: &str, cfg: &Tokenizer) -> Vec<String> {
    raw.split_whitespace()
        .filter_map(|word| {
            let mut token: String = if cfg.strip_punctuation {
                word.chars().filter(|c| !c.is_ascii_punctuation()).collect()
            } else {
                word.to_string()
            };
            if cfg.lowercase {
                token = token.to_lowercase();
            }
            if token.is_empty() || cfg.stopwords.contains(&token) {
                None
            } else {
                Some(token)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Truncate {
    /// Keep the first `max_len` tokens.
    #[default]
    Head,
    /// Keep the last `max_len` tokens.
    Tail,
}

impl Truncate {
    pub fn as_str(&self) -> &'static str {
        match self {
            Truncate::Head => "head",
            Truncate::Tail => "tail",
        }
    }
}

impl std::str::FromStr for Truncate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(Truncate::Head),
            "tail" => Ok(Truncate::Tail),
            other => Err(Error::Config(format!("truncate must be head|tail, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    min_count: usize,
}

impl Vocabulary {
    fn reserved() -> Self {
        let id_to_token = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let token_to_id = id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            token_to_id,
            id_to_token,
            min_count: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Writes `token<TAB>id` lines sorted by id.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (id, token) in self.id_to_token.iter().enumerate() {
            writeln!(out, "{token}\t{id}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::parse(n + 1, e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            lines.push((n + 1, line));
        }
        Self::from_lines(lines.iter().map(|(n, l)| (*n, l.as_str())))
    }

    pub(crate) fn from_lines<'a>(lines: impl Iterator<Item = (usize, &'a str)>) -> Result<Self> {
        let mut id_to_token = Vec::new();
        for (line_no, line) in lines {
            let (token, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(line_no, "expected token<TAB>id"))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad id `{id}`")))?;
            if id != id_to_token.len() {
                return Err(Error::parse(line_no, format!("ids must be dense and sorted, got {id}")));
            }
            id_to_token.push(token.to_string());
        }
        if id_to_token.len() < 2 || id_to_token[PAD] != PAD_TOKEN || id_to_token[UNK] != UNK_TOKEN {
            return Err(Error::Data("vocabulary must start with <pad> and <unk>".into()));
        }
        let token_to_id: HashMap<_, _> = id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if token_to_id.len() != id_to_token.len() {
            return Err(Error::Data("vocabulary contains duplicate tokens".into()));
        }
        Ok(Self {
            token_to_id,
            id_to_token,
            min_count: 1,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Counts tokens over all streams and keeps those seen at least `min_count`
/// times. Ids follow descending frequency, ties broken lexicographically, so
/// the result does not depend on stream order.
pub fn build_vocab<I, S, T>(token_streams: I, min_count: usize) -> Vocabulary
where
    I: IntoIterator<Item = S>,
    S: IntoIterator<Item = T>,
    T: AsRef<str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for stream in token_streams {
        for token in stream {
            let token = token.as_ref();
            if token == PAD_TOKEN || token == UNK_TOKEN {
                continue;
            }
            *counts.entry(token.to_string()).or_insert(0) += 1;
        }
    }
    let min_count = min_count.max(1);
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut vocab = Vocabulary::reserved();
    vocab.min_count = min_count;
    for (token, _) in kept {
        vocab.token_to_id.insert(token.clone(), vocab.id_to_token.len());
        vocab.id_to_token.push(token);
    }
    vocab
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedText {
    pub ids: Vec<usize>,
    pub true_len: usize,
}

impl EncodedText {
    pub fn padding(max_len: usize) -> Self {
        Self {
            ids: vec![PAD; max_len],
            true_len: 0,
        }
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Ids before the padding.
    pub fn prefix(&self) -> &[usize] {
        &self.ids[..self.true_len]
    }

    pub fn decode<'v>(&self, vocab: &'v Vocabulary) -> Vec<&'v str> {
        self.prefix()
            .iter()
            .map(|&id| vocab.token(id).unwrap_or(UNK_TOKEN))
            .collect()
    }
}

pub fn encode<T: AsRef<str>>(tokens: &[T], vocab: &Vocabulary, max_len: usize) -> EncodedText {
    encode_with(tokens, vocab, max_len, Truncate::Head)
}

pub fn encode_with<T: AsRef<str>>(tokens: &[T], vocab: &Vocabulary, max_len: usize, truncate: Truncate) -> EncodedText {
    let kept = if tokens.len() <= max_len {
        tokens
    } else {
        match truncate {
            Truncate::Head => &tokens[..max_len],
            Truncate::Tail => &tokens[tokens.len() - max_len..],
        }
    };
    let mut ids: Vec<usize> = kept.iter().map(|t| vocab.id(t.as_ref())).collect();
    let true_len = ids.len();
    ids.resize(max_len, PAD);
    EncodedText { ids, true_len }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> Tokenizer {
        Tokenizer::default()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Hello, World!", &cfg()), vec!["hello", "world"]);
        assert!(tokenize("", &cfg()).is_empty());
        let stop = cfg().with_stopwords(["the"]);
        assert_eq!(tokenize("the cat sat", &stop), vec!["cat", "sat"]);
    }

    #[test]
    fn tokenize_keeps_punctuation_when_asked() {
        let t = Tokenizer {
            lowercase: false,
            strip_punctuation: false,
            stopwords: BTreeSet::new(),
        };
        assert_eq!(tokenize("Hi, there", &t), vec!["Hi,", "there"]);
        assert!(tokenize("!!! ...", &cfg()).is_empty());
    }

    #[test]
    fn vocab_threshold_and_order() {
        let v = build_vocab([vec!["a", "a", "b"]], 2);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a"]);

        let v = build_vocab([vec!["a", "b"], vec!["b"]], 1);
        assert!(v.id("b") < v.id("a"));

        let v = build_vocab(Vec::<Vec<String>>::new(), 1);
        assert_eq!(v.len(), 2);

        // lexicographic tie break
        let v = build_vocab([vec!["z", "y", "x"]], 1);
        assert_eq!(v.tokens()[2..], ["x", "y", "z"]);
    }

    #[test]
    fn encode_examples() {
        let v = build_vocab([vec!["a", "a", "a", "b", "b", "c"]], 1);
        assert_eq!((v.id("a"), v.id("b"), v.id("c")), (2, 3, 4));

        let e = encode(&["a"], &v, 3);
        assert_eq!(e.ids, vec![2, 0, 0]);
        assert_eq!(e.true_len, 1);

        let e = encode(&["z"], &v, 1);
        assert_eq!(e.ids, vec![UNK]);
        assert_eq!(e.true_len, 1);

        let e = encode(&["a", "b", "c"], &v, 2);
        assert_eq!(e.ids, vec![2, 3]);

        let e = encode_with(&["a", "b", "c"], &v, 2, Truncate::Tail);
        assert_eq!(e.ids, vec![3, 4]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = build_vocab([vec!["b", "a", "a"]], 1);
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "<pad>\t0\n<unk>\t1\na\t2\nb\t3\n"
        );
        let back = Vocabulary::read_from(&buf[..]).unwrap();
        assert_eq!(back.tokens(), v.tokens());
        assert!(Vocabulary::read_from(&b"a\t0\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn tokens_are_clean(raw in "\\PC{0,40}") {
            for t in tokenize(&raw, &cfg()) {
                prop_assert!(!t.chars().any(char::is_whitespace));
                prop_assert!(!t.chars().any(|c| c.is_ascii_punctuation()));
                prop_assert!(!t.is_empty());
            }
            prop_assert_eq!(tokenize(&raw, &cfg()), tokenize(&raw, &cfg()));
        }

        #[test]
        fn encode_round_trips(words in proptest::collection::vec("[a-e]{1,3}", 0..8), extra in 0usize..4) {
            let v = build_vocab([words.clone()], 1);
            let e = encode(&words, &v, words.len() + extra.max(1));
            prop_assert_eq!(e.decode(&v), words.iter().map(String::as_str).collect::<Vec<_>>());
            for (k, id) in e.ids.iter().enumerate() {
                prop_assert_eq!(*id == PAD, k >= e.true_len);
            }
        }

        #[test]
        fn vocab_is_order_independent(
            mut streams in proptest::collection::vec(proptest::collection::vec("[a-f]", 0..6), 0..6),
            min_count in 1usize..3,
        ) {
            let a = build_vocab(streams.clone(), min_count);
            streams.reverse();
            let b = build_vocab(streams, min_count);
            prop_assert_eq!(a, b);
        }
    }
}
