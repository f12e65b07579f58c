//! Builds a BM25 index over a QA collection, runs a few queries and checks
//! that the saved index answers identically.

use dmn_rank::corpus::QaPair;
use dmn_rank::retrieval::{Bm25Params, IndexedField, InvertedIndex};
use dmn_rank::text::Tokenizer;

fn main() -> dmn_rank::Result<()> {
    let tok = Tokenizer::default();
    let raw = [
        (
            "q1",
            "how do I mount a usb drive",
            "use the mount command with the device path",
        ),
        (
            "q2",
            "wifi drops after suspend",
            "reload the wireless driver module after resume",
        ),
        ("q3", "usb drive not detected", "check dmesg and try another usb port"),
        (
            "q4",
            "upgrade fails with broken packages",
            "run apt fix broken install then upgrade",
        ),
    ];
    let pairs: Vec<QaPair> = raw
        .iter()
        .map(|(id, q, a)| QaPair {
            id: id.to_string(),
            question: tok.tokenize(q),
            answer: tok.tokenize(a),
        })
        .collect();
    let index = InvertedIndex::build(pairs, IndexedField::Concatenated)?;
    println!(
        "{} docs, {} terms, average length {:.2}",
        index.doc_count(),
        index.term_count(),
        index.avg_doc_len()
    );

    let params = Bm25Params::default();
    for query in ["usb drive", "broken upgrade", "printer"] {
        let hits = index.search(&params, &tok.tokenize(query), 3);
        let shown: Vec<String> = hits
            .iter()
            .map(|h| format!("{} {:.3}", index.doc_id(h.doc), h.score))
            .collect();
        println!(
            "{query:>16} -> {}",
            if shown.is_empty() {
                "(no match)".into()
            } else {
                shown.join(", ")
            }
        );
    }

    let path = std::env::temp_dir().join("dmn-example.idx");
    index.save(&path)?;
    let back = InvertedIndex::load(&path)?;
    println!("round trip identical: {}", back == index);
    std::fs::remove_file(&path).ok();
    Ok(())
}
