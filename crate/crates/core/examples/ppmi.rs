//! Prints the PPMI matrix of a response against an utterance, computed from
//! the QA pairs retrieved for the response.

use dmn_rank::knowledge::{ppmi_matrix, retrieve_qa_pairs, PpmiCounting};
use dmn_rank::retrieval::{Bm25Params, IndexedField, InvertedIndex};
use dmn_rank::synthetic::tiny;

fn main() -> dmn_rank::Result<()> {
    let data = tiny(2);
    let index = InvertedIndex::build(data.qa.iter().cloned(), IndexedField::Concatenated)?;
    let ex = &data.train[0];
    let utterance = ex.context.last().expect("non-empty context");
    let response = &ex.candidates[0].response;
    let pairs = retrieve_qa_pairs(response, &index, 5, &Bm25Params::default());
    println!(
        "retrieved {}",
        pairs.iter().map(|p| p.id.as_str()).collect::<Vec<_>>().join(" ")
    );

    let m = ppmi_matrix(
        response,
        utterance,
        &pairs,
        response.len(),
        utterance.len(),
        PpmiCounting::Frequency,
    );
    print!("{:>6}", "");
    for u in utterance {
        print!("{u:>7}");
    }
    println!();
    for (i, r) in response.iter().enumerate() {
        print!("{r:>6}");
        for j in 0..utterance.len() {
            print!("{:>7.3}", m.at(i, j));
        }
        println!();
    }
    Ok(())
}
