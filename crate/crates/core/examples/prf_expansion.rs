//! Expands candidate responses with terms from their pseudo-relevance
//! feedback documents.

use dmn_rank::knowledge::{expand_response, PrfExpander};
use dmn_rank::retrieval::{IndexedField, InvertedIndex};
use dmn_rank::synthetic::planted_prf;

fn main() -> dmn_rank::Result<()> {
    let data = planted_prf(3, 0, 2, 1);
    let index = InvertedIndex::build(data.qa.iter().cloned(), IndexedField::Answer)?;
    let expander = PrfExpander::new(&index, 5, 3);
    for ex in &data.train {
        println!(
            "context  {}",
            ex.context.iter().map(|u| u.join(" ")).collect::<Vec<_>>().join(" | ")
        );
        for c in &ex.candidates {
            println!(
                "  {} {:<28} + [{}]",
                if c.label == 1 { "+" } else { "-" },
                c.response.join(" "),
                expander.expansion_terms(&c.response).join(" ")
            );
        }
    }
    let one = &data.train[0].candidates[0].response;
    println!("one-shot helper: {}", expand_response(one, &index, 5, 3).join(" "));
    Ok(())
}
