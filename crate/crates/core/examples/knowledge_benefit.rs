//! Compares BM25 with BM25-PRF, and DMN with DMN-PRF, on a corpus whose
//! positives only overlap their context after expansion.
//!
//! `cargo run --release --example knowledge_benefit`

use dmn_rank::eval::{evaluate_groups, RankedLabels};
use dmn_rank::knowledge::PrfExpander;
use dmn_rank::model::{dataset_vocab, Knowledge, Model, ModelConfig, Variant};
use dmn_rank::retrieval::{bm25_rank_responses, Bm25Params, IndexedField, InvertedIndex};
use dmn_rank::synthetic::planted_prf;
use dmn_rank::training::{train, TrainConfig};

fn main() -> dmn_rank::Result<()> {
    let data = planted_prf(200, 100, 9, 5);
    let index = InvertedIndex::build(data.qa.iter().cloned(), IndexedField::Answer)?;
    let bm25 = Bm25Params::default();
    let expander = PrfExpander::new(&index, 10, 10);

    let baseline = |exp: Option<&PrfExpander<'_>>| {
        let ranked: Vec<RankedLabels> = data
            .valid
            .iter()
            .map(|e| RankedLabels::from_ranking(e.dialog_id.clone(), &e.labels(), &bm25_rank_responses(e, exp, &bm25)))
            .collect();
        evaluate_groups(&ranked)
    };
    println!("BM25      MAP {:.4}", baseline(None).map);
    println!("BM25-PRF  MAP {:.4}", baseline(Some(&expander)).map);

    for variant in [Variant::Dmn, Variant::Prf] {
        let mut cfg = ModelConfig::for_variant(variant);
        cfg.c = 2;
        cfg.l_u = 8;
        cfg.l_r = 16;
        cfg.d = 64;
        cfg.hidden = 8;
        cfg.context_hidden = 8;
        cfg.mlp_hidden = 32;
        cfg.dropout = 0.3;
        let mut knowledge = Knowledge::with_index(&index);
        let vocab = dataset_vocab(&data.train, &cfg, &mut knowledge, 1)?;
        let model = Model::new(cfg.clone(), vocab, 3)?;
        let tr = model.prepare_all(&data.train, &mut knowledge)?;
        let va = model.prepare_all(&data.valid, &mut knowledge)?;
        let tcfg = TrainConfig {
            batch_size: 32,
            epochs: 10,
            patience: 0,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(&tr, &va, &cfg, &tcfg, model.params.clone())?;
        let r1: Vec<String> = out.log.iter().map(|r| format!("{:.2}", r.valid_r1)).collect();
        println!("{:8}  R@1 by epoch {}", variant.as_str(), r1.join(" "));
    }
    Ok(())
}
