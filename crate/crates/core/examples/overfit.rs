//! Trains a small matching network on a synthetic lexical-cue corpus and
//! prints the per-epoch log.
//!
//! `cargo run --release --example overfit`

use dmn_rank::model::{dataset_vocab, Knowledge, Model, ModelConfig, Variant};
use dmn_rank::synthetic::lexical_cue;
use dmn_rank::training::{train_with, EpochLog, TrainConfig};

fn main() -> dmn_rank::Result<()> {
    let data = lexical_cue(200, 100, 9, 7);

    let mut cfg = ModelConfig::for_variant(Variant::Dmn);
    cfg.c = 3;
    cfg.l_u = 8;
    cfg.l_r = 8;
    cfg.d = 64;
    cfg.hidden = 8;
    cfg.context_hidden = 8;
    cfg.kernels = 8;
    cfg.mlp_hidden = 32;

    let mut knowledge = Knowledge::none();
    let vocab = dataset_vocab(&data.train, &cfg, &mut knowledge, 1)?;
    let model = Model::new(cfg.clone(), vocab, 11)?;
    let train = model.prepare_all(&data.train, &mut knowledge)?;
    let valid = model.prepare_all(&data.valid, &mut knowledge)?;
    let tcfg = TrainConfig {
        batch_size: 32,
        epochs: 30,
        seed: 11,
        ..TrainConfig::default()
    };
    println!("{}", EpochLog::TSV_HEADER);
    let out = train_with(&train, &valid, &cfg, &tcfg, model.params.clone(), |row| {
        println!("{}", row.tsv_row())
    })?;
    println!(
        "best epoch {:?} of {}{}",
        out.best_epoch,
        out.log.len(),
        if out.stopped_early { " (stopped early)" } else { "" }
    );
    Ok(())
}
