//! Trains every channel subset and interaction function for one epoch on
//! the tiny corpus.

use dmn_rank::model::{dataset_vocab, Channels, Knowledge, Model, Variant};
use dmn_rank::nn::Interaction;
use dmn_rank::retrieval::{IndexedField, InvertedIndex};
use dmn_rank::synthetic::{tiny, tiny_config};
use dmn_rank::training::{train, TrainConfig};

fn main() -> dmn_rank::Result<()> {
    let data = tiny(21);
    let index = InvertedIndex::build(data.qa.iter().cloned(), IndexedField::Concatenated)?;
    let runs = [
        ("m1", Interaction::Dot),
        ("m2", Interaction::Dot),
        ("m3", Interaction::Dot),
        ("m1+m2", Interaction::Dot),
        ("m1+m3", Interaction::Dot),
        ("m2+m3", Interaction::Dot),
        ("m1+m2", Interaction::Cosine),
        ("m1+m2", Interaction::Bilinear),
    ];
    println!("channels\tinteraction\tparams\ttrain_loss\tvalid_map");
    for (channels, interaction) in runs {
        let channels: Channels = channels.parse()?;
        // the PPMI channel only exists in the knowledge variant
        let mut cfg = tiny_config(if channels.m3 { Variant::Kd } else { Variant::Dmn });
        cfg.channels = channels;
        cfg.interaction = interaction;
        let mut knowledge = Knowledge::with_index(&index);
        let vocab = dataset_vocab(&data.train, &cfg, &mut knowledge, 1)?;
        let model = Model::new(cfg.clone(), vocab, 4)?;
        let tr = model.prepare_all(&data.train, &mut knowledge)?;
        let va = model.prepare_all(&data.valid, &mut knowledge)?;
        let tcfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let out = train(&tr, &va, &cfg, &tcfg, model.params.clone())?;
        println!(
            "{channels}\t{}\t{}\t{:.4}\t{:.4}",
            interaction.as_str(),
            model.params.scalar_count(),
            out.log[0].train_loss,
            out.log[0].valid_map
        );
    }
    Ok(())
}
