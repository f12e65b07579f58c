//! Trains the tiny model briefly, saves a checkpoint and shows that the
//! reloaded model scores bit-identically.

use dmn_rank::model::{dataset_vocab, Knowledge, Model, Variant};
use dmn_rank::synthetic::{tiny, tiny_config};
use dmn_rank::training::{train, TrainConfig};

fn main() -> dmn_rank::Result<()> {
    let data = tiny(3);
    let cfg = tiny_config(Variant::Dmn);
    let mut knowledge = Knowledge::none();
    let vocab = dataset_vocab(&data.train, &cfg, &mut knowledge, 1)?;
    let model = Model::new(cfg.clone(), vocab, 1)?;
    let tr = model.prepare_all(&data.train, &mut knowledge)?;
    let va = model.prepare_all(&data.valid, &mut knowledge)?;
    let tcfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let out = train(&tr, &va, &cfg, &tcfg, model.params.clone())?;
    let trained = Model {
        params: out.params,
        ..model
    };

    let path = std::env::temp_dir().join("dmn-example.ckpt");
    trained.save(&path)?;
    let loaded = Model::load(&path)?;
    for ex in &va {
        let a = trained.score(ex)?;
        let b = loaded.score(ex)?;
        let same = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
        println!("{}  {:?}  bit-identical: {same}", ex.dialog_id, a);
    }
    std::fs::remove_file(&path).ok();
    Ok(())
}
