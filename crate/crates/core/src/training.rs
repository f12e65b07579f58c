//! Pairwise hinge-loss training with Adam.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{evaluate_groups, Metrics, RankedLabels};
use crate::model::{encode_context, rank_scores, score, score_candidate, ModelConfig, ModelParams, PreparedExample};
use crate::model::{parse_num, Bound, Variant};
use crate::nn::{dropout_mask, Graph, Tensor, Var};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Hinge margin.
    pub epsilon: f64,
    /// L2 coefficient, applied once per batch.
    pub lambda: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a validation MAP improvement before stopping;
    /// 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            lambda: 0.0,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 200,
            epochs: 30,
            patience: 5,
            seed: 1,
        }
    }
}

impl TrainConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }

    /// Sets one option by name; `Ok(false)` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "epsilon" | "margin" => self.epsilon = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse_num(key, value)?,
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "adam_eps" => self.adam_eps = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Indices of one training triple: example, positive and negative candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub example: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Positive x negative pairs of every example, in example order. The
/// second value counts examples lacking a positive or a negative.
pub fn make_triples<L: AsRef<[u8]>>(labels: &[L]) -> (Vec<Triple>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for (e, l) in labels.iter().enumerate() {
        let l = l.as_ref();
        let pos: Vec<usize> = (0..l.len()).filter(|&i| l[i] > 0).collect();
        let neg: Vec<usize> = (0..l.len()).filter(|&i| l[i] == 0).collect();
        if pos.is_empty() || neg.is_empty() {
            skipped += 1;
            continue;
        }
        for &p in &pos {
            for &n in &neg {
                out.push(Triple {
                    example: e,
                    positive: p,
                    negative: n,
                });
            }
        }
    }
    (out, skipped)
}

/// `max(0, epsilon - f_pos + f_neg)`.
pub fn hinge(f_pos: f64, f_neg: f64, epsilon: f64) -> f64 {
    (epsilon - f_pos + f_neg).max(0.0)
}

/// Hinge term plus `lambda * ||theta||^2` over `params`.
pub fn hinge_loss(f_pos: f64, f_neg: f64, epsilon: f64, lambda: f64, params: &[Tensor]) -> f64 {
    let reg = if lambda == 0.0 {
        0.0
    } else {
        lambda * params.iter().map(Tensor::sum_squares).sum::<f64>()
    };
    hinge(f_pos, f_neg, epsilon) + reg
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let z = || params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self { m: z(), v: z(), t: 0 }
    }
}

/// One bias-corrected Adam update. `names` label parameters in errors.
pub fn adam_step(
    params: &mut [Tensor],
    names: &[String],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape("gradient and parameter counts differ".into()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || state.m[i].len() != g.len() {
            return Err(Error::Shape(format!("gradient shape mismatch for `{}`", names[i])));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(names[i].clone()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (k, (x, &g)) in p.data_mut().iter_mut().zip(&grads[i]).enumerate() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            *x -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Dropout multipliers for the positive and negative pass of one triple.
pub type TripleMasks = (Option<Vec<f64>>, Option<Vec<f64>>);

/// Loss and gradient of one batch: mean hinge over the triples plus
/// `lambda * ||theta||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    /// Hinge value of each triple, in batch order.
    pub hinges: Vec<f64>,
    /// One dense gradient per parameter, registry order.
    pub grads: Vec<Vec<f64>>,
}

struct TripleGrad {
    hinge: f64,
    /// Dense gradients for every parameter except the embedding table.
    dense: Vec<Option<Vec<f64>>>,
    /// Touched embedding rows, ascending by id.
    emb_rows: Vec<(usize, Vec<f64>)>,
}

fn triple_gradient(
    params: &ModelParams,
    cfg: &ModelConfig,
    ex: &PreparedExample,
    t: Triple,
    scale: f64,
    epsilon: f64,
    masks: TripleMasks,
) -> TripleGrad {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.tensors().iter().map(|t| g.param(t)).collect();
    let bound = Bound::from_vars(cfg, &vars);
    let ctx = encode_context(&mut g, &bound, cfg, ex);
    let fp = score_candidate(&mut g, &bound, cfg, &ctx, &ex.candidates[t.positive], masks.0);
    let fn_ = score_candidate(&mut g, &bound, cfg, &ctx, &ex.candidates[t.negative], masks.1);
    let h = hinge(g.scalar(fp), g.scalar(fn_), epsilon);
    let n = params.len();
    if h <= 0.0 {
        return TripleGrad {
            hinge: h,
            dense: vec![None; n],
            emb_rows: Vec::new(),
        };
    }
    g.backward_seeded(&[(fp, -scale), (fn_, scale)]);
    // registry order: the embedding table comes first
    let dense: Vec<Option<Vec<f64>>> = vars
        .iter()
        .enumerate()
        .map(|(i, &v)| if i == 0 { None } else { g.grad(v).map(<[f64]>::to_vec) })
        .collect();
    let mut emb_rows = Vec::new();
    if let Some(eg) = g.grad(vars[0]) {
        let d = params.tensors()[0].cols();
        let mut ids: Vec<usize> = ex
            .utterances
            .iter()
            .chain([&ex.candidates[t.positive].response, &ex.candidates[t.negative].response])
            .flat_map(|e| e.ids.iter().copied())
            .filter(|&id| id != crate::text::PAD)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        emb_rows = ids
            .into_iter()
            .map(|id| (id, eg[id * d..(id + 1) * d].to_vec()))
            .collect();
    }
    TripleGrad {
        hinge: h,
        dense,
        emb_rows,
    }
}

/// Loss and exact gradient of one batch. Triples are evaluated in
/// parallel and reduced in batch order, so the result does not depend on
/// the thread count.
pub fn batch_gradient(
    params: &ModelParams,
    cfg: &ModelConfig,
    examples: &[PreparedExample],
    batch: &[Triple],
    masks: Vec<TripleMasks>,
    tcfg: &TrainConfig,
) -> Result<BatchGradient> {
    if masks.len() != batch.len() {
        return Err(Error::Shape("one mask pair per triple expected".into()));
    }
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<TripleGrad> = batch
        .par_iter()
        .zip(masks)
        .map(|(&t, m)| triple_gradient(params, cfg, &examples[t.example], t, scale, tcfg.epsilon, m))
        .collect();
    let mut grads: Vec<Vec<f64>> = params.tensors().iter().map(|p| vec![0.0; p.len()]).collect();
    let d = params.tensors()[0].cols();
    let mut hinge_sum = 0.0;
    let mut hinges = Vec::with_capacity(parts.len());
    for part in parts {
        hinge_sum += part.hinge;
        hinges.push(part.hinge);
        for (acc, g) in grads.iter_mut().zip(part.dense) {
            if let Some(g) = g {
                acc.iter_mut().zip(g).for_each(|(a, x)| *a += x);
            }
        }
        for (id, row) in part.emb_rows {
            grads[0][id * d..(id + 1) * d]
                .iter_mut()
                .zip(row)
                .for_each(|(a, x)| *a += x);
        }
    }
    let mut loss = hinge_sum * scale;
    if tcfg.lambda != 0.0 {
        loss += tcfg.lambda * params.l2();
        for (acc, p) in grads.iter_mut().zip(params.tensors()) {
            acc.iter_mut()
                .zip(p.data())
                .for_each(|(a, &x)| *a += 2.0 * tcfg.lambda * x);
        }
    }
    Ok(BatchGradient { loss, hinges, grads })
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_map: f64,
    pub valid_r1: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub const TSV_HEADER: &'static str = "epoch\ttrain_loss\tvalid_map\tvalid_r@1\tseconds";

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.3}",
            self.epoch, self.train_loss, self.valid_map, self.valid_r1, self.seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation MAP (the last
    /// epoch when there is no validation set; the initial parameters when
    /// no epoch ran).
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub examples_skipped: usize,
    pub triples: usize,
    pub stopped_early: bool,
}

/// Metrics of `params` over prepared examples, scored in parallel.
pub fn evaluate_prepared(examples: &[PreparedExample], params: &ModelParams, cfg: &ModelConfig) -> Result<Metrics> {
    let ranked: Vec<RankedLabels> = examples
        .par_iter()
        .map(|ex| {
            let s = score(ex, params, cfg)?;
            Ok(RankedLabels::from_ranking(
                ex.dialog_id.clone(),
                &ex.labels(),
                &rank_scores(&s),
            ))
        })
        .collect::<Result<_>>()?;
    Ok(evaluate_groups(&ranked))
}

fn draw_masks(cfg: &ModelConfig, tcfg: &TrainConfig, step: u64, n: usize) -> Result<Vec<TripleMasks>> {
    if cfg.dropout == 0.0 {
        return Ok(vec![(None, None); n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_indexed(tcfg.seed, "dropout", step));
    let len = cfg.mlp_input_dim();
    (0..n)
        .map(|_| {
            Ok((
                Some(dropout_mask(len, cfg.dropout, &mut rng)?),
                Some(dropout_mask(len, cfg.dropout, &mut rng)?),
            ))
        })
        .collect()
}

pub fn train(
    examples: &[PreparedExample],
    valid: &[PreparedExample],
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    init: ModelParams,
) -> Result<TrainOutcome> {
    train_with(examples, valid, cfg, tcfg, init, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    examples: &[PreparedExample],
    valid: &[PreparedExample],
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    init: ModelParams,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tcfg.validate()?;
    if cfg.variant == Variant::Kd && !cfg.channels.m3 {
        return Err(Error::Config("the knowledge variant needs its third channel".into()));
    }
    let vocab_size = init
        .get("embedding")
        .map(Tensor::rows)
        .ok_or_else(|| Error::Shape("parameters lack an embedding table".into()))?;
    for ex in examples.iter().chain(valid) {
        ex.check(cfg, vocab_size)?;
    }
    let labels: Vec<Vec<u8>> = examples.iter().map(PreparedExample::labels).collect();
    let (mut triples, skipped) = make_triples(&labels);
    if skipped > 0 {
        log::warn!("{skipped} training examples lack a positive or a negative and were skipped");
    }
    let mut outcome = TrainOutcome {
        params: init.clone(),
        log: Vec::new(),
        best_epoch: None,
        examples_skipped: skipped,
        triples: triples.len(),
        stopped_early: false,
    };
    if tcfg.epochs == 0 {
        return Ok(outcome);
    }
    if triples.is_empty() {
        return Err(Error::Data(
            "no training triples: every example lacks a positive or a negative".into(),
        ));
    }
    let mut params = init;
    let names = params.names().to_vec();
    let mut adam = AdamState::new(params.tensors());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed::derive(tcfg.seed, "shuffle"));
    let mut best_map = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut step = 0u64;
    for epoch in 1..=tcfg.epochs {
        let start = Instant::now();
        triples.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, batch) in triples.chunks(tcfg.batch_size).enumerate() {
            let masks = draw_masks(cfg, tcfg, step, batch.len())?;
            let bg = batch_gradient(&params, cfg, examples, batch, masks, tcfg)?;
            if !bg.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    batch: b,
                    value: bg.loss,
                });
            }
            adam_step(params.tensors_mut(), &names, &bg.grads, &mut adam, tcfg)?;
            loss_sum += bg.loss;
            batches += 1;
            step += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let (valid_map, valid_r1) = if valid.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let m = evaluate_prepared(valid, &params, cfg)?;
            (m.map, m.r1)
        };
        let row = EpochLog {
            epoch,
            train_loss,
            valid_map,
            valid_r1,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("{}", row.tsv_row());
        on_epoch(&row);
        outcome.log.push(row);
        if valid.is_empty() || valid_map > best_map {
            best_map = if valid.is_empty() { best_map } else { valid_map };
            since_best = 0;
            outcome.params = params.clone();
            outcome.best_epoch = Some(epoch);
        } else {
            since_best += 1;
            if tcfg.patience > 0 && since_best >= tcfg.patience {
                outcome.stopped_early = true;
                break;
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triple_counts() {
        let (t, s) = make_triples(&[vec![1u8, 0, 0, 0, 0, 0, 0, 0, 0, 0]]);
        assert_eq!((t.len(), s), (9, 0));
        let (t, s) = make_triples(&[vec![1u8, 1, 0, 0, 0]]);
        assert_eq!((t.len(), s), (6, 0));
        let (t, s) = make_triples(&[vec![0u8, 0], vec![1, 1], vec![1, 0]]);
        assert_eq!((t.len(), s), (1, 2));
        assert_eq!(
            t[0],
            Triple {
                example: 2,
                positive: 0,
                negative: 1
            }
        );
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_loss(2.0, 0.5, 1.0, 0.0, &[]), 0.0);
        assert!((hinge_loss(0.2, 0.5, 1.0, 0.0, &[]) - 1.3).abs() < 1e-15);
        assert_eq!(hinge_loss(0.7, 0.7, 0.25, 0.0, &[]), 0.25);
        let theta = [Tensor::vector(vec![1.0, 2.0])];
        assert!((hinge_loss(2.0, 0.0, 1.0, 0.5, &theta) - 2.5).abs() < 1e-15);
    }

    fn scalar_param(x: f64) -> (Vec<Tensor>, Vec<String>) {
        (vec![Tensor::vector(vec![x])], vec!["theta".to_string()])
    }

    #[test]
    fn adam_first_step() {
        let cfg = TrainConfig::default();
        let (mut p, names) = scalar_param(0.0);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &names, &[vec![1.0]], &mut st, &cfg).unwrap();
        let expected = -cfg.learning_rate / (1.0 + cfg.adam_eps);
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let cfg = TrainConfig::default();
        let (mut p, names) = scalar_param(0.3);
        let mut st = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &names, &[vec![0.0]], &mut st, &cfg).unwrap();
        }
        assert_eq!(p[0].data()[0], 0.3);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // each early step moves about lr, so 100 steps stay clear of the minimum
        let cfg = TrainConfig::default();
        let (mut p, names) = scalar_param(1.0);
        let mut st = AdamState::new(&p);
        let mut prev = 1.0f64;
        for step in 0..100 {
            let x = p[0].data()[0];
            adam_step(&mut p, &names, &[vec![2.0 * x]], &mut st, &cfg).unwrap();
            let now = p[0].data()[0].abs();
            if step >= 1 {
                assert!(now < prev, "step {step}: {now} >= {prev}");
            }
            prev = now;
        }
        assert!(prev < 0.95 && prev > 0.85, "{prev}");
    }

    #[test]
    fn adam_names_non_finite_parameter() {
        let cfg = TrainConfig::default();
        let (mut p, names) = scalar_param(0.0);
        let mut st = AdamState::new(&p);
        match adam_step(&mut p, &names, &[vec![f64::NAN]], &mut st, &cfg) {
            Err(Error::NonFiniteGradient(n)) => assert_eq!(n, "theta"),
            other => panic!("{other:?}"),
        }
        assert_eq!(st.t, 0);
    }

    #[test]
    fn config_validation_and_keys() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        assert!(c.set("lr", "0.01").unwrap());
        assert!(!c.set("nonsense", "1").unwrap());
        assert_eq!(c.learning_rate, 0.01);
        c.epsilon = 0.0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            beta2: 1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
