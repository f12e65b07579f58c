use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::Interaction;
use crate::text::{EncodedText, PAD};

fn tiny(interaction: Interaction) -> ModelConfig {
    ModelConfig {
        l_u: 4,
        l_r: 4,
        c: 2,
        d: 3,
        hidden: 2,
        context_hidden: 2,
        kernel: (2, 2),
        kernels: 2,
        pool: (2, 2),
        mlp_hidden: 3,
        dropout: 0.0,
        interaction,
        ..ModelConfig::default()
    }
}

fn text(ids: &[usize], len: usize) -> EncodedText {
    let mut v = ids.to_vec();
    v.resize(len, PAD);
    EncodedText {
        ids: v,
        true_len: ids.len(),
    }
}

fn random_params(cfg: &ModelConfig, vocab: usize, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::init(cfg, vocab, &mut rng).unwrap();
    // non-zero biases so every term of the oracle is exercised
    for (name, t) in p.names().to_vec().into_iter().zip(p.tensors_mut()) {
        if name.contains(".b") || name.ends_with("bias") {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        if name == "embedding" {
            for v in t.data_mut().iter_mut().skip(cfg.d) {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
    }
    p
}

fn example(cfg: &ModelConfig, rng: &mut impl Rng, vocab: usize, candidates: usize) -> PreparedExample {
    let mut random_text = |len: usize, min: usize| {
        let n = rng.gen_range(min..=len);
        let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(1..vocab)).collect();
        text(&ids, len)
    };
    let utterances = (0..cfg.c).map(|_| random_text(cfg.l_u, 0)).collect();
    let candidates = (0..candidates)
        .map(|k| PreparedCandidate {
            response: random_text(cfg.l_r, 1),
            label: (k == 0) as u8,
            m3: None,
        })
        .collect();
    PreparedExample {
        dialog_id: "x".into(),
        utterances,
        candidates,
    }
}

/// Unvectorized reimplementation of the whole network.
mod oracle {
    use super::*;

    pub type Mat = Vec<Vec<f64>>;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn p<'a>(params: &'a ModelParams, name: &str) -> &'a Tensor {
        params.get(name).unwrap_or_else(|| panic!("{name}"))
    }

    fn gru(params: &ModelParams, prefix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
        let t = |n: &str| p(params, &format!("{prefix}.{n}"));
        let o = h.len();
        let lin = |w: &str, u: &str, b: &str, k: usize, hin: &[f64]| {
            let mut s = t(b).data()[k];
            for (j, xj) in x.iter().enumerate() {
                s += t(w).at(k, j) * xj;
            }
            for (j, hj) in hin.iter().enumerate() {
                s += t(u).at(k, j) * hj;
            }
            s
        };
        let z: Vec<f64> = (0..o).map(|k| sig(lin("w_z", "u_z", "b_z", k, h))).collect();
        let r: Vec<f64> = (0..o).map(|k| sig(lin("w_r", "u_r", "b_r", k, h))).collect();
        let rh: Vec<f64> = (0..o).map(|k| r[k] * h[k]).collect();
        (0..o)
            .map(|k| (1.0 - z[k]) * h[k] + z[k] * lin("w_h", "u_h", "b_h", k, &rh).tanh())
            .collect()
    }

    fn bigru(params: &ModelParams, prefix: &str, rows: &[Vec<f64>], o: usize) -> Mat {
        let n = rows.len();
        let mut f = vec![vec![0.0; o]; n];
        let mut h = vec![0.0; o];
        for t in 0..n {
            h = gru(params, &format!("{prefix}.fwd"), &rows[t], &h);
            f[t] = h.clone();
        }
        let mut b = vec![vec![0.0; o]; n];
        let mut h = vec![0.0; o];
        for t in (0..n).rev() {
            h = gru(params, &format!("{prefix}.bwd"), &rows[t], &h);
            b[t] = h.clone();
        }
        (0..n).map(|t| [f[t].clone(), b[t].clone()].concat()).collect()
    }

    fn embed(params: &ModelParams, t: &EncodedText) -> Mat {
        let e = p(params, "embedding");
        t.ids
            .iter()
            .map(|&id| {
                if id == PAD {
                    vec![0.0; e.cols()]
                } else {
                    e.row(id).to_vec()
                }
            })
            .collect()
    }

    fn states(params: &ModelParams, cfg: &ModelConfig, t: &EncodedText) -> Mat {
        let e = embed(params, t);
        let mut s = bigru(params, "encoder", &e[..t.true_len], cfg.hidden);
        s.resize(t.ids.len(), vec![0.0; 2 * cfg.hidden]);
        s
    }

    fn sim(cfg: &ModelConfig, a: &[f64], b: &[f64], w: Option<&Tensor>) -> f64 {
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        match cfg.interaction {
            Interaction::Dot => dot(a, b),
            Interaction::Cosine => {
                let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
                if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    dot(a, b) / (na * nb)
                }
            }
            Interaction::Bilinear => {
                let w = w.unwrap();
                let mut s = 0.0;
                for i in 0..a.len() {
                    for j in 0..b.len() {
                        s += a[i] * w.at(i, j) * b[j];
                    }
                }
                s
            }
        }
    }

    pub fn stack(
        params: &ModelParams,
        cfg: &ModelConfig,
        u: &EncodedText,
        r: &EncodedText,
        m3: Option<&Tensor>,
    ) -> Vec<Mat> {
        let mut out = Vec::new();
        let grid = |a: &Mat, b: &Mat, w: Option<&Tensor>| -> Mat {
            a.iter()
                .map(|ra| b.iter().map(|rb| sim(cfg, ra, rb, w)).collect())
                .collect()
        };
        if cfg.channels.m1 {
            out.push(grid(&embed(params, r), &embed(params, u), params.get("bilinear.m1")));
        }
        if cfg.channels.m2 {
            out.push(grid(
                &states(params, cfg, r),
                &states(params, cfg, u),
                params.get("bilinear.m2"),
            ));
        }
        if let Some(m) = m3 {
            out.push((0..m.rows()).map(|i| m.row(i).to_vec()).collect());
        }
        out
    }

    fn conv_pool(params: &ModelParams, cfg: &ModelConfig, block: usize, x: &[Mat]) -> Vec<Mat> {
        let w = p(params, &format!("conv{block}.weight"));
        let b = p(params, &format!("conv{block}.bias"));
        let (kh, kw) = cfg.kernel;
        let (h, wd) = (x[0].len(), x[0][0].len());
        let (oh, ow) = (h - kh + 1, wd - kw + 1);
        let c = x.len();
        let mut out = Vec::new();
        for k in 0..cfg.kernels {
            let mut fm = vec![vec![0.0; ow]; oh];
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = b.data()[k];
                    for ch in 0..c {
                        for a in 0..kh {
                            for bb in 0..kw {
                                s += w.data()[((k * c + ch) * kh + a) * kw + bb] * x[ch][i + a][j + bb];
                            }
                        }
                    }
                    fm[i][j] = s.max(0.0);
                }
            }
            let (ph, pw) = cfg.pool;
            let (ph_n, pw_n) = (oh.div_ceil(ph), ow.div_ceil(pw));
            let mut pooled = vec![vec![f64::NEG_INFINITY; pw_n]; ph_n];
            for i in 0..oh {
                for j in 0..ow {
                    let cell = &mut pooled[i / ph][j / pw];
                    *cell = cell.max(fm[i][j]);
                }
            }
            out.push(pooled);
        }
        out
    }

    pub fn score(params: &ModelParams, cfg: &ModelConfig, ex: &PreparedExample, cand: usize) -> f64 {
        let c = &ex.candidates[cand];
        let mut feats = Vec::new();
        for (s, u) in ex.utterances.iter().enumerate() {
            let mut x = stack(params, cfg, u, &c.response, c.m3.as_ref().map(|m| &m[s]));
            for b in 0..cfg.conv_blocks {
                x = conv_pool(params, cfg, b, &x);
            }
            feats.push(x.into_iter().flatten().flatten().collect::<Vec<f64>>());
        }
        let ctx: Vec<f64> = bigru(params, "context", &feats, cfg.context_hidden).concat();
        let (w1, b1) = (p(params, "mlp.w1"), p(params, "mlp.b1"));
        let hidden: Vec<f64> = (0..w1.rows())
            .map(|i| (b1.data()[i] + (0..ctx.len()).map(|j| w1.at(i, j) * ctx[j]).sum::<f64>()).tanh())
            .collect();
        let (w2, b2) = (p(params, "mlp.w2"), p(params, "mlp.b2"));
        let logit = |k: usize| b2.data()[k] + (0..hidden.len()).map(|j| w2.at(k, j) * hidden[j]).sum::<f64>();
        let (l0, l1) = (logit(0), logit(1));
        1.0 / (1.0 + (l0 - l1).exp())
    }
}

#[test]
fn matches_scalar_oracle_end_to_end() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (seed, mode) in [
        (1, Interaction::Dot),
        (2, Interaction::Cosine),
        (3, Interaction::Bilinear),
    ] {
        let cfg = tiny(mode);
        let mut params = random_params(&cfg, 12, seed);
        if mode == Interaction::Bilinear {
            for name in ["bilinear.m1", "bilinear.m2"] {
                for v in params.get_mut(name).unwrap().data_mut() {
                    *v += rng.gen_range(-0.3..0.3);
                }
            }
        }
        for _ in 0..5 {
            let ex = example(&cfg, &mut rng, 12, 3);
            let got = score(&ex, &params, &cfg).unwrap();
            for (k, s) in got.iter().enumerate() {
                let want = oracle::score(&params, &cfg, &ex, k);
                assert!((s - want).abs() < 1e-12, "{mode:?}: {s} vs {want}");
            }
        }
    }
}

#[test]
fn knowledge_variant_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cfg = tiny(Interaction::Dot);
    cfg.variant = Variant::Kd;
    cfg.channels = Channels::ALL;
    let params = random_params(&cfg, 10, 4);
    let mut ex = example(&cfg, &mut rng, 10, 2);
    for cand in &mut ex.candidates {
        cand.m3 = Some(
            (0..cfg.c)
                .map(|_| Tensor::new(vec![4, 4], (0..16).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap())
                .collect(),
        );
    }
    let got = score(&ex, &params, &cfg).unwrap();
    for (k, s) in got.iter().enumerate() {
        assert!((s - oracle::score(&params, &cfg, &ex, k)).abs() < 1e-12);
    }
}

#[test]
fn self_interaction_is_symmetric() {
    let cfg = tiny(Interaction::Dot);
    let params = random_params(&cfg, 8, 6);
    let t = text(&[3, 5, 2], 4);
    let st = build_stack(&t, &t, &params, &cfg, None).unwrap();
    assert_eq!(st.shape(), &[2, 4, 4]);
    let m1 = &st.data()[..16];
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(m1[i * 4 + j], m1[j * 4 + i]);
        }
    }
    for i in 0..3 {
        assert!(m1[i * 4 + i] > 0.0);
    }
}

#[test]
fn padding_utterance_gives_zero_stack() {
    for mode in [Interaction::Dot, Interaction::Cosine, Interaction::Bilinear] {
        let cfg = tiny(mode);
        let params = random_params(&cfg, 8, 7);
        let st = build_stack(&EncodedText::padding(4), &text(&[3, 4], 4), &params, &cfg, None).unwrap();
        assert!(st.data().iter().all(|&v| v == 0.0), "{mode:?}");
    }
}

#[test]
fn padded_response_positions_are_zero_rows() {
    let cfg = tiny(Interaction::Cosine);
    let params = random_params(&cfg, 8, 8);
    let st = build_stack(&text(&[2, 3, 4, 5], 4), &text(&[6, 7], 4), &params, &cfg, None).unwrap();
    for ch in 0..2 {
        for i in 2..4 {
            for j in 0..4 {
                assert_eq!(st.data()[(ch * 4 + i) * 4 + j], 0.0);
            }
        }
    }
}

#[test]
fn single_channel_stack() {
    let mut cfg = tiny(Interaction::Dot);
    cfg.channels = "m1".parse().unwrap();
    let params = random_params(&cfg, 8, 9);
    let st = build_stack(&text(&[2], 4), &text(&[2], 4), &params, &cfg, None).unwrap();
    assert_eq!(st.shape(), &[1, 4, 4]);
    assert!(build_stack(
        &text(&[2], 4),
        &text(&[2], 4),
        &params,
        &cfg,
        Some(&Tensor::zeros(&[4, 4]))
    )
    .is_err());
}

#[test]
fn scoring_is_pure() {
    let cfg = tiny(Interaction::Dot);
    let params = random_params(&cfg, 10, 10);
    let ex = example(&cfg, &mut ChaCha8Rng::seed_from_u64(1), 10, 4);
    let a = score(&ex, &params, &cfg).unwrap();
    let b = score(&ex, &params, &cfg).unwrap();
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert!(a.iter().all(|s| *s > 0.0 && *s < 1.0));
}

#[test]
fn zero_conv_and_mlp_collapse_to_half() {
    let cfg = tiny(Interaction::Dot);
    let mut params = random_params(&cfg, 10, 11);
    for (name, t) in params.names().to_vec().into_iter().zip(params.tensors_mut()) {
        if name.starts_with("conv") || name.starts_with("mlp") {
            t.data_mut().fill(0.0);
        }
    }
    let ex = example(&cfg, &mut ChaCha8Rng::seed_from_u64(2), 10, 3);
    assert_eq!(score(&ex, &params, &cfg).unwrap(), vec![0.5; 3]);
}

#[test]
fn ranking_rules() {
    let cfg = tiny(Interaction::Dot);
    let params = random_params(&cfg, 10, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let single = example(&cfg, &mut rng, 10, 1);
    assert_eq!(rank(&single, &params, &cfg).unwrap().len(), 1);

    let mut twins = example(&cfg, &mut rng, 10, 2);
    twins.candidates[1].response = twins.candidates[0].response.clone();
    let r = rank(&twins, &params, &cfg).unwrap();
    assert_eq!(r[0].1, r[1].1);
    assert_eq!((r[0].0, r[1].0), (0, 1));

    let ex = example(&cfg, &mut rng, 10, 6);
    let scores = score(&ex, &params, &cfg).unwrap();
    let order = rank(&ex, &params, &cfg).unwrap();
    let pos: Vec<usize> = (0..6).map(|k| order.iter().position(|o| o.0 == k).unwrap()).collect();
    for a in 0..6 {
        for b in 0..6 {
            if scores[a] > scores[b] || (scores[a] == scores[b] && a < b) {
                assert!(pos[a] < pos[b]);
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut cfg = tiny(Interaction::Bilinear);
    cfg.projection = 3;
    let vocab = crate::text::build_vocab([["a", "b", "c", "d", "e", "f", "g", "h"]], 1);
    let model = Model::new(cfg.clone(), vocab, 42).unwrap();
    let mut buf = Vec::new();
    model.write_to(&mut buf).unwrap();
    let back = Model::read_from(&buf[..]).unwrap();
    assert_eq!(back, model);
    let ex = example(&cfg, &mut ChaCha8Rng::seed_from_u64(4), 10, 3);
    let a = model.score(&ex).unwrap();
    let b = back.score(&ex).unwrap();
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert!(Model::read_from(&b"garbage"[..]).is_err());
}

#[test]
fn check_rejects_mismatched_examples() {
    let cfg = tiny(Interaction::Dot);
    let params = random_params(&cfg, 10, 13);
    let mut ex = example(&cfg, &mut ChaCha8Rng::seed_from_u64(5), 10, 2);
    ex.utterances.pop();
    assert!(score(&ex, &params, &cfg).is_err());
    let mut ex = example(&cfg, &mut ChaCha8Rng::seed_from_u64(5), 10, 2);
    ex.candidates[0].response.ids[0] = 99;
    assert!(score(&ex, &params, &cfg).is_err());
}

proptest::proptest! {
    #[test]
    fn ranking_survives_monotone_transforms(scores in proptest::collection::vec(-3.0f64..3.0, 1..12)) {
        let base = rank_scores(&scores);
        let mapped: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 1.0).collect();
        let order: Vec<usize> = rank_scores(&mapped).iter().map(|r| r.0).collect();
        proptest::prop_assert_eq!(base.iter().map(|r| r.0).collect::<Vec<_>>(), order);
    }
}
