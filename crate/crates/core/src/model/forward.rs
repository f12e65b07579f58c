//! Graph construction for one context and its candidates.

use super::config::ModelConfig;
use super::params::Bound;
use super::prepare::{PreparedCandidate, PreparedExample};
use crate::nn::{mlp_forward, Graph, Tensor, Var};
use crate::text::EncodedText;

/// Per-text nodes shared by every interaction involving that text.
#[derive(Debug, Clone, Copy)]
pub struct TextNodes {
    /// `len x d` embeddings; padding rows are zero.
    pub emb: Option<Var>,
    /// `len x 2*hidden` BiGRU states over the unpadded prefix, zero below.
    pub hid: Option<Var>,
}

pub fn encode_text(g: &mut Graph<'_>, b: &Bound, cfg: &ModelConfig, text: &EncodedText) -> TextNodes {
    let len = text.ids.len();
    let need_emb = cfg.channels.m1 || cfg.channels.m2;
    if !need_emb {
        return TextNodes { emb: None, hid: None };
    }
    let emb = g.embedding(b.embedding, &text.ids);
    let hid = cfg.channels.m2.then(|| {
        let width = 2 * cfg.hidden;
        if text.true_len == 0 {
            return g.zeros(&[len, width]);
        }
        let rows: Vec<Var> = (0..text.true_len).map(|t| g.row(emb, t)).collect();
        let states = g.bigru_rows(&rows, b.encoder_fwd, b.encoder_bwd, cfg.hidden);
        if text.true_len == len {
            states
        } else {
            let pad = g.zeros(&[(len - text.true_len) * width]);
            g.concat(&[states, pad], vec![len, width])
        }
    });
    TextNodes { emb: Some(emb), hid }
}

/// Encodes every utterance slot of a context.
pub fn encode_context(g: &mut Graph<'_>, b: &Bound, cfg: &ModelConfig, ex: &PreparedExample) -> Vec<TextNodes> {
    ex.utterances.iter().map(|u| encode_text(g, b, cfg, u)).collect()
}

/// `channels x l_r x l_u` stack of interaction matrices; rows follow
/// response positions and columns utterance positions.
pub fn interaction_stack(
    g: &mut Graph<'_>,
    b: &Bound,
    cfg: &ModelConfig,
    utt: TextNodes,
    resp: TextNodes,
    m3: Option<&Tensor>,
) -> Var {
    let mut channels = Vec::with_capacity(3);
    if cfg.channels.m1 {
        let (r, u) = (resp.emb.expect("embeddings"), utt.emb.expect("embeddings"));
        channels.push(g.interaction(r, u, cfg.interaction, b.bilinear_m1));
    }
    if cfg.channels.m2 {
        let (r, u) = (resp.hid.expect("hidden states"), utt.hid.expect("hidden states"));
        channels.push(g.interaction(r, u, cfg.interaction, b.bilinear_m2));
    }
    if cfg.channels.m3 {
        channels.push(g.constant(m3.expect("knowledge matrix").clone()));
    }
    g.concat(&channels, vec![channels.len(), cfg.l_r, cfg.l_u])
}

/// Flattened CNN features of one (utterance, response) pair.
fn slot_features(
    g: &mut Graph<'_>,
    b: &Bound,
    cfg: &ModelConfig,
    utt: TextNodes,
    resp: TextNodes,
    m3: Option<&Tensor>,
) -> Var {
    let mut x = interaction_stack(g, b, cfg, utt, resp, m3);
    for &(w, bias) in &b.conv {
        let c = g.conv2d(x, w, bias);
        let a = g.relu(c);
        x = g.max_pool(a, cfg.pool, cfg.pool_edge);
    }
    let n = g.value(x).len();
    let mut f = g.reshape(x, vec![n]);
    if let Some((w, bias)) = b.projection {
        let p = g.affine(w, f, Some(bias));
        f = g.tanh(p);
    }
    f
}

/// Score node `f(U, r)` for one candidate. `mask` holds dropout
/// multipliers for the MLP input (training only).
pub fn score_candidate(
    g: &mut Graph<'_>,
    b: &Bound,
    cfg: &ModelConfig,
    context: &[TextNodes],
    cand: &PreparedCandidate,
    mask: Option<Vec<f64>>,
) -> Var {
    let resp = encode_text(g, b, cfg, &cand.response);
    let feats: Vec<Var> = context
        .iter()
        .enumerate()
        .map(|(s, &utt)| slot_features(g, b, cfg, utt, resp, cand.m3.as_ref().map(|m| &m[s])))
        .collect();
    let states = g.bigru_rows(&feats, b.context_fwd, b.context_bwd, cfg.context_hidden);
    let mut v = g.reshape(states, vec![cfg.mlp_input_dim()]);
    if let Some(mask) = mask {
        v = g.scale(v, mask);
    }
    mlp_forward(g, v, b.mlp)
}
