use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::knowledge::PpmiCounting;
use crate::nn::{ConvLayerConfig, Interaction, PoolEdge};
use crate::retrieval::Bm25Params;
use crate::text::Truncate;

/// Which source of external knowledge the network uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    /// No external knowledge.
    #[default]
    Dmn,
    /// Responses expanded with pseudo-relevance-feedback terms.
    Prf,
    /// A third interaction channel of QA-correspondence PPMI values.
    Kd,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Dmn => "dmn",
            Variant::Prf => "dmn-prf",
            Variant::Kd => "dmn-kd",
        }
    }

    pub fn default_channels(&self) -> Channels {
        match self {
            Variant::Kd => Channels::ALL,
            _ => Channels::M1_M2,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dmn" => Ok(Variant::Dmn),
            "dmn-prf" | "prf" => Ok(Variant::Prf),
            "dmn-kd" | "kd" => Ok(Variant::Kd),
            _ => Err(Error::Config(format!("variant must be dmn|dmn-prf|dmn-kd, got `{s}`"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    /// Word-embedding similarities.
    M1,
    /// BiGRU hidden-state similarities.
    M2,
    /// PPMI over retrieved QA pairs.
    M3,
}

/// Subset of interaction channels, always iterated in `M1, M2, M3` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Channels {
    pub m1: bool,
    pub m2: bool,
    pub m3: bool,
}

impl Channels {
    pub const M1_M2: Channels = Channels {
        m1: true,
        m2: true,
        m3: false,
    };
    pub const ALL: Channels = Channels {
        m1: true,
        m2: true,
        m3: true,
    };

    pub fn list(&self) -> Vec<Channel> {
        [(self.m1, Channel::M1), (self.m2, Channel::M2), (self.m3, Channel::M3)]
            .into_iter()
            .filter_map(|(on, c)| on.then_some(c))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.m1 as usize + self.m2 as usize + self.m3 as usize
    }

    pub fn contains(&self, c: Channel) -> bool {
        match c {
            Channel::M1 => self.m1,
            Channel::M2 => self.m2,
            Channel::M3 => self.m3,
        }
    }
}

impl FromStr for Channels {
    type Err = Error;

    /// Parses `m1+m2`, `m3`, `m1,m3` and similar.
    fn from_str(s: &str) -> Result<Self> {
        let mut ch = Channels {
            m1: false,
            m2: false,
            m3: false,
        };
        for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "m1" => ch.m1 = true,
                "m2" => ch.m2 = true,
                "m3" => ch.m3 = true,
                _ => return Err(Error::Config(format!("unknown channel `{part}` (use m1, m2, m3)"))),
            }
        }
        Ok(ch)
    }
}

impl fmt::Display for Channels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self
            .list()
            .into_iter()
            .map(|c| match c {
                Channel::M1 => "m1",
                Channel::M2 => "m2",
                Channel::M3 => "m3",
            })
            .collect();
        f.write_str(&names.join("+"))
    }
}

/// Retrieval settings for response expansion and QA-pair distillation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnowledgeConfig {
    /// Feedback documents per response for expansion.
    pub prf_depth: usize,
    /// Expansion terms appended per response.
    pub prf_terms: usize,
    /// QA pairs retrieved per response for the PPMI channel.
    pub kd_depth: usize,
    pub ppmi_counting: PpmiCounting,
    pub bm25: Bm25Params,
}

impl Default for KnowledgeConfig {
    fn default() -> Self {
        Self {
            prf_depth: 10,
            prf_terms: 10,
            kd_depth: 10,
            ppmi_counting: PpmiCounting::Frequency,
            bm25: Bm25Params::default(),
        }
    }
}

/// Architecture and input-shape settings. Together with a vocabulary this
/// fully determines the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub channels: Channels,
    pub interaction: Interaction,
    /// Utterance length in tokens.
    pub l_u: usize,
    /// Response length in tokens.
    pub l_r: usize,
    /// Context window in utterances.
    pub c: usize,
    pub truncate: Truncate,
    /// Keep the most recent utterance as the last context slot.
    pub include_current_turn: bool,
    /// Word embedding dimension.
    pub d: usize,
    /// Hidden size of the utterance/response encoder (per direction).
    pub hidden: usize,
    /// Hidden size of the context-level BiGRU (per direction).
    pub context_hidden: usize,
    pub kernel: (usize, usize),
    pub kernels: usize,
    pub pool: (usize, usize),
    pub pool_edge: PoolEdge,
    pub conv_blocks: usize,
    /// Size of an optional tanh projection of the flattened CNN features;
    /// 0 feeds them to the context BiGRU directly.
    pub projection: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
    pub knowledge: KnowledgeConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Dmn,
            channels: Channels::M1_M2,
            interaction: Interaction::Dot,
            l_u: 50,
            l_r: 50,
            c: 10,
            truncate: Truncate::Head,
            include_current_turn: true,
            d: 200,
            hidden: 200,
            context_hidden: 200,
            kernel: (3, 3),
            kernels: 8,
            pool: (3, 3),
            pool_edge: PoolEdge::Partial,
            conv_blocks: 1,
            projection: 0,
            mlp_hidden: 200,
            dropout: 0.3,
            knowledge: KnowledgeConfig::default(),
        }
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("expected ROWSxCOLS, got `{s}`"));
    let (a, b) = s.split_once(['x', 'X', ',']).ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

pub(crate) fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true/false, got `{value}`"))),
    }
}

impl ModelConfig {
    /// Paper-scale defaults for `variant`.
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            channels: variant.default_channels(),
            ..Self::default()
        }
    }

    pub fn conv_layer(&self, block: usize) -> ConvLayerConfig {
        ConvLayerConfig {
            kernel: self.kernel,
            kernels: self.kernels,
            pool: self.pool,
            in_channels: if block == 0 {
                self.channels.count()
            } else {
                self.kernels
            },
            edge: self.pool_edge,
        }
    }

    /// Spatial extent after each conv+pool block, starting from `l_r x l_u`.
    pub fn block_extents(&self) -> Result<Vec<(usize, usize)>> {
        let mut ext = (self.l_r, self.l_u);
        let mut out = Vec::with_capacity(self.conv_blocks);
        for b in 0..self.conv_blocks {
            ext = self.conv_layer(b).output_extent(ext.0, ext.1)?;
            out.push(ext);
        }
        Ok(out)
    }

    /// Length of the flattened CNN output per utterance slot.
    pub fn cnn_output_dim(&self) -> Result<usize> {
        let (h, w) = *self.block_extents()?.last().unwrap_or(&(self.l_r, self.l_u));
        Ok(self.kernels * h * w)
    }

    /// Input width of the context BiGRU.
    pub fn feature_dim(&self) -> Result<usize> {
        if self.projection > 0 {
            Ok(self.projection)
        } else {
            self.cnn_output_dim()
        }
    }

    pub fn mlp_input_dim(&self) -> usize {
        self.c * 2 * self.context_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.channels.count() == 0 {
            return cfg("at least one interaction channel is required".into());
        }
        if self.channels.m3 != (self.variant == Variant::Kd) {
            return cfg(format!(
                "channel m3 is used exactly by dmn-kd (variant {}, channels {})",
                self.variant, self.channels
            ));
        }
        for (name, v) in [
            ("l_u", self.l_u),
            ("l_r", self.l_r),
            ("c", self.c),
            ("d", self.d),
            ("hidden", self.hidden),
            ("context_hidden", self.context_hidden),
            ("kernels", self.kernels),
            ("conv_blocks", self.conv_blocks),
            ("mlp_hidden", self.mlp_hidden),
        ] {
            if v == 0 {
                return cfg(format!("`{name}` must be >= 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return cfg(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        for b in 0..self.conv_blocks {
            self.conv_layer(b).validate()?;
        }
        self.block_extents().map_err(|e| Error::Config(e.to_string()))?;
        let k = &self.knowledge;
        if self.variant == Variant::Prf && k.prf_depth == 0 {
            return cfg("prf_depth must be >= 1".into());
        }
        if self.variant == Variant::Kd && k.kd_depth == 0 {
            return cfg("kd_depth must be >= 1".into());
        }
        if !(k.bm25.k1 >= 0.0 && (0.0..=1.0).contains(&k.bm25.b)) {
            return cfg(format!("bm25 needs k1 >= 0 and b in [0, 1], got {:?}", k.bm25));
        }
        Ok(())
    }

    /// Applies one `key=value` setting. Returns `false` for keys this
    /// config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        match key {
            "variant" => self.variant = v.parse()?,
            "channels" => self.channels = v.parse()?,
            "interaction" => self.interaction = v.parse()?,
            "l_u" => self.l_u = parse_num(key, v)?,
            "l_r" => self.l_r = parse_num(key, v)?,
            "max_len" => {
                self.l_u = parse_num(key, v)?;
                self.l_r = self.l_u;
            }
            "c" | "context" => self.c = parse_num(key, v)?,
            "truncate" => self.truncate = v.parse()?,
            "include_current_turn" => self.include_current_turn = parse_bool(key, v)?,
            "d" | "embedding_dim" => self.d = parse_num(key, v)?,
            "hidden" => self.hidden = parse_num(key, v)?,
            "context_hidden" => self.context_hidden = parse_num(key, v)?,
            "kernel" => self.kernel = parse_pair(v)?,
            "kernels" => self.kernels = parse_num(key, v)?,
            "pool" => self.pool = parse_pair(v)?,
            "pool_edge" => {
                self.pool_edge = match v {
                    "partial" => PoolEdge::Partial,
                    "drop" => PoolEdge::Drop,
                    _ => return Err(Error::Config(format!("pool_edge must be partial|drop, got `{v}`"))),
                }
            }
            "conv_blocks" => self.conv_blocks = parse_num(key, v)?,
            "projection" => self.projection = parse_num(key, v)?,
            "mlp_hidden" => self.mlp_hidden = parse_num(key, v)?,
            "dropout" => self.dropout = parse_num(key, v)?,
            "prf_depth" => self.knowledge.prf_depth = parse_num(key, v)?,
            "prf_terms" => self.knowledge.prf_terms = parse_num(key, v)?,
            "kd_depth" => self.knowledge.kd_depth = parse_num(key, v)?,
            "ppmi_counting" => self.knowledge.ppmi_counting = v.parse()?,
            "bm25_k1" => self.knowledge.bm25.k1 = parse_num(key, v)?,
            "bm25_b" => self.knowledge.bm25.b = parse_num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// All settings as `key=value` pairs, accepted back by [`set`](Self::set).
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let pair = |p: (usize, usize)| format!("{}x{}", p.0, p.1);
        let k = &self.knowledge;
        vec![
            ("variant", self.variant.to_string()),
            ("channels", self.channels.to_string()),
            ("interaction", self.interaction.as_str().into()),
            ("l_u", self.l_u.to_string()),
            ("l_r", self.l_r.to_string()),
            ("c", self.c.to_string()),
            ("truncate", self.truncate.as_str().into()),
            ("include_current_turn", self.include_current_turn.to_string()),
            ("d", self.d.to_string()),
            ("hidden", self.hidden.to_string()),
            ("context_hidden", self.context_hidden.to_string()),
            ("kernel", pair(self.kernel)),
            ("kernels", self.kernels.to_string()),
            ("pool", pair(self.pool)),
            (
                "pool_edge",
                match self.pool_edge {
                    PoolEdge::Partial => "partial".into(),
                    PoolEdge::Drop => "drop".into(),
                },
            ),
            ("conv_blocks", self.conv_blocks.to_string()),
            ("projection", self.projection.to_string()),
            ("mlp_hidden", self.mlp_hidden.to_string()),
            ("dropout", self.dropout.to_string()),
            ("prf_depth", k.prf_depth.to_string()),
            ("prf_terms", k.prf_terms.to_string()),
            ("kd_depth", k.kd_depth.to_string()),
            ("ppmi_counting", k.ppmi_counting.as_str().into()),
            ("bm25_k1", k.bm25.k1.to_string()),
            ("bm25_b", k.bm25.b.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_setup() {
        let cfg = ModelConfig::default();
        assert_eq!((cfg.kernel, cfg.pool, cfg.kernels), ((3, 3), (3, 3), 8));
        assert_eq!((cfg.l_u, cfg.c, cfg.d, cfg.hidden), (50, 10, 200, 200));
        assert_eq!(cfg.dropout, 0.3);
        assert_eq!(
            (cfg.knowledge.prf_depth, cfg.knowledge.prf_terms, cfg.knowledge.kd_depth),
            (10, 10, 10)
        );
        cfg.validate().unwrap();
        ModelConfig::for_variant(Variant::Kd).validate().unwrap();
    }

    #[test]
    fn m3_belongs_to_kd_only() {
        let mut cfg = ModelConfig::for_variant(Variant::Dmn);
        cfg.channels = Channels::ALL;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::for_variant(Variant::Kd);
        cfg.channels = "m1+m2".parse().unwrap();
        assert!(cfg.validate().is_err());
        cfg.channels = "m3".parse().unwrap();
        cfg.validate().unwrap();
        cfg.channels = "".parse().unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn kernel_must_fit() {
        let cfg = ModelConfig {
            l_u: 2,
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn pairs_round_trip() {
        let mut cfg = ModelConfig::for_variant(Variant::Kd);
        cfg.interaction = Interaction::Bilinear;
        cfg.dropout = 0.123456789;
        cfg.kernel = (2, 4);
        cfg.knowledge.ppmi_counting = PpmiCounting::Binary;
        let mut back = ModelConfig::default();
        for (k, v) in cfg.to_pairs() {
            assert!(back.set(k, &v).unwrap(), "{k}");
        }
        assert_eq!(back, cfg);
        assert!(!back.set("nonsense", "1").unwrap());
    }

    #[test]
    fn feature_dims() {
        let cfg = ModelConfig {
            l_u: 8,
            l_r: 8,
            kernels: 4,
            ..ModelConfig::default()
        };
        // 8 - 3 + 1 = 6, pooled by 3 -> 2
        assert_eq!(cfg.cnn_output_dim().unwrap(), 16);
        let cfg = ModelConfig {
            l_u: 7,
            l_r: 7,
            kernels: 2,
            ..ModelConfig::default()
        };
        // 5 -> ceil(5/3) = 2
        assert_eq!(cfg.cnn_output_dim().unwrap(), 8);
    }
}
