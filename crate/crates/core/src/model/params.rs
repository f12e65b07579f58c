use std::collections::HashMap;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Graph, GruVars, Interaction, MlpVars, Tensor, Var, GRU_TENSOR_NAMES};
use crate::text::{Vocabulary, PAD};

/// Half-width of the uniform embedding initialization.
pub const EMBEDDING_INIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Embedding,
    Xavier { fan_in: usize, fan_out: usize },
    Identity,
    Zero,
}

/// Name, shape and initializer of every trainable tensor, in registry order.
fn layout(cfg: &ModelConfig, vocab_size: usize) -> Result<Vec<(String, Vec<usize>, Init)>> {
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));

    let gru = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str, input: usize, hidden: usize| {
        for dir in ["fwd", "bwd"] {
            for name in GRU_TENSOR_NAMES {
                let (shape, init) = match name.as_bytes()[0] {
                    b'w' => (
                        vec![hidden, input],
                        Init::Xavier {
                            fan_in: input,
                            fan_out: hidden,
                        },
                    ),
                    b'u' => (
                        vec![hidden, hidden],
                        Init::Xavier {
                            fan_in: hidden,
                            fan_out: hidden,
                        },
                    ),
                    _ => (vec![hidden], Init::Zero),
                };
                push(format!("{prefix}.{dir}.{name}"), shape, init);
            }
        }
    };

    push("embedding".into(), vec![vocab_size, cfg.d], Init::Embedding);
    gru(&mut push, "encoder", cfg.d, cfg.hidden);
    if cfg.interaction == Interaction::Bilinear {
        push("bilinear.m1".into(), vec![cfg.d, cfg.d], Init::Identity);
        let h2 = 2 * cfg.hidden;
        push("bilinear.m2".into(), vec![h2, h2], Init::Identity);
    }
    for b in 0..cfg.conv_blocks {
        let layer = cfg.conv_layer(b);
        let (kh, kw) = layer.kernel;
        push(
            format!("conv{b}.weight"),
            vec![layer.kernels, layer.in_channels, kh, kw],
            Init::Xavier {
                fan_in: layer.in_channels * kh * kw,
                fan_out: layer.kernels * kh * kw,
            },
        );
        push(format!("conv{b}.bias"), vec![layer.kernels], Init::Zero);
    }
    let cnn = cfg.cnn_output_dim()?;
    if cfg.projection > 0 {
        push(
            "projection.weight".into(),
            vec![cfg.projection, cnn],
            Init::Xavier {
                fan_in: cnn,
                fan_out: cfg.projection,
            },
        );
        push("projection.bias".into(), vec![cfg.projection], Init::Zero);
    }
    gru(&mut push, "context", cfg.feature_dim()?, cfg.context_hidden);
    let mlp_in = cfg.mlp_input_dim();
    push(
        "mlp.w1".into(),
        vec![cfg.mlp_hidden, mlp_in],
        Init::Xavier {
            fan_in: mlp_in,
            fan_out: cfg.mlp_hidden,
        },
    );
    push("mlp.b1".into(), vec![cfg.mlp_hidden], Init::Zero);
    push(
        "mlp.w2".into(),
        vec![2, cfg.mlp_hidden],
        Init::Xavier {
            fan_in: cfg.mlp_hidden,
            fan_out: 2,
        },
    );
    push("mlp.b2".into(), vec![2], Init::Zero);
    Ok(out)
}

/// Every trainable tensor of the network, registered once under a stable
/// name. Registry order is fixed by the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Random initialization: embeddings uniform in `[-0.1, 0.1]` with a
    /// zero padding row, weights Xavier-uniform, biases zero and bilinear
    /// matrices the identity.
    pub fn init(cfg: &ModelConfig, vocab_size: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if vocab_size < 2 {
            return Err(Error::Config("vocabulary must contain at least <pad> and <unk>".into()));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in layout(cfg, vocab_size)? {
            let mut t = Tensor::zeros(&shape);
            let mut fill = |scale: f64, t: &mut Tensor| {
                let dist = Uniform::new_inclusive(-scale, scale);
                for v in t.data_mut() {
                    *v = dist.sample(rng);
                }
            };
            match init {
                Init::Embedding => {
                    fill(EMBEDDING_INIT, &mut t);
                    let d = shape[1];
                    t.data_mut()[PAD * d..(PAD + 1) * d].fill(0.0);
                }
                Init::Xavier { fan_in, fan_out } => fill((6.0 / (fan_in + fan_out) as f64).sqrt(), &mut t),
                Init::Identity => t = Tensor::identity(shape[0]),
                Init::Zero => {}
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self { names, tensors })
    }

    /// All-zero parameters of the right shapes.
    pub fn zeros(cfg: &ModelConfig, vocab_size: usize) -> Result<Self> {
        cfg.validate()?;
        let (names, tensors) = layout(cfg, vocab_size)?
            .into_iter()
            .map(|(n, s, _)| (n, Tensor::zeros(&s)))
            .unzip();
        Ok(Self { names, tensors })
    }

    /// Rebuilds parameters from named tensors, checking that names and
    /// shapes match the layout implied by `cfg`.
    pub fn from_named(cfg: &ModelConfig, vocab_size: usize, named: Vec<(String, Tensor)>) -> Result<Self> {
        let expected = layout(cfg, vocab_size)?;
        let mut by_name: HashMap<String, Tensor> = named.into_iter().collect();
        let mut names = Vec::with_capacity(expected.len());
        let mut tensors = Vec::with_capacity(expected.len());
        for (name, shape, _) in expected {
            let t = by_name
                .remove(&name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "parameter `{name}`: expected {shape:?}, found {:?}",
                    t.shape()
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        if let Some(extra) = by_name.keys().min() {
            return Err(Error::Data(format!("unexpected parameter `{extra}`")));
        }
        Ok(Self { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Squared L2 norm over every parameter.
    pub fn l2(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum_squares).sum()
    }

    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }

    /// Adds every tensor to `g` as a trainable leaf, in registry order.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>, cfg: &ModelConfig) -> Bound {
        let vars: Vec<Var> = self.tensors.iter().map(|t| g.param(t)).collect();
        Bound::from_vars(cfg, &vars)
    }

    /// Overwrites embedding rows with vectors from a word2vec text file
    /// (`token v1 v2 ...`, an optional `count dim` header line). Returns
    /// the number of vocabulary rows replaced.
    pub fn load_embeddings(&mut self, path: &Path, vocab: &Vocabulary) -> Result<usize> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table = self
            .get_mut("embedding")
            .ok_or_else(|| Error::Data("no embedding table".into()))?;
        let d = table.cols();
        let mut found = 0;
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<&str> = parts.collect();
            if n == 0 && values.len() == 1 && token.parse::<usize>().is_ok() {
                continue;
            }
            if values.len() != d {
                return Err(Error::parse(
                    n + 1,
                    format!("expected {d} values, found {}", values.len()),
                ));
            }
            let Some(id) = vocab.get(token) else { continue };
            if id == PAD {
                continue;
            }
            for (k, v) in values.iter().enumerate() {
                let x: f64 = v.parse().map_err(|_| Error::parse(n + 1, format!("bad value `{v}`")))?;
                table.data_mut()[id * d + k] = x;
            }
            found += 1;
        }
        Ok(found)
    }
}

/// Graph handles for every parameter role.
#[derive(Debug, Clone)]
pub struct Bound {
    pub embedding: Var,
    pub encoder_fwd: GruVars,
    pub encoder_bwd: GruVars,
    pub bilinear_m1: Option<Var>,
    pub bilinear_m2: Option<Var>,
    /// `(weight, bias)` per conv block.
    pub conv: Vec<(Var, Var)>,
    pub projection: Option<(Var, Var)>,
    pub context_fwd: GruVars,
    pub context_bwd: GruVars,
    pub mlp: MlpVars,
}

impl Bound {
    /// Assigns roles to `vars` given in registry order.
    pub fn from_vars(cfg: &ModelConfig, vars: &[Var]) -> Self {
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("parameter list shorter than the layout");
        let embedding = next();
        let gru = |next: &mut dyn FnMut() -> Var| GruVars(std::array::from_fn(|_| next()));
        let encoder_fwd = gru(&mut next);
        let encoder_bwd = gru(&mut next);
        let (bilinear_m1, bilinear_m2) = if cfg.interaction == Interaction::Bilinear {
            (Some(next()), Some(next()))
        } else {
            (None, None)
        };
        let conv = (0..cfg.conv_blocks).map(|_| (next(), next())).collect();
        let projection = (cfg.projection > 0).then(|| (next(), next()));
        let context_fwd = gru(&mut next);
        let context_bwd = gru(&mut next);
        let mlp = MlpVars {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        };
        Self {
            embedding,
            encoder_fwd,
            encoder_bwd,
            bilinear_m1,
            bilinear_m2,
            conv,
            projection,
            context_fwd,
            context_bwd,
            mlp,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Channels;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            l_u: 6,
            l_r: 6,
            c: 2,
            d: 4,
            hidden: 3,
            context_hidden: 3,
            kernels: 2,
            mlp_hidden: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn registry_is_unique_and_complete() {
        let cfg = small();
        let p = ModelParams::init(&cfg, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut names = p.names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), p.len());
        assert_eq!(p.get("embedding").unwrap().shape(), &[10, 4]);
        assert_eq!(p.get("conv0.weight").unwrap().shape(), &[2, 2, 3, 3]);
        assert_eq!(p.get("mlp.w1").unwrap().shape(), &[5, 12]);
        assert!(p.get("embedding").unwrap().row(PAD).iter().all(|&v| v == 0.0));
        assert!(p
            .get("embedding")
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() <= EMBEDDING_INIT));
    }

    #[test]
    fn channel_count_only_changes_first_conv() {
        let mut a = small();
        a.conv_blocks = 2;
        a.l_u = 12;
        a.l_r = 12;
        a.pool = (2, 2);
        let mut b = a.clone();
        b.channels = Channels {
            m1: true,
            m2: false,
            m3: false,
        };
        let pa = ModelParams::zeros(&a, 7).unwrap();
        let pb = ModelParams::zeros(&b, 7).unwrap();
        assert_eq!(pa.names(), pb.names());
        for ((n, x), (_, y)) in pa.iter().zip(pb.iter()) {
            if n == "conv0.weight" {
                assert_eq!(x.shape()[1], 2);
                assert_eq!(y.shape()[1], 1);
            } else {
                assert_eq!(x.shape(), y.shape(), "{n}");
            }
        }
    }

    #[test]
    fn named_round_trip_and_mismatch() {
        let cfg = small();
        let p = ModelParams::init(&cfg, 9, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let back = ModelParams::from_named(&cfg, 9, p.to_named()).unwrap();
        assert_eq!(back, p);
        assert!(ModelParams::from_named(&cfg, 8, p.to_named()).is_err());
        let mut missing = p.to_named();
        missing.pop();
        assert!(ModelParams::from_named(&cfg, 9, missing).is_err());
    }

    #[test]
    fn bilinear_matrices_start_as_identity() {
        let cfg = ModelConfig {
            interaction: Interaction::Bilinear,
            ..small()
        };
        let p = ModelParams::init(&cfg, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(p.get("bilinear.m1").unwrap(), &Tensor::identity(4));
        assert_eq!(p.get("bilinear.m2").unwrap(), &Tensor::identity(6));
    }
}
