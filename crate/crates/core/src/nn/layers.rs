//! Parameter containers and eager (no-gradient) entry points for each layer.
//! The eager functions validate shapes and run the same graph code used in
//! training, so a single implementation backs both paths.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use super::graph::{Graph, GruVars, Interaction, PoolEdge, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn uniform(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    if scale > 0.0 {
        let dist = Uniform::new_inclusive(-scale, scale);
        for v in t.data_mut() {
            *v = dist.sample(rng);
        }
    }
    t
}

fn expect_shape(what: &str, t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::Shape(format!("{what}: expected {shape:?}, got {:?}", t.shape())));
    }
    Ok(())
}

/// Gate weights of one GRU direction.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
}

/// Suffixes of the nine GRU tensors, in binding order.
pub const GRU_TENSOR_NAMES: [&str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self::random(input, hidden, 0.0, &mut rand::rngs::mock::StepRng::new(0, 0))
    }

    /// Weights uniform in `[-scale, scale]`, biases zero.
    pub fn random(input: usize, hidden: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut w = |shape: &[usize]| uniform(shape, scale, rng);
        let (w_z, u_z) = (w(&[hidden, input]), w(&[hidden, hidden]));
        let (w_r, u_r) = (w(&[hidden, input]), w(&[hidden, hidden]));
        let (w_h, u_h) = (w(&[hidden, input]), w(&[hidden, hidden]));
        let b = || Tensor::zeros(&[hidden]);
        Self {
            w_z,
            u_z,
            b_z: b(),
            w_r,
            u_r,
            b_r: b(),
            w_h,
            u_h,
            b_h: b(),
        }
    }

    pub fn from_tensors(t: [Tensor; 9]) -> Result<Self> {
        let [w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h] = t;
        let p = Self {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn hidden(&self) -> usize {
        self.b_z.len()
    }

    pub fn input(&self) -> usize {
        self.w_z.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (o, d) = (self.hidden(), self.input());
        for (name, t) in GRU_TENSOR_NAMES.iter().zip(self.tensors()) {
            let shape: &[usize] = match name.as_bytes()[0] {
                b'w' => &[o, d],
                b'u' => &[o, o],
                _ => &[o],
            };
            expect_shape(&format!("gru {name}"), t, shape)?;
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h, &self.b_h,
        ]
    }

    pub fn into_tensors(self) -> [Tensor; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h, self.b_h,
        ]
    }

    /// Adds the tensors to `g` as trainable leaves.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>) -> GruVars {
        GruVars(self.tensors().map(|t| g.param(t)))
    }
}

pub fn gru_step(x: &[f64], h_prev: &[f64], p: &GruParams) -> Result<Vec<f64>> {
    p.validate()?;
    if x.len() != p.input() || h_prev.len() != p.hidden() {
        return Err(Error::Shape(format!(
            "gru_step: x has {} (want {}), h has {} (want {})",
            x.len(),
            p.input(),
            h_prev.len(),
            p.hidden()
        )));
    }
    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let xv = g.constant(Tensor::vector(x.to_vec()));
    let hv = g.constant(Tensor::vector(h_prev.to_vec()));
    let out = g.gru_step(xv, hv, vars);
    Ok(g.value(out).to_vec())
}

/// Bidirectional GRU over the rows of `seq` (`len x d_in`), returning
/// `len x 2*hidden` with row `t = [fwd_t ; bwd_t]`.
pub fn bigru(seq: &Tensor, fwd: &GruParams, bwd: &GruParams) -> Result<Tensor> {
    fwd.validate()?;
    bwd.validate()?;
    if seq.shape().len() != 2 || seq.rows() == 0 {
        return Err(Error::Shape(format!(
            "bigru: need a non-empty matrix, got {:?}",
            seq.shape()
        )));
    }
    if seq.cols() != fwd.input() || seq.cols() != bwd.input() || fwd.hidden() != bwd.hidden() {
        return Err(Error::Shape(
            "bigru: direction parameters do not match the input".into(),
        ));
    }
    let mut g = Graph::new();
    let (f, b) = (fwd.bind(&mut g), bwd.bind(&mut g));
    let s = g.constant_ref(seq);
    let out = g.bigru(s, f, b, fwd.hidden());
    Ok(g.tensor(out))
}

/// `l_a x l_b` similarity matrix between the rows of `a` and `b`.
pub fn interaction_matrix(a: &Tensor, b: &Tensor, mode: Interaction, bilinear: Option<&Tensor>) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "interaction: operands {:?} and {:?} are not matrices of equal width",
            a.shape(),
            b.shape()
        )));
    }
    let mut g = Graph::new();
    let w = match (mode, bilinear) {
        (Interaction::Bilinear, None) => {
            return Err(Error::Shape("bilinear interaction requires a matrix".into()));
        }
        (Interaction::Bilinear, Some(w)) => {
            expect_shape("bilinear matrix", w, &[a.cols(), a.cols()])?;
            Some(g.constant_ref(w))
        }
        _ => None,
    };
    let (av, bv) = (g.constant_ref(a), g.constant_ref(b));
    let out = g.interaction(av, bv, mode, w);
    Ok(g.tensor(out))
}

/// Shape of one convolution + pooling block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerConfig {
    /// Kernel extent over (rows, columns).
    pub kernel: (usize, usize),
    pub kernels: usize,
    /// Pooling window over (rows, columns).
    pub pool: (usize, usize),
    pub in_channels: usize,
    pub edge: PoolEdge,
}

impl ConvLayerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.kernel.0,
            self.kernel.1,
            self.kernels,
            self.pool.0,
            self.pool.1,
            self.in_channels,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("convolution dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Output extent `(rows, cols)` after convolution and pooling, or an
    /// error if the kernel does not fit.
    pub fn output_extent(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        if rows < self.kernel.0 || cols < self.kernel.1 {
            return Err(Error::Shape(format!(
                "kernel {:?} larger than {rows}x{cols} input",
                self.kernel
            )));
        }
        let (h, w) = (rows - self.kernel.0 + 1, cols - self.kernel.1 + 1);
        let out = (self.edge.out_len(h, self.pool.0), self.edge.out_len(w, self.pool.1));
        if out.0 == 0 || out.1 == 0 {
            return Err(Error::Shape(format!(
                "pool {:?} leaves no output for {h}x{w}",
                self.pool
            )));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `kernels x in_channels x kernel.0 x kernel.1`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn zeros(cfg: &ConvLayerConfig) -> Self {
        Self {
            weight: Tensor::zeros(&Self::weight_shape(cfg)),
            bias: Tensor::zeros(&[cfg.kernels]),
        }
    }

    pub fn random(cfg: &ConvLayerConfig, scale: f64, rng: &mut impl Rng) -> Self {
        Self {
            weight: uniform(&Self::weight_shape(cfg), scale, rng),
            bias: Tensor::zeros(&[cfg.kernels]),
        }
    }

    pub fn weight_shape(cfg: &ConvLayerConfig) -> [usize; 4] {
        [cfg.kernels, cfg.in_channels, cfg.kernel.0, cfg.kernel.1]
    }

    pub fn validate(&self, cfg: &ConvLayerConfig) -> Result<()> {
        expect_shape("conv weight", &self.weight, &Self::weight_shape(cfg))?;
        expect_shape("conv bias", &self.bias, &[cfg.kernels])
    }
}

/// Valid cross-correlation of a `channels x H x W` input followed by ReLU.
pub fn conv2d(input: &Tensor, cfg: &ConvLayerConfig, params: &ConvParams) -> Result<Tensor> {
    cfg.validate()?;
    params.validate(cfg)?;
    let s = input.shape();
    if s.len() != 3 || s[0] != cfg.in_channels {
        return Err(Error::Shape(format!(
            "conv2d: input {:?} does not have {} channels",
            s, cfg.in_channels
        )));
    }
    if s[1] < cfg.kernel.0 || s[2] < cfg.kernel.1 {
        return Err(Error::Shape(format!(
            "conv2d: kernel {:?} larger than input {:?}",
            cfg.kernel, s
        )));
    }
    let mut g = Graph::new();
    let x = g.constant_ref(input);
    let w = g.constant_ref(&params.weight);
    let b = g.constant_ref(&params.bias);
    let c = g.conv2d(x, w, b);
    let out = g.relu(c);
    Ok(g.tensor(out))
}

/// Non-overlapping max pooling of a `K x H x W` tensor.
pub fn max_pool(input: &Tensor, pool: (usize, usize), edge: PoolEdge) -> Result<Tensor> {
    if input.shape().len() != 3 || pool.0 == 0 || pool.1 == 0 {
        return Err(Error::Shape(format!(
            "max_pool: input {:?}, pool {pool:?}",
            input.shape()
        )));
    }
    let mut g = Graph::new();
    let x = g.constant_ref(input);
    let out = g.max_pool(x, pool, edge);
    Ok(g.tensor(out))
}

/// Two-layer scorer: `softmax(w2 tanh(w1 x + b1) + b2)[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl MlpParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w1: Tensor::zeros(&[hidden, input]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[2, hidden]),
            b2: Tensor::zeros(&[2]),
        }
    }

    pub fn random(input: usize, hidden: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let w1 = uniform(&[hidden, input], scale, rng);
        let w2 = uniform(&[2, hidden], scale, rng);
        Self {
            w1,
            b1: Tensor::zeros(&[hidden]),
            w2,
            b2: Tensor::zeros(&[2]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d) = (self.w1.rows(), self.w1.cols());
        expect_shape("mlp w1", &self.w1, &[h, d])?;
        expect_shape("mlp b1", &self.b1, &[h])?;
        expect_shape("mlp w2", &self.w2, &[2, h])?;
        expect_shape("mlp b2", &self.b2, &[2])
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a>) -> MlpVars {
        MlpVars {
            w1: g.param(&self.w1),
            b1: g.param(&self.b1),
            w2: g.param(&self.w2),
            b2: g.param(&self.b2),
        }
    }
}

/// Graph form of the scorer; returns the class-1 probability node.
pub fn mlp_forward(g: &mut Graph<'_>, features: Var, p: MlpVars) -> Var {
    let a = g.affine(p.w1, features, Some(p.b1));
    let h = g.tanh(a);
    let logits = g.affine(p.w2, h, Some(p.b2));
    let probs = g.softmax(logits);
    g.pick(probs, 1)
}

pub fn mlp_score(features: &[f64], p: &MlpParams) -> Result<f64> {
    p.validate()?;
    if features.len() != p.w1.cols() {
        return Err(Error::Shape(format!(
            "mlp_score: {} features, weights expect {}",
            features.len(),
            p.w1.cols()
        )));
    }
    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let x = g.constant(Tensor::vector(features.to_vec()));
    let s = mlp_forward(&mut g, x, vars);
    Ok(g.scalar(s))
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if rate == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

pub fn dropout(x: &Tensor, rate: f64, training: bool, rng: &mut impl Rng) -> Result<Tensor> {
    let mask = dropout_mask(x.len(), rate, rng)?;
    if !training {
        return Ok(x.clone());
    }
    Tensor::new(
        x.shape().to_vec(),
        x.data().iter().zip(&mask).map(|(a, m)| a * m).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    // Scalar-loop evaluation of the GRU recurrences.
    fn gru_oracle(x: &[f64], h: &[f64], p: &GruParams) -> Vec<f64> {
        let o = h.len();
        let lin = |w: &Tensor, u: &Tensor, b: &Tensor, k: usize, hin: &[f64]| {
            let mut s = b.data()[k];
            for j in 0..x.len() {
                s += w.at(k, j) * x[j];
            }
            for j in 0..o {
                s += u.at(k, j) * hin[j];
            }
            s
        };
        let z: Vec<f64> = (0..o).map(|k| sig(lin(&p.w_z, &p.u_z, &p.b_z, k, h))).collect();
        let r: Vec<f64> = (0..o).map(|k| sig(lin(&p.w_r, &p.u_r, &p.b_r, k, h))).collect();
        let rh: Vec<f64> = (0..o).map(|k| r[k] * h[k]).collect();
        (0..o)
            .map(|k| {
                let c = lin(&p.w_h, &p.u_h, &p.b_h, k, &rh).tanh();
                (1.0 - z[k]) * h[k] + z[k] * c
            })
            .collect()
    }

    fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn random_gru(d: usize, o: usize, rng: &mut impl Rng) -> GruParams {
        let mut p = GruParams::random(d, o, 0.8, rng);
        for b in [&mut p.b_z, &mut p.b_r, &mut p.b_h] {
            *b = Tensor::vector(random_vec(o, rng));
        }
        p
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn gru_zero_weights_give_zero_state() {
        let p = GruParams::zeros(3, 2);
        assert_eq!(gru_step(&[1.0, -2.0, 3.0], &[0.0, 0.0], &p).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn gru_saturated_update_gate_copies_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = random_gru(3, 2, &mut rng);
        p.b_z = Tensor::vector(vec![50.0, 50.0]);
        let x = [0.3, -0.1, 0.7];
        let h = [0.5, -0.4];
        let out = gru_step(&x, &h, &p).unwrap();
        // with z = 1 the oracle reduces to the candidate state
        let mut q = p.clone();
        q.b_z = Tensor::vector(vec![1e6, 1e6]);
        assert!(close(&out, &gru_oracle(&x, &h, &q), 1e-12));
    }

    #[test]
    fn gru_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let p = random_gru(3, 3, &mut rng);
            let x = random_vec(3, &mut rng);
            let h = random_vec(3, &mut rng);
            assert!(close(&gru_step(&x, &h, &p).unwrap(), &gru_oracle(&x, &h, &p), 1e-14));
        }
    }

    #[test]
    fn gru_rejects_bad_shapes() {
        let p = GruParams::zeros(3, 2);
        assert!(gru_step(&[1.0, 2.0], &[0.0, 0.0], &p).is_err());
        assert!(gru_step(&[1.0, 2.0, 3.0], &[0.0], &p).is_err());
    }

    fn bigru_oracle(seq: &Tensor, f: &GruParams, b: &GruParams) -> Tensor {
        let len = seq.rows();
        let o = f.hidden();
        let mut fwd = vec![vec![0.0; o]; len];
        let mut h = vec![0.0; o];
        for t in 0..len {
            h = gru_oracle(seq.row(t), &h, f);
            fwd[t] = h.clone();
        }
        let mut bwd = vec![vec![0.0; o]; len];
        let mut h = vec![0.0; o];
        for t in (0..len).rev() {
            h = gru_oracle(seq.row(t), &h, b);
            bwd[t] = h.clone();
        }
        let rows: Vec<Vec<f64>> = (0..len).map(|t| [fwd[t].clone(), bwd[t].clone()].concat()).collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn bigru_matches_unrolled_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (f, b) = (random_gru(3, 2, &mut rng), random_gru(3, 2, &mut rng));
        let seq = Tensor::matrix(4, 3, random_vec(12, &mut rng)).unwrap();
        let out = bigru(&seq, &f, &b).unwrap();
        assert_eq!(out.shape(), &[4, 4]);
        assert!(close(out.data(), bigru_oracle(&seq, &f, &b).data(), 1e-14));
    }

    #[test]
    fn bigru_singleton_runs_both_directions_from_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (f, b) = (random_gru(2, 2, &mut rng), random_gru(2, 2, &mut rng));
        let x = [0.4, -0.9];
        let out = bigru(&Tensor::matrix(1, 2, x.to_vec()).unwrap(), &f, &b).unwrap();
        let want = [
            gru_step(&x, &[0.0; 2], &f).unwrap(),
            gru_step(&x, &[0.0; 2], &b).unwrap(),
        ]
        .concat();
        assert_eq!(out.data(), &want[..]);
    }

    #[test]
    fn bigru_palindrome_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_gru(2, 3, &mut rng);
        let a = random_vec(2, &mut rng);
        let b = random_vec(2, &mut rng);
        let seq = Tensor::from_rows(&[a.clone(), b, a]).unwrap();
        let out = bigru(&seq, &p, &p).unwrap();
        for t in 0..3 {
            let row = out.row(t);
            let mirror = out.row(2 - t);
            assert!(close(&row[..3], &mirror[3..], 1e-15));
            assert!(close(&row[3..], &mirror[..3], 1e-15));
        }
    }

    #[test]
    fn interaction_modes() {
        let eye = Tensor::identity(3);
        let dot = interaction_matrix(&eye, &eye, Interaction::Dot, None).unwrap();
        assert_eq!(dot, eye);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Tensor::matrix(4, 3, random_vec(12, &mut rng)).unwrap();
        let b = Tensor::matrix(5, 3, random_vec(15, &mut rng)).unwrap();
        let cos = interaction_matrix(&a, &b, Interaction::Cosine, None).unwrap();
        let cos3 = interaction_matrix(&a.map(|x| 3.0 * x), &b, Interaction::Cosine, None).unwrap();
        assert!(close(cos.data(), cos3.data(), 1e-15));

        let d = interaction_matrix(&a, &b, Interaction::Dot, None).unwrap();
        let bl = interaction_matrix(&a, &b, Interaction::Bilinear, Some(&eye)).unwrap();
        assert_eq!(d, bl);
        for i in 0..4 {
            for j in 0..5 {
                let want: f64 = (0..3).map(|t| a.at(i, t) * b.at(j, t)).sum();
                assert!((d.at(i, j) - want).abs() < 1e-15);
            }
        }
        assert!(interaction_matrix(&a, &b, Interaction::Bilinear, None).is_err());
    }

    #[test]
    fn cosine_of_zero_row_is_zero() {
        let a = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let m = interaction_matrix(&a, &a, Interaction::Cosine, None).unwrap();
        assert_eq!(m.data()[..3], [0.0, 0.0, 0.0]);
        assert!((m.at(1, 1) - 1.0).abs() < 1e-15);
    }

    fn conv_cfg(c: usize, kernel: (usize, usize), k: usize) -> ConvLayerConfig {
        ConvLayerConfig {
            kernel,
            kernels: k,
            pool: (1, 1),
            in_channels: c,
            edge: PoolEdge::Partial,
        }
    }

    #[test]
    fn conv_constant_and_identity_kernels() {
        let cfg = conv_cfg(1, (2, 2), 2);
        let mut p = ConvParams::zeros(&cfg);
        p.bias = Tensor::vector(vec![0.7, -0.3]);
        let input = Tensor::new(vec![1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let out = conv2d(&input, &cfg, &p).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        assert_eq!(out.data(), &[0.7, 0.7, 0.7, 0.7, 0.0, 0.0, 0.0, 0.0]);

        let cfg = conv_cfg(1, (1, 1), 1);
        let p = ConvParams {
            weight: Tensor::filled(&[1, 1, 1, 1], 1.0),
            bias: Tensor::zeros(&[1]),
        };
        let input = Tensor::new(vec![1, 2, 2], vec![1.0, -2.0, 3.0, -4.0]).unwrap();
        assert_eq!(conv2d(&input, &cfg, &p).unwrap().data(), &[1.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = conv_cfg(2, (3, 2), 3);
        let mut p = ConvParams::random(&cfg, 1.0, &mut rng);
        p.bias = Tensor::vector(random_vec(3, &mut rng));
        let input = Tensor::new(vec![2, 4, 5], random_vec(40, &mut rng)).unwrap();
        let out = conv2d(&input, &cfg, &p).unwrap();
        assert_eq!(out.shape(), &[3, 2, 4]);
        let w = p.weight.data();
        let x = input.data();
        for k in 0..3 {
            for i in 0..2 {
                for j in 0..4 {
                    let mut s = p.bias.data()[k];
                    for c in 0..2 {
                        for a in 0..3 {
                            for b in 0..2 {
                                s += w[((k * 2 + c) * 3 + a) * 2 + b] * x[(c * 4 + i + a) * 5 + j + b];
                            }
                        }
                    }
                    assert!((out.data()[(k * 2 + i) * 4 + j] - s.max(0.0)).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let cfg = conv_cfg(1, (3, 3), 1);
        let input = Tensor::zeros(&[1, 2, 5]);
        assert!(conv2d(&input, &cfg, &ConvParams::zeros(&cfg)).is_err());
    }

    #[test]
    fn pooling_cases() {
        let c = Tensor::filled(&[1, 4, 4], 2.5);
        let out = max_pool(&c, (2, 2), PoolEdge::Partial).unwrap();
        assert_eq!(out.data(), &[2.5; 4]);

        let mut m = Tensor::zeros(&[1, 4, 4]);
        m.data_mut()[0] = 7.0;
        assert_eq!(max_pool(&m, (2, 2), PoolEdge::Partial).unwrap().data()[0], 7.0);

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::new(vec![2, 5, 5], random_vec(50, &mut rng)).unwrap();
        let out = max_pool(&x, (3, 3), PoolEdge::Partial).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut best = f64::NEG_INFINITY;
                    for a in 3 * i..(3 * i + 3).min(5) {
                        for b in 3 * j..(3 * j + 3).min(5) {
                            best = best.max(x.data()[(k * 5 + a) * 5 + b]);
                        }
                    }
                    assert_eq!(out.data()[(k * 2 + i) * 2 + j], best);
                }
            }
        }
        let dropped = max_pool(&x, (3, 3), PoolEdge::Drop).unwrap();
        assert_eq!(dropped.shape(), &[2, 1, 1]);
    }

    #[test]
    fn mlp_cases() {
        assert_eq!(mlp_score(&[1.0, 2.0], &MlpParams::zeros(2, 3)).unwrap(), 0.5);
        let mut p = MlpParams::zeros(1, 1);
        p.b2 = Tensor::vector(vec![0.0, 10.0]);
        let want = 1.0 / (1.0 + (-10f64).exp());
        assert!((mlp_score(&[0.0], &p).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.99995).abs() < 1e-5);
        assert!(mlp_score(&[0.0, 1.0], &p).is_err());
    }

    #[test]
    fn dropout_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Tensor::filled(&[100_000], 1.0);
        assert_eq!(dropout(&x, 0.5, false, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.0, true, &mut rng).unwrap(), x);
        let y = dropout(&x, 0.5, true, &mut rng).unwrap();
        let mean = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(dropout(&x, 1.0, true, &mut rng).is_err());
    }

    proptest::proptest! {
        #[test]
        fn pooled_values_come_from_the_input(
            data in proptest::collection::vec(-5.0f64..5.0, 30),
            ph in 1usize..4,
            pw in 1usize..4,
        ) {
            let x = Tensor::new(vec![2, 3, 5], data.clone()).unwrap();
            let out = max_pool(&x, (ph, pw), PoolEdge::Partial).unwrap();
            for v in out.data() {
                proptest::prop_assert!(data.contains(v));
            }
        }
    }
}
