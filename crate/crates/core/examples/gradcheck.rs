//! Compares the reverse-mode gradient of a bidirectional GRU against
//! central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dmn_rank::nn::{grad_check, GruVars, Tensor};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (input, hidden, steps) = (3, 2, 4);
    let mut random = |shape: &[usize]| {
        let mut t = Tensor::zeros(shape);
        t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        t
    };
    let mut inputs = Vec::new();
    for _ in 0..2 {
        for _ in 0..3 {
            inputs.push(random(&[hidden, input]));
            inputs.push(random(&[hidden, hidden]));
            inputs.push(random(&[hidden]));
        }
    }
    inputs.push(random(&[steps, input]));
    let weights: Vec<f64> = (0..steps * 2 * hidden).map(|k| 1.0 / (k + 1) as f64).collect();

    let report = grad_check(&inputs, 1e-5, |g, v| {
        let fwd = GruVars(std::array::from_fn(|k| v[k]));
        let bwd = GruVars(std::array::from_fn(|k| v[9 + k]));
        let states = g.bigru(v[18], fwd, bwd, hidden);
        g.weighted_sum(states, weights.clone())
    });
    println!(
        "{} elements, max relative error {:.2e}, kink margin {}",
        report.elements, report.max_rel_error, report.kink_margin
    );
}
