//! Central finite-difference checks for graph operations.
//!
//! The scalar probed is `L = Σ r·f(inputs)` for a fixed random `r`, evaluated
//! in double precision from the single-precision op outputs. Each input element
//! is nudged by `±h` and `±h/2`; the step actually taken is recomputed from the
//! rounded `f32` values so input rounding does not bias the quotient, and the
//! two central quotients are Richardson-combined so that steps large enough to
//! swamp `f32` output rounding add no visible truncation error.

use orchardseg::grad::{Graph, Tensor, Var};
use orchardseg::seed;
use rand::Rng;

pub type Build<'a> = &'a dyn Fn(&mut Graph, &[Var]) -> Var;

pub fn random_tensor(rng: &mut impl Rng, shape: [usize; 4], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Tensor whose entries avoid `(-margin, margin)`, keeping kinks out of reach.
pub fn away_from_zero(rng: &mut impl Rng, shape: [usize; 4], hi: f32, margin: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(margin..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn projected(build: Build, inputs: &[Tensor], r: &[f32]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.value(out)
        .data()
        .iter()
        .zip(r)
        .map(|(&o, &w)| f64::from(o) * f64::from(w))
        .sum()
}

/// Relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` for
/// every input, in input order.
pub fn relative_errors(build: Build, inputs: &[Tensor], h: f32, projection_seed: u64) -> Vec<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let shape = g.value(out).shape();
    let mut rng = seed::rng(projection_seed);
    let r = random_tensor(&mut rng, shape, -1.0, 1.0);
    g.backward_with(out, r.clone()).unwrap();

    let mut errors = Vec::with_capacity(inputs.len());
    for (i, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for (j, &a) in analytic.iter().enumerate() {
            let central = |step: f32| {
                let mut plus = inputs.to_vec();
                let mut minus = inputs.to_vec();
                let x = inputs[i].data()[j];
                plus[i].data_mut()[j] = x + step;
                minus[i].data_mut()[j] = x - step;
                let taken = f64::from(x + step) - f64::from(x - step);
                (projected(build, &plus, r.data()) - projected(build, &minus, r.data())) / taken
            };
            let numeric = (4.0 * central(h / 2.0) - central(h)) / 3.0;
            let a = f64::from(a);
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        let scale = na.sqrt().max(nn.sqrt());
        errors.push(if scale < 1e-12 {
            diff.sqrt()
        } else {
            diff.sqrt() / scale
        });
    }
    errors
}
