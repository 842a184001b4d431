//! Independent reference computations the library is checked against.

use orchardseg::raster::Image;
use rand::Rng;
use serde::Deserialize;

/// One Welch reference case computed with 50-digit arithmetic.
pub struct WelchCase {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub t: f64,
    pub nu: f64,
    pub p: f64,
}

#[derive(Deserialize)]
struct RawCase {
    x_bits: Vec<u64>,
    y_bits: Vec<u64>,
    t: String,
    nu: String,
    p: String,
}

#[derive(Deserialize)]
struct RawFixture {
    cases: Vec<RawCase>,
}

pub fn welch_cases() -> Vec<WelchCase> {
    let text = include_str!("../fixtures/welch_oracle.json");
    let raw: RawFixture = serde_json::from_str(text).expect("fixture parses");
    raw.cases
        .into_iter()
        .map(|c| WelchCase {
            xs: c.x_bits.into_iter().map(f64::from_bits).collect(),
            ys: c.y_bits.into_iter().map(f64::from_bits).collect(),
            t: c.t.parse().unwrap(),
            nu: c.nu.parse().unwrap(),
            p: c.p.parse().unwrap(),
        })
        .collect()
}

/// `|a − b| ≤ tol · max(1, |b|)`: absolute near zero, relative for large values.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Unreduced numerator / denominator pairs for IOU, FP rate and FN rate,
/// counted pixel by pixel with the same empty-set conventions as the library.
pub struct BruteForceRates {
    pub iou: (u64, u64),
    pub fp: (u64, u64),
    pub fn_: (u64, u64),
}

pub fn brute_force_rates(pred: &[bool], truth: &[bool]) -> BruteForceRates {
    let (mut inter, mut union, mut fp, mut fn_, mut positives) = (0, 0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        if p && t {
            inter += 1;
        }
        if p || t {
            union += 1;
        }
        if p && !t {
            fp += 1;
        }
        if t && !p {
            fn_ += 1;
        }
        if t {
            positives += 1;
        }
    }
    BruteForceRates {
        iou: if union == 0 { (1, 1) } else { (inter, union) },
        fp: (fp, pred.len() as u64),
        fn_: if positives == 0 { (0, 1) } else { (fn_, positives) },
    }
}

/// True when `numer / denom` equals the pair `(n, d)` as rationals.
pub fn same_ratio(numer: u64, denom: u64, (n, d): (u64, u64)) -> bool {
    numer * d == n * denom
}

pub fn random_mask(rng: &mut impl Rng, w: usize, h: usize, density: f64) -> (Vec<bool>, Image<f32>) {
    let bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
    let img = Image::from_vec(w, h, 1, bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap();
    (bits, img)
}
