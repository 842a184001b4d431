//! Binarization, confusion counts, IOU / FP / FN rates, dataset aggregation
//! and Welch's t-test.

use std::io::{Read, Write};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::scalar::Real;
use crate::segnet::{infer, Checkpoint, Sample};

/// Predictions at or above this are foreground.
pub const DEFAULT_THRESHOLD: f32 = 0.5;

/// Maps `pred ≥ threshold` to 1 and everything else to 0.
pub fn binarize<T: Real>(pred: &Image<T>, threshold: T) -> Result<Image<T>> {
    if pred.channels() != 1 {
        return Err(Error::Shape(format!("prediction has {} channels", pred.channels())));
    }
    if let Some(bad) = pred.data().iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
        return Err(Error::Domain(format!("prediction value {bad} outside [0, 1]")));
    }
    Ok(pred.map(|v| if v >= threshold { T::one() } else { T::zero() }))
}

/// Pixel counts of the four truth/prediction combinations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// `|T ∩ P|`
    pub tp: u64,
    /// `|T⁻ ∩ P|`
    pub fp: u64,
    /// `|T ∩ P⁻|`
    pub fn_: u64,
    /// `|T⁻ ∩ P⁻|`
    pub tn: u64,
}

fn is_binary<T: Real>(v: T) -> bool {
    v == T::zero() || v == T::one()
}

/// Counts pixels of two binary masks of equal size.
pub fn confusion<T: Real>(pred: &Image<T>, truth: &Image<T>) -> Result<ConfusionCounts> {
    if pred.dims() != truth.dims() || pred.channels() != 1 || truth.channels() != 1 {
        return Err(Error::Shape(format!(
            "prediction {:?}x{} vs truth {:?}x{}",
            pred.dims(),
            pred.channels(),
            truth.dims(),
            truth.channels()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        if !is_binary(p) || !is_binary(t) {
            return Err(Error::Domain(format!("non-binary mask values {p}/{t}")));
        }
        match (t == T::one(), p == T::one()) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `|T ∩ P| / |T ∪ P|`, defined as 1 when both masks are empty.
    pub fn iou_ratio(&self) -> Ratio<u64> {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            Ratio::from_integer(1)
        } else {
            Ratio::new(self.tp, union)
        }
    }

    /// `|T⁻ ∩ P| / |T ∪ T⁻|`: false positives over all pixels.
    pub fn fp_ratio(&self) -> Ratio<u64> {
        let total = self.total();
        if total == 0 {
            Ratio::from_integer(0)
        } else {
            Ratio::new(self.fp, total)
        }
    }

    /// `|T ∩ P⁻| / |T|`, defined as 0 when the truth is empty.
    pub fn fn_ratio(&self) -> Ratio<u64> {
        let truth = self.tp + self.fn_;
        if truth == 0 {
            Ratio::from_integer(0)
        } else {
            Ratio::new(self.fn_, truth)
        }
    }

    pub fn iou(&self) -> f64 {
        ratio_f64(self.iou_ratio())
    }

    pub fn fp_rate(&self) -> f64 {
        ratio_f64(self.fp_ratio())
    }

    pub fn fn_rate(&self) -> f64 {
        ratio_f64(self.fn_ratio())
    }
}

fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Per-image metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub sample_id: String,
    pub iou: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
}

impl MetricsRecord {
    pub fn from_counts(sample_id: impl Into<String>, c: &ConfusionCounts) -> Self {
        Self {
            sample_id: sample_id.into(),
            iou: c.iou(),
            fp_rate: c.fp_rate(),
            fn_rate: c.fn_rate(),
        }
    }
}

/// The three metrics by name, in report order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Iou,
    FpRate,
    FnRate,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Iou, Metric::FpRate, Metric::FnRate];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Iou => "iou",
            Metric::FpRate => "fp_rate",
            Metric::FnRate => "fn_rate",
        }
    }

    pub fn of(self, r: &MetricsRecord) -> f64 {
        match self {
            Metric::Iou => r.iou,
            Metric::FpRate => r.fp_rate,
            Metric::FnRate => r.fn_rate,
        }
    }
}

/// Mean and sample standard deviation of one metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample (n−1) standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("no values to aggregate".into()));
        }
        let (mean, var) = mean_var(values);
        Ok(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

/// Mean and sample variance (0 for fewer than two values).
fn mean_var<T: Real>(values: &[T]) -> (T, T) {
    let n = T::from_usize_lossy(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    if values.len() < 2 {
        return (mean, T::zero());
    }
    let ss = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
    (mean, ss / (n - T::one()))
}

/// Per-image rows with their aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRecord>,
}

impl MetricsTable {
    /// Sorts rows by sample id for deterministic output.
    pub fn new(mut rows: Vec<MetricsRecord>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("metrics table".into()));
        }
        rows.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        Ok(Self { rows })
    }

    pub fn values(&self, metric: Metric) -> Vec<f64> {
        self.rows.iter().map(|r| metric.of(r)).collect()
    }

    pub fn aggregate(&self, metric: Metric) -> Aggregate {
        Aggregate::of(&self.values(metric)).expect("table is non-empty")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["sample_id", "iou", "fp_rate", "fn_rate"] {
            return Err(Error::Csv(format!("unexpected header {headers:?}")));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<MetricsRecord>, _>>()
            .map_err(|e| Error::Csv(e.to_string()))?;
        for row in &rows {
            for m in Metric::ALL {
                if !(0.0..=1.0).contains(&m.of(row)) {
                    return Err(Error::Csv(format!(
                        "{} of `{}` outside [0, 1]",
                        m.name(),
                        row.sample_id
                    )));
                }
            }
        }
        Self::new(rows)
    }
}

/// Anything that turns a sample into a foreground probability map.
pub trait Predictor {
    fn predict(&self, sample: &Sample) -> Result<Image<f32>>;
}

impl Predictor for Checkpoint {
    fn predict(&self, sample: &Sample) -> Result<Image<f32>> {
        infer(self, &sample.input)
    }
}

/// Predicts the ground-truth mask itself; a perfect reference.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, sample: &Sample) -> Result<Image<f32>> {
        target_image(sample)
    }
}

fn target_image(sample: &Sample) -> Result<Image<f32>> {
    let [_, _, h, w] = sample.target.shape();
    Image::from_vec(w, h, 1, sample.target.data().to_vec())
}

/// Scores every sample at `threshold`; rows come back sorted by id.
pub fn evaluate_dataset(
    predictor: &(impl Predictor + ?Sized),
    dataset: &[Sample],
    threshold: f32,
) -> Result<MetricsTable> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation dataset".into()));
    }
    let rows = dataset
        .iter()
        .map(|s| {
            let pred = binarize(&predictor.predict(s)?, threshold)?;
            let c = confusion(&pred, &target_image(s)?)?;
            Ok(MetricsRecord::from_counts(s.id.clone(), &c))
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsTable::new(rows)
}

/// Outcome of Welch's unequal-variance t-test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult<T> {
    pub t: T,
    /// Welch–Satterthwaite degrees of freedom.
    pub nu: T,
    /// Two-tailed p-value.
    pub p: T,
}

/// Two-sample Welch's t-test.
pub fn welch_t_test<T: Real>(xs: &[T], ys: &[T]) -> Result<WelchResult<T>> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::Domain(format!(
            "welch test needs at least two samples per group, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite sample value".into()));
    }
    let (m1, v1) = mean_var(xs);
    let (m2, v2) = mean_var(ys);
    let n1 = T::from_usize_lossy(xs.len());
    let n2 = T::from_usize_lossy(ys.len());
    let a = v1 / n1;
    let b = v2 / n2;
    let se2 = a + b;
    if se2 == T::zero() {
        if m1 == m2 {
            return Ok(WelchResult {
                t: T::zero(),
                nu: n1 + n2 - T::lit(2.0),
                p: T::one(),
            });
        }
        return Err(Error::Domain(
            "both samples have zero variance but different means".into(),
        ));
    }
    let t = (m1 - m2) / se2.sqrt();
    let nu = se2 * se2 / (a * a / (n1 - T::one()) + b * b / (n2 - T::one()));
    let half = T::lit(0.5);
    let p = regularized_incomplete_beta(nu / (nu + t * t), nu * half, half)?;
    Ok(WelchResult { t, nu, p: p.clamp01() })
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, 9 terms).
pub fn ln_gamma<T: Real>(x: T) -> T {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < T::lit(0.5) {
        // Reflection keeps the series in its accurate range.
        let pi = T::PI();
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = T::lit(COEF[0]);
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += T::lit(c) / (x + T::from_usize_lossy(i));
    }
    let t = x + T::lit(7.5);
    T::lit(0.5) * (T::lit(2.0) * T::PI()).ln() + (x + T::lit(0.5)) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta<T: Real>(x: T, a: T, b: T) -> Result<T> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(Error::Domain(format!(
            "incomplete beta argument x = {x} outside [0, 1]"
        )));
    }
    if !(a > T::zero() && b > T::zero() && a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("incomplete beta needs a, b > 0, got {a}, {b}")));
    }
    if x == T::zero() {
        return Ok(T::zero());
    }
    if x == T::one() {
        return Ok(T::one());
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (T::one() - x).ln();
    let front = ln_front.exp();
    // The fraction converges fast for x below the mean; use symmetry otherwise.
    if x < (a + T::one()) / (a + b + T::lit(2.0)) {
        Ok(front * beta_fraction(x, a, b)? / a)
    } else {
        Ok(T::one() - front * beta_fraction(T::one() - x, b, a)? / b)
    }
}

fn beta_fraction<T: Real>(x: T, a: T, b: T) -> Result<T> {
    let tiny = T::lit(1e-300).max(T::min_positive_value());
    let eps = T::epsilon();
    let one = T::one();
    let two = T::lit(2.0);
    let guard = |v: T| if v.abs() < tiny { tiny } else { v };
    let mut c = one;
    let mut d = one / guard(one - (a + b) * x / (a + one));
    let mut h = d;
    for m in 1..=10_000usize {
        let m = T::from_usize_lossy(m);
        let m2 = two * m;
        let even = m * (b - m) * x / ((a + m2 - one) * (a + m2));
        d = one / guard(one + even * d);
        c = guard(one + even / c);
        h *= d * c;
        let odd = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + one));
        d = one / guard(one + odd * d);
        c = guard(one + odd / c);
        let delta = d * c;
        h *= delta;
        if (delta - one).abs() <= eps {
            return Ok(h);
        }
    }
    Err(Error::Domain(format!(
        "incomplete beta did not converge for x={x}, a={a}, b={b}"
    )))
}

/// One row of a comparison report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: f64,
    pub nu: f64,
    pub p: f64,
}

/// Welch comparison of every metric between two tables.
pub fn compare_tables(a: &MetricsTable, b: &MetricsTable) -> Result<Vec<ComparisonRow>> {
    Metric::ALL
        .iter()
        .map(|&m| {
            let xs = a.values(m);
            let ys = b.values(m);
            let w = welch_t_test(&xs, &ys)?;
            Ok(ComparisonRow {
                metric: m.name().to_string(),
                mean_a: a.aggregate(m).mean,
                mean_b: b.aggregate(m).mean,
                t: w.t,
                nu: w.nu,
                p: w.p,
            })
        })
        .collect()
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_comparison_csv<R: Read>(input: R) -> Result<Vec<ComparisonRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<Vec<ComparisonRow>, _>>()
        .map_err(|e| Error::Csv(e.to_string()))
}
