//! Color-wheel encoding of flow fields.
//!
//! Direction picks the hue on a 55-entry wheel (Middlebury segment counts),
//! magnitude blends from white toward the wheel color.

use serde::{Deserialize, Serialize};

use crate::raster::{FlowField, Image};
use crate::scalar::Real;

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;

pub const WHEEL_SIZE: usize = RY + YG + GC + CB + BM + MR;

/// Wheel entries as RGB in `[0, 1]`, starting at red and going through
/// yellow, green, cyan, blue and magenta.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorWheel {
    entries: Vec<[f64; 3]>,
}

impl Default for ColorWheel {
    fn default() -> Self {
        Self::new()
    }
}

impl ColorWheel {
    pub fn new() -> Self {
        let ramp = |i: usize, n: usize| (255.0 * i as f64 / n as f64).floor();
        let mut entries = Vec::with_capacity(WHEEL_SIZE);
        entries.extend((0..RY).map(|i| [255.0, ramp(i, RY), 0.0]));
        entries.extend((0..YG).map(|i| [255.0 - ramp(i, YG), 255.0, 0.0]));
        entries.extend((0..GC).map(|i| [0.0, 255.0, ramp(i, GC)]));
        entries.extend((0..CB).map(|i| [0.0, 255.0 - ramp(i, CB), 255.0]));
        entries.extend((0..BM).map(|i| [ramp(i, BM), 0.0, 255.0]));
        entries.extend((0..MR).map(|i| [255.0, 0.0, 255.0 - ramp(i, MR)]));
        Self {
            entries: entries.into_iter().map(|c| c.map(|v| v / 255.0)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, i: usize) -> [f64; 3] {
        self.entries[i]
    }

    /// Wheel color for direction `angle` (radians), linearly interpolated.
    pub fn color_at<T: Real>(&self, angle: T) -> [T; 3] {
        let n = self.entries.len();
        let turns = angle.as_f64() / std::f64::consts::TAU;
        let pos = (turns - turns.floor()) * n as f64;
        let k0 = (pos.floor() as usize).min(n - 1);
        let k1 = (k0 + 1) % n;
        let f = pos - k0 as f64;
        let (a, b) = (self.entries[k0], self.entries[k1]);
        [0, 1, 2].map(|c| T::lit((1.0 - f) * a[c] + f * b[c]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "max_mag")]
pub enum FlowNormalization {
    /// Saturate at the largest valid magnitude in the image.
    PerImageMax,
    /// Saturate at a fixed magnitude in pixels.
    Fixed(f64),
}

impl Default for FlowNormalization {
    fn default() -> Self {
        FlowNormalization::Fixed(8.0)
    }
}

/// Color of a single flow vector given a saturation magnitude.
pub fn flow_color<T: Real>(wheel: &ColorWheel, u: T, v: T, max_mag: T) -> [T; 3] {
    let mag = u.hypot(v);
    if mag == T::zero() || max_mag <= T::zero() {
        return [T::one(); 3];
    }
    let sat = (mag / max_mag).min(T::one());
    let hue = wheel.color_at(v.atan2(u));
    hue.map(|c| T::one() - sat * (T::one() - c))
}

pub fn colorize_flow<T: Real>(flow: &FlowField<T>, norm: FlowNormalization) -> Image<T> {
    let wheel = ColorWheel::new();
    let max_mag = match norm {
        FlowNormalization::Fixed(m) => T::lit(m),
        FlowNormalization::PerImageMax => (0..flow.height())
            .flat_map(|y| (0..flow.width()).map(move |x| (x, y)))
            .filter(|&(x, y)| flow.is_valid(x, y))
            .map(|(x, y)| flow.magnitude(x, y))
            .fold(T::zero(), T::max),
    };
    Image::from_fn(flow.width(), flow.height(), |x, y| {
        if !flow.is_valid(x, y) {
            return [T::zero(); 3];
        }
        let (u, v) = flow.get(x, y);
        flow_color(&wheel, u, v, max_mag)
    })
}
