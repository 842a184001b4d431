//! Procedural textures standing in for image-based texture libraries.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::seed::mix64;

/// Hue, saturation, value, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hsv<T> {
    pub h: T,
    pub s: T,
    pub v: T,
}

impl<T: Real> Hsv<T> {
    pub fn new(h: T, s: T, v: T) -> Self {
        Self { h, s, v }
    }

    /// Shifts each component; hue wraps, saturation and value clamp.
    pub fn shifted(self, by: [T; 3]) -> Self {
        let h = self.h + by[0];
        Self {
            h: h - h.floor(),
            s: (self.s + by[1]).clamp01(),
            v: (self.v + by[2]).clamp01(),
        }
    }

    pub fn to_rgb(self) -> [T; 3] {
        let six = T::lit(6.0);
        let h = (self.h - self.h.floor()) * six;
        let sector = h.floor();
        let f = h - sector;
        let (s, v) = (self.s.clamp01(), self.v.clamp01());
        let one = T::one();
        let p = v * (one - s);
        let q = v * (one - s * f);
        let t = v * (one - s * (one - f));
        match sector.to_i32().unwrap_or(0).rem_euclid(6) {
            0 => [v, t, p],
            1 => [q, v, p],
            2 => [p, v, t],
            3 => [p, q, v],
            4 => [t, p, v],
            _ => [v, p, q],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    Solid,
    ValueNoise,
    Stripes,
    Checker,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProceduralTexture<T> {
    pub kind: TextureKind,
    pub base: Hsv<T>,
    /// Second color used by the patterned kinds.
    pub accent: Hsv<T>,
    /// Per-channel HSV shift applied to both colors.
    pub hsv_jitter: [T; 3],
    /// Pattern frequency in cycles per meter.
    pub scale: T,
    pub noise_seed: u64,
}

impl<T: Real> ProceduralTexture<T> {
    pub fn solid(base: Hsv<T>) -> Self {
        Self {
            kind: TextureKind::Solid,
            base,
            accent: base,
            hsv_jitter: [T::zero(); 3],
            scale: T::one(),
            noise_seed: 0,
        }
    }

    /// Effective colors after jitter.
    pub fn colors(&self) -> (Hsv<T>, Hsv<T>) {
        (self.base.shifted(self.hsv_jitter), self.accent.shifted(self.hsv_jitter))
    }

    /// Random texture: random patterned kind, contrasting accent, jittered HSV.
    /// Flat colors are excluded, mirroring texture libraries built from photos.
    pub fn random<R: Rng>(rng: &mut R, max_jitter: [f64; 3]) -> Self {
        let kind = match rng.random_range(0..3) {
            0 => TextureKind::ValueNoise,
            1 => TextureKind::Stripes,
            _ => TextureKind::Checker,
        };
        let base = Hsv::new(
            T::lit(rng.random::<f64>()),
            T::lit(rng.random_range(0.0..1.0)),
            T::lit(rng.random_range(0.15..1.0)),
        );
        let accent_v: f64 = if base.v.as_f64() > 0.55 {
            base.v.as_f64() - rng.random_range(0.3..0.5)
        } else {
            base.v.as_f64() + rng.random_range(0.3..0.5)
        };
        let accent = Hsv::new(
            T::lit((base.h.as_f64() + rng.random_range(-0.15..0.15)).rem_euclid(1.0)),
            T::lit(rng.random_range(0.0..1.0)),
            T::lit(accent_v.clamp(0.0, 1.0)),
        );
        let mut jitter = [T::zero(); 3];
        for (j, m) in jitter.iter_mut().zip(max_jitter) {
            *j = if m > 0.0 {
                T::lit(rng.random_range(-m..=m))
            } else {
                T::zero()
            };
        }
        Self {
            kind,
            base,
            accent,
            hsv_jitter: jitter,
            scale: T::lit(rng.random_range(20.0..60.0)),
            noise_seed: rng.random(),
        }
    }

    /// Pattern weight in `[0, 1]` selecting between base (0) and accent (1),
    /// averaged over a footprint `width.0` by `width.1` meters along `u` and `v`.
    fn pattern(&self, u: T, v: T, width: (T, T)) -> T {
        let (x, y) = (u * self.scale, v * self.scale);
        let (wx, wy) = (width.0 * self.scale, width.1 * self.scale);
        let w = wx.max(wy);
        match self.kind {
            TextureKind::Solid => T::zero(),
            TextureKind::Stripes => filtered_parity(x, wx),
            TextureKind::Checker => {
                // Box-filtered XOR of two independent square waves.
                let (a, b) = (filtered_parity(x, wx), filtered_parity(y, wy));
                a + b - T::lit(2.0) * a * b
            }
            TextureKind::ValueNoise => {
                // Two octaves of smooth lattice noise, each faded to its mean
                // once its cells shrink below the footprint.
                let two = T::lit(2.0);
                let n0 = value_noise(x, y, self.noise_seed);
                let n1 = value_noise(x * two, y * two, self.noise_seed ^ 0x5bd1_e995);
                fade_octave(n0, w) * T::lit(0.67) + fade_octave(n1, w * two) * T::lit(0.33)
            }
        }
    }
}

/// Contrast kept by a noise octave whose lattice cells are `w` footprints wide.
fn fade_octave<T: Real>(n: T, w: T) -> T {
    let keep = ((T::lit(0.75) - w) / T::lit(0.5)).clamp01();
    let half = T::lit(0.5);
    half + (n - half) * keep
}

/// Mean of `parity(floor(t))` over `[x - w/2, x + w/2]`.
fn filtered_parity<T: Real>(x: T, w: T) -> T {
    if w <= T::lit(1e-9) {
        return parity(x.floor());
    }
    // Antiderivative of the period-2 square wave.
    let integral = |t: T| {
        let h = t * T::lit(0.5);
        let f = h - h.floor();
        h.floor() + (T::lit(2.0) * f - T::one()).max(T::zero())
    };
    let half = w * T::lit(0.5);
    ((integral(x + half) - integral(x - half)) / w).clamp01()
}

fn parity<T: Real>(k: T) -> T {
    let k = k.to_i64().unwrap_or(0);
    if k.rem_euclid(2) == 0 {
        T::zero()
    } else {
        T::one()
    }
}

fn lattice<T: Real>(ix: i64, iy: i64, seed: u64) -> T {
    let h = mix64(seed ^ mix64((ix as u64).wrapping_mul(0x9E37_79B9) ^ (iy as u64).rotate_left(32)));
    T::lit((h >> 11) as f64 / (1u64 << 53) as f64)
}

/// Continuous value noise: lattice values blended with a C1 smoothstep.
pub fn value_noise<T: Real>(x: T, y: T, seed: u64) -> T {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx.to_i64().unwrap_or(0), fy.to_i64().unwrap_or(0));
    let smooth = |t: T| t * t * (T::lit(3.0) - T::lit(2.0) * t);
    let (sx, sy) = (smooth(x - fx), smooth(y - fy));
    let a = lattice::<T>(ix, iy, seed);
    let b = lattice::<T>(ix + 1, iy, seed);
    let c = lattice::<T>(ix, iy + 1, seed);
    let d = lattice::<T>(ix + 1, iy + 1, seed);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

/// RGB color of `tex` at surface coordinates `(u, v)` (meters).
pub fn eval_texture<T: Real>(tex: &ProceduralTexture<T>, u: T, v: T) -> [T; 3] {
    eval_texture_filtered(tex, u, v, (T::zero(), T::zero()))
}

/// [`eval_texture`] averaged over a footprint `width` meters across along
/// `u` and `v`, so patterns finer than a pixel blend to their mean instead of
/// aliasing.
pub fn eval_texture_filtered<T: Real>(tex: &ProceduralTexture<T>, u: T, v: T, width: (T, T)) -> [T; 3] {
    let (base, accent) = tex.colors();
    let a = base.to_rgb();
    if tex.kind == TextureKind::Solid {
        return a;
    }
    let b = accent.to_rgb();
    let w = tex.pattern(u, v, width);
    [0, 1, 2].map(|i| (a[i] + (b[i] - a[i]) * w).clamp01())
}
