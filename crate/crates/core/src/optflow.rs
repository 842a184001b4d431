//! Coarse-to-fine Horn–Schunck optical flow with bilinear warping.
//!
//! Frames are reduced to luminance on a 0–255 scale, so `alpha` has the same
//! meaning as in the classical formulation on 8-bit images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{FlowField, Image};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    /// Smoothness weight.
    pub alpha: f64,
    pub pyramid_levels: usize,
    pub scale_factor: f64,
    pub iterations_per_level: usize,
    pub warp_passes_per_level: usize,
    /// Radius of the median filter applied to the flow after each warp pass;
    /// 0 disables it.
    pub median_radius: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            alpha: 60.0,
            pyramid_levels: 3,
            scale_factor: 0.5,
            iterations_per_level: 200,
            warp_passes_per_level: 3,
            median_radius: 2,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if self.pyramid_levels < 1 {
            return Err(Error::config("pyramid_levels", "must be >= 1"));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor < 1.0) {
            return Err(Error::config(
                "scale_factor",
                format!("must lie in (0, 1), got {}", self.scale_factor),
            ));
        }
        if self.iterations_per_level < 1 {
            return Err(Error::config("iterations_per_level", "must be >= 1"));
        }
        if self.warp_passes_per_level < 1 {
            return Err(Error::config("warp_passes_per_level", "must be >= 1"));
        }
        Ok(())
    }
}

/// Smallest side allowed at the coarsest pyramid level.
pub const MIN_LEVEL_SIZE: usize = 8;

fn level_size(n: usize, scale: f64, level: usize) -> usize {
    let mut n = n;
    for _ in 0..level {
        n = ((n as f64) * scale).round() as usize;
    }
    n
}

/// Separable [1 4 6 4 1] / 16 blur with clamp-to-edge borders.
fn blur<T: Real>(img: &Image<T>) -> Image<T> {
    let k = [1.0, 4.0, 6.0, 4.0, 1.0].map(|v| T::lit(v / 16.0));
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut tmp = Image::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let s = (0..5)
                    .map(|i| k[i] * img.get_clamped(x as isize + i as isize - 2, y as isize, c))
                    .sum();
                tmp.set(x, y, c, s);
            }
        }
    }
    let mut out = Image::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let s = (0..5)
                    .map(|i| k[i] * tmp.get_clamped(x as isize, y as isize + i as isize - 2, c))
                    .sum();
                out.set(x, y, c, s);
            }
        }
    }
    out
}

/// Bilinear resize with pixel-center alignment.
pub fn resize<T: Real>(img: &Image<T>, width: usize, height: usize) -> Image<T> {
    let sx = T::from_usize_lossy(img.width()) / T::from_usize_lossy(width);
    let sy = T::from_usize_lossy(img.height()) / T::from_usize_lossy(height);
    let half = T::lit(0.5);
    let mut out = Image::new(width, height, img.channels());
    for y in 0..height {
        let fy = (T::from_usize_lossy(y) + half) * sy - half;
        for x in 0..width {
            let fx = (T::from_usize_lossy(x) + half) * sx - half;
            for c in 0..img.channels() {
                out.set(x, y, c, img.sample_bilinear(fx, fy, c));
            }
        }
    }
    out
}

/// Gaussian-style pyramid; level 0 is the input itself.
pub fn build_pyramid<T: Real>(img: &Image<T>, levels: usize, scale_factor: f64) -> Result<Vec<Image<T>>> {
    if levels < 1 {
        return Err(Error::config("pyramid_levels", "must be >= 1"));
    }
    if !(scale_factor > 0.0 && scale_factor < 1.0) {
        return Err(Error::config(
            "scale_factor",
            format!("must lie in (0, 1), got {scale_factor}"),
        ));
    }
    let (w, h) = (
        level_size(img.width(), scale_factor, levels - 1),
        level_size(img.height(), scale_factor, levels - 1),
    );
    if w < MIN_LEVEL_SIZE || h < MIN_LEVEL_SIZE {
        return Err(Error::Shape(format!(
            "{}x{} image is too small for {levels} levels at scale {scale_factor}: coarsest would be {w}x{h}, need {MIN_LEVEL_SIZE}x{MIN_LEVEL_SIZE}",
            img.width(),
            img.height()
        )));
    }
    let mut pyramid = vec![img.clone()];
    for level in 1..levels {
        let prev = &pyramid[level - 1];
        let next = resize(
            &blur(prev),
            level_size(img.width(), scale_factor, level),
            level_size(img.height(), scale_factor, level),
        );
        pyramid.push(next);
    }
    Ok(pyramid)
}

/// `out(p) = img(p + flow(p))`, bilinear, clamp-to-edge.
pub fn warp_bilinear<T: Real>(img: &Image<T>, flow: &FlowField<T>) -> Result<Image<T>> {
    if img.dims() != flow.dims() {
        return Err(Error::Shape(format!(
            "image {:?} and flow {:?} differ in size",
            img.dims(),
            flow.dims()
        )));
    }
    let mut out = Image::new(img.width(), img.height(), img.channels());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (u, v) = flow.get(x, y);
            let (sx, sy) = (T::from_usize_lossy(x) + u, T::from_usize_lossy(y) + v);
            for c in 0..img.channels() {
                out.set(x, y, c, img.sample_bilinear(sx, sy, c));
            }
        }
    }
    Ok(out)
}

/// Five-point central difference `(f(-2) - 8 f(-1) + 8 f(1) - f(2)) / 12`.
#[inline]
fn derivative<T: Real>(f: impl Fn(isize) -> T) -> T {
    let eight = T::lit(8.0);
    (f(-2) - eight * f(-1) + eight * f(1) - f(2)) / T::lit(12.0)
}

/// Central-difference spatial gradients (five-point stencil), clamp-to-edge.
pub fn gradients<T: Real>(img: &Image<T>) -> (Image<T>, Image<T>) {
    let (w, h) = img.dims();
    let mut gx = Image::new(w, h, 1);
    let mut gy = Image::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            gx.set(x, y, 0, derivative(|d| img.get_clamped(xi + d, yi, 0)));
            gy.set(x, y, 0, derivative(|d| img.get_clamped(xi, yi + d, 0)));
        }
    }
    (gx, gy)
}

#[inline]
fn neighbor_mean<T: Real>(plane: &[T], w: usize, h: usize, x: usize, y: usize) -> T {
    let at = |xx: usize, yy: usize| plane[yy * w + xx];
    let l = at(x.saturating_sub(1), y);
    let r = at((x + 1).min(w - 1), y);
    let t = at(x, y.saturating_sub(1));
    let b = at(x, (y + 1).min(h - 1));
    (l + r + t + b) * T::lit(0.25)
}

/// One Jacobi Horn–Schunck sweep:
/// `u' = ū − Ix (Ix ū + Iy v̄ + It) / (α² + Ix² + Iy²)`, likewise for `v`.
pub fn hs_update<T: Real>(flow: &FlowField<T>, ix: &Image<T>, iy: &Image<T>, it: &Image<T>, alpha: T) -> FlowField<T> {
    let (w, h) = flow.dims();
    let alpha2 = alpha * alpha;
    let (u, v) = (flow.u(), flow.v());
    let mut nu = vec![T::zero(); w * h];
    let mut nv = vec![T::zero(); w * h];
    let (gx, gy, gt) = (ix.data(), iy.data(), it.data());
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let ub = neighbor_mean(u, w, h, x, y);
            let vb = neighbor_mean(v, w, h, x, y);
            let k = (gx[i] * ub + gy[i] * vb + gt[i]) / (alpha2 + gx[i] * gx[i] + gy[i] * gy[i]);
            nu[i] = ub - gx[i] * k;
            nv[i] = vb - gy[i] * k;
        }
    }
    FlowField::from_parts(w, h, nu, nv, vec![true; w * h]).expect("same dimensions")
}

/// Per-component median over a `(2r+1)²` window, clamp-to-edge.
pub fn median_filter_flow<T: Real>(flow: &FlowField<T>, radius: usize) -> FlowField<T> {
    let (w, h) = flow.dims();
    let r = radius as isize;
    let filter = |plane: &[T]| -> Vec<T> {
        let mut window = Vec::with_capacity((2 * radius + 1).pow(2));
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h as isize {
            for x in 0..w as isize {
                window.clear();
                for dy in -r..=r {
                    for dx in -r..=r {
                        let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                        let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                        window.push(plane[yy * w + xx]);
                    }
                }
                let mid = window.len() / 2;
                let (_, m, _) = window.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).expect("finite flow"));
                out.push(*m);
            }
        }
        out
    };
    FlowField::from_parts(w, h, filter(flow.u()), filter(flow.v()), flow.valid().to_vec()).expect("same dimensions")
}

fn upsample_flow<T: Real>(flow: &FlowField<T>, width: usize, height: usize) -> FlowField<T> {
    let (w, h) = flow.dims();
    let u = Image::from_vec(w, h, 1, flow.u().to_vec()).expect("flow plane");
    let v = Image::from_vec(w, h, 1, flow.v().to_vec()).expect("flow plane");
    let su = T::from_usize_lossy(width) / T::from_usize_lossy(w);
    let sv = T::from_usize_lossy(height) / T::from_usize_lossy(h);
    let u = resize(&u, width, height).map(|x| x * su).into_vec();
    let v = resize(&v, width, height).map(|x| x * sv).into_vec();
    FlowField::from_parts(width, height, u, v, vec![true; width * height]).expect("resized planes")
}

fn to_intensity<T: Real>(img: &Image<T>) -> Image<T> {
    let scale = T::lit(255.0);
    img.luminance().map(|v| v * scale)
}

/// Dense flow from `img_a` to `img_b`. 3-channel inputs are reduced to luminance.
pub fn estimate_flow<T: Real>(img_a: &Image<T>, img_b: &Image<T>, params: &FlowParams) -> Result<FlowField<T>> {
    params.validate()?;
    if img_a.dims() != img_b.dims() {
        return Err(Error::Shape(format!(
            "frames differ in size: {:?} vs {:?}",
            img_a.dims(),
            img_b.dims()
        )));
    }
    if img_a.width() < 16 || img_a.height() < 16 {
        return Err(Error::Shape(format!(
            "frames must be at least 16x16, got {:?}",
            img_a.dims()
        )));
    }
    let pa = build_pyramid(&to_intensity(img_a), params.pyramid_levels, params.scale_factor)?;
    let pb = build_pyramid(&to_intensity(img_b), params.pyramid_levels, params.scale_factor)?;
    let alpha = T::lit(params.alpha);
    let half = T::lit(0.5);

    let mut flow: Option<FlowField<T>> = None;
    for level in (0..params.pyramid_levels).rev() {
        let (a, b) = (&pa[level], &pb[level]);
        let (w, h) = a.dims();
        let mut current = match flow.take() {
            Some(coarse) => upsample_flow(&coarse, w, h),
            None => FlowField::zeros(w, h),
        };
        for _ in 0..params.warp_passes_per_level {
            let warped = warp_bilinear(b, &current)?;
            let mean = Image::from_vec(
                w,
                h,
                1,
                a.data()
                    .iter()
                    .zip(warped.data())
                    .map(|(&p, &q)| (p + q) * half)
                    .collect(),
            )?;
            let (ix, iy) = gradients(&mean);
            // Linearize around the current estimate so the sweep solves for total flow.
            let it: Vec<T> = (0..w * h)
                .map(|i| warped.data()[i] - a.data()[i] - ix.data()[i] * current.u()[i] - iy.data()[i] * current.v()[i])
                .collect();
            let it = Image::from_vec(w, h, 1, it)?;
            for _ in 0..params.iterations_per_level {
                current = hs_update(&current, &ix, &iy, &it, alpha);
            }
            if params.median_radius > 0 {
                current = median_filter_flow(&current, params.median_radius);
            }
        }
        flow = Some(current);
    }
    Ok(flow.expect("at least one level"))
}

/// Smaller eigenvalue of the luminance structure tensor averaged over a
/// `(2 radius + 1)²` window, in (gray levels per pixel)² on the 0–255 scale.
/// Low values mark regions whose motion the data term cannot pin down.
pub fn texture_strength<T: Real>(img: &Image<T>, radius: usize) -> Image<T> {
    let (gx, gy) = gradients(&to_intensity(img));
    let (w, h) = img.dims();
    let r = radius as isize;
    let count = T::from_usize_lossy((2 * radius + 1) * (2 * radius + 1));
    let mut out = Image::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let (mut xx, mut xy, mut yy) = (T::zero(), T::zero(), T::zero());
            for dy in -r..=r {
                for dx in -r..=r {
                    let (px, py) = (x as isize + dx, y as isize + dy);
                    let (a, b) = (gx.get_clamped(px, py, 0), gy.get_clamped(px, py, 0));
                    xx += a * a;
                    xy += a * b;
                    yy += b * b;
                }
            }
            let (xx, xy, yy) = (xx / count, xy / count, yy / count);
            let half_trace = (xx + yy) * T::lit(0.5);
            let spread = ((xx - yy) * (xx - yy) * T::lit(0.25) + xy * xy).sqrt();
            out.set(x, y, 0, (half_trace - spread).max(T::zero()));
        }
    }
    out
}

/// Mean and median endpoint error over pixels valid in both fields.
pub fn endpoint_error<T: Real>(flow: &FlowField<T>, gt: &FlowField<T>) -> Result<(T, T)> {
    endpoint_error_masked(flow, gt, |_, _| true)
}

/// [`endpoint_error`] restricted to pixels where `include(x, y)` holds.
pub fn endpoint_error_masked<T: Real>(
    flow: &FlowField<T>,
    gt: &FlowField<T>,
    include: impl Fn(usize, usize) -> bool,
) -> Result<(T, T)> {
    if flow.dims() != gt.dims() {
        return Err(Error::Shape(format!(
            "flow {:?} vs ground truth {:?}",
            flow.dims(),
            gt.dims()
        )));
    }
    let (w, h) = flow.dims();
    let mut errors = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if flow.is_valid(x, y) && gt.is_valid(x, y) && include(x, y) {
                let (u, v) = flow.get(x, y);
                let (gu, gv) = gt.get(x, y);
                errors.push((u - gu).hypot(v - gv));
            }
        }
    }
    if errors.is_empty() {
        return Err(Error::Empty("no pixel is valid in both flow fields".into()));
    }
    let n = errors.len();
    let mean = errors.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    errors.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let median = if n % 2 == 1 {
        errors[n / 2]
    } else {
        (errors[n / 2 - 1] + errors[n / 2]) * T::lit(0.5)
    };
    Ok((mean, median))
}
