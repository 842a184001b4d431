//! Dense per-pixel containers: images, depth maps and flow fields.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major image with interleaved channels, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::zero())
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(Error::Shape(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{width}x{height}x{channels} image needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite image value at index {i}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel; `f` returns one
    /// value per channel.
    pub fn from_fn<const C: usize>(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [T; C]) -> Self {
        let mut data = Vec::with_capacity(width * height * C);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: C,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Value at integer coordinates clamped to the image border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> T {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y, c)
    }

    /// Bilinear sample at continuous pixel coordinates, clamp-to-edge outside.
    pub fn sample_bilinear(&self, x: T, y: T, c: usize) -> T {
        let max_x = T::from_usize_lossy(self.width - 1);
        let max_y = T::from_usize_lossy(self.height - 1);
        let x = x.max(T::zero()).min(max_x);
        let y = y.max(T::zero()).min(max_y);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let xi = x0.to_isize().unwrap_or(0);
        let yi = y0.to_isize().unwrap_or(0);
        let a = self.get_clamped(xi, yi, c);
        let b = self.get_clamped(xi + 1, yi, c);
        let d = self.get_clamped(xi, yi + 1, c);
        let e = self.get_clamped(xi + 1, yi + 1, c);
        let one = T::one();
        (a * (one - fx) + b * fx) * (one - fy) + (d * (one - fx) + e * fx) * fy
    }

    /// Fixed-weight luminance (Rec. 601). Single-channel images are returned as-is.
    pub fn luminance(&self) -> Image<T> {
        if self.channels == 1 {
            return self.clone();
        }
        let (wr, wg, wb) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| wr * p[0] + wg * p[1] + wb * p[2])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Image<T> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| v.cast()).collect(),
        }
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Image<T> {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::from_usize_lossy(self.data.len().max(1))
    }

    /// Averages each `k`×`k` block into one pixel; both sides must divide by `k`.
    pub fn box_downsample(&self, k: usize) -> Result<Image<T>> {
        check_block(self.width, self.height, k)?;
        let (w, h, c) = (self.width / k, self.height / k, self.channels);
        let norm = T::from_usize_lossy(k * k);
        let mut data = vec![T::zero(); w * h * c];
        for y in 0..self.height {
            for x in 0..self.width {
                let dst = ((y / k) * w + x / k) * c;
                for ch in 0..c {
                    data[dst + ch] += self.get(x, y, ch);
                }
            }
        }
        data.iter_mut().for_each(|v| *v /= norm);
        Ok(Image {
            width: w,
            height: h,
            channels: c,
            data,
        })
    }
}

fn check_block(width: usize, height: usize, k: usize) -> Result<()> {
    if k == 0 || !width.is_multiple_of(k) || !height.is_multiple_of(k) {
        return Err(Error::Shape(format!(
            "{width}x{height} is not divisible into {k}x{k} blocks"
        )));
    }
    Ok(())
}

/// Per-pixel depth along the camera axis in meters; `+inf` where nothing was hit.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> DepthMap<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} depth map needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|d| d.is_nan() || *d <= T::zero()) {
            return Err(Error::Domain(format!("depth must be positive or +inf, index {i}")));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Single-channel visualization: `near` maps to white, `far` and beyond to black.
    pub fn to_image(&self, near: T, far: T) -> Image<T> {
        let span = far - near;
        Image::from_fn(self.width, self.height, |x, y| {
            let d = self.get(x, y);
            if d.is_finite() {
                [(T::one() - (d - near) / span).clamp01()]
            } else {
                [T::zero()]
            }
        })
    }
}

/// Per-pixel displacement `(u, v)` in pixels from frame A to frame B.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<T> {
    width: usize,
    height: usize,
    u: Vec<T>,
    v: Vec<T>,
    valid: Vec<bool>,
}

impl<T: Real> FlowField<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![T::zero(); width * height],
            v: vec![T::zero(); width * height],
            valid: vec![true; width * height],
        }
    }

    /// Invalid entries are stored as zero displacement.
    pub fn from_parts(width: usize, height: usize, u: Vec<T>, v: Vec<T>, valid: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n || valid.len() != n {
            return Err(Error::Shape(format!(
                "{width}x{height} flow needs {n} entries per component, got u={} v={} valid={}",
                u.len(),
                v.len(),
                valid.len()
            )));
        }
        let mut field = Self {
            width,
            height,
            u,
            v,
            valid,
        };
        for i in 0..n {
            if !field.valid[i] {
                field.u[i] = T::zero();
                field.v[i] = T::zero();
            } else if !(field.u[i].is_finite() && field.v[i].is_finite()) {
                return Err(Error::Domain(format!("non-finite flow at valid index {i}")));
            }
        }
        Ok(field)
    }

    pub fn uniform(width: usize, height: usize, u: T, v: T) -> Self {
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
            valid: vec![true; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (T, T) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn u(&self) -> &[T] {
        &self.u
    }

    pub fn v(&self) -> &[T] {
        &self.v
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    #[inline]
    pub fn magnitude(&self, x: usize, y: usize) -> T {
        let (u, v) = self.get(x, y);
        u.hypot(v)
    }

    /// Flow of the image shrunk by `k`: each `k`×`k` block averages its
    /// displacements and divides them by `k`, and is valid only if every
    /// pixel in it is.
    pub fn box_downsample(&self, k: usize) -> Result<FlowField<T>> {
        check_block(self.width, self.height, k)?;
        let (w, h) = (self.width / k, self.height / k);
        let mut out = FlowField::zeros(w, h);
        for y in 0..self.height {
            for x in 0..self.width {
                let (i, j) = ((y / k) * w + x / k, y * self.width + x);
                out.u[i] += self.u[j];
                out.v[i] += self.v[j];
                out.valid[i] &= self.valid[j];
            }
        }
        let norm = T::from_usize_lossy(k * k * k);
        for i in 0..w * h {
            if out.valid[i] {
                out.u[i] /= norm;
                out.v[i] /= norm;
            } else {
                out.u[i] = T::zero();
                out.v[i] = T::zero();
            }
        }
        Ok(out)
    }

    pub fn cast<U: Real>(&self) -> FlowField<U> {
        FlowField {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|v| v.cast()).collect(),
            v: self.v.iter().map(|v| v.cast()).collect(),
            valid: self.valid.clone(),
        }
    }
}
