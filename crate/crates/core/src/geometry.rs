//! Small linear-algebra kit plus ray / primitive intersection.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn lit(x: f64, y: f64, z: f64) -> Self {
        Self::new(T::lit(x), T::lit(y), T::lit(z))
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_sq().sqrt()
    }

    /// Unit vector in the same direction. Zero vectors stay zero.
    #[inline]
    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n > T::zero() {
            self / n
        } else {
            self
        }
    }

    #[inline]
    pub fn component_min(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    #[inline]
    pub fn component_max(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    /// Any unit vector orthogonal to `self` (which must be non-zero).
    pub fn any_orthogonal(self) -> Self {
        let helper = if self.x.abs() < T::lit(0.9) {
            Self::new(T::one(), T::zero(), T::zero())
        } else {
            Self::new(T::zero(), T::one(), T::zero())
        };
        self.cross(helper).normalized()
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(self.x.cast(), self.y.cast(), self.z.cast())
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Div<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn div(self, s: T) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat3<T> {
    pub rows: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            rows: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Self {
            rows: [[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]],
        }
    }

    pub fn column(&self, i: usize) -> Vec3<T> {
        Vec3::new(self.rows[0][i], self.rows[1][i], self.rows[2][i])
    }

    /// Rotation by `angle` radians about unit `axis` (Rodrigues).
    pub fn rotation(axis: Vec3<T>, angle: T) -> Self {
        let k = axis.normalized();
        let (s, c) = angle.sin_cos();
        let t = T::one() - c;
        Self {
            rows: [
                [c + k.x * k.x * t, k.x * k.y * t - k.z * s, k.x * k.z * t + k.y * s],
                [k.y * k.x * t + k.z * s, c + k.y * k.y * t, k.y * k.z * t - k.x * s],
                [k.z * k.x * t - k.y * s, k.z * k.y * t + k.x * s, c + k.z * k.z * t],
            ],
        }
    }

    pub fn transpose(&self) -> Self {
        let r = &self.rows;
        Self {
            rows: [
                [r[0][0], r[1][0], r[2][0]],
                [r[0][1], r[1][1], r[2][1]],
                [r[0][2], r[1][2], r[2][2]],
            ],
        }
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        let r = &self.rows;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut rows = [[T::zero(); 3]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.rows[i][k] * o.rows[k][j]).sum();
            }
        }
        Self { rows }
    }

    /// Rotation angle of a proper rotation matrix, in radians.
    pub fn rotation_angle(&self) -> T {
        let trace = self.rows[0][0] + self.rows[1][1] + self.rows[2][2];
        ((trace - T::one()) * T::lit(0.5)).max(-T::one()).min(T::one()).acos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    /// Unit length.
    pub dir: Vec3<T>,
}

impl<T: Real> Ray<T> {
    pub fn new(origin: Vec3<T>, dir: Vec3<T>) -> Self {
        Self {
            origin,
            dir: dir.normalized(),
        }
    }

    #[inline]
    pub fn at(&self, t: T) -> Vec3<T> {
        self.origin + self.dir * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit<T> {
    pub distance: T,
    pub point: Vec3<T>,
    /// Unit geometric normal; not necessarily facing the ray.
    pub normal: Vec3<T>,
    /// Surface coordinates in meters.
    pub uv: (T, T),
    /// Unit surface directions in which `u` and `v` increase.
    pub tangents: (Vec3<T>, Vec3<T>),
}

/// Segment `a`..`b` swept by a sphere of `radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capsule<T> {
    pub a: Vec3<T>,
    pub b: Vec3<T>,
    pub radius: T,
}

/// Parallelogram `origin + s * edge_u + r * edge_v`, `s, r` in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quad<T> {
    pub origin: Vec3<T>,
    pub edge_u: Vec3<T>,
    pub edge_v: Vec3<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Primitive<T> {
    Capsule(Capsule<T>),
    Quad(Quad<T>),
}

/// Hits closer than this are treated as self-intersections.
fn min_distance<T: Real>() -> T {
    T::lit(1e-9)
}

/// Entry distance of `ray` into the sphere (center, radius), if in front.
fn sphere_entry<T: Real>(ray: &Ray<T>, center: Vec3<T>, radius: T) -> Option<T> {
    let oc = ray.origin - center;
    let b = oc.dot(ray.dir);
    let c = oc.norm_sq() - radius * radius;
    let h = b * b - c;
    if h < T::zero() {
        return None;
    }
    let t = -b - h.sqrt();
    (t > min_distance()).then_some(t)
}

impl<T: Real> Capsule<T> {
    pub fn new(a: Vec3<T>, b: Vec3<T>, radius: T) -> Self {
        Self { a, b, radius }
    }

    /// Signed distance from `p` to the capsule surface.
    pub fn sdf(&self, p: Vec3<T>) -> T {
        let ba = self.b - self.a;
        let pa = p - self.a;
        let h = (pa.dot(ba) / ba.norm_sq().max(T::min_positive_value())).clamp01();
        (pa - ba * h).norm() - self.radius
    }

    pub fn bounds(&self) -> Aabb<T> {
        let r = Vec3::new(self.radius, self.radius, self.radius);
        Aabb {
            min: self.a.component_min(self.b) - r,
            max: self.a.component_max(self.b) + r,
        }
    }

    pub fn intersect(&self, ray: &Ray<T>) -> Option<Hit<T>> {
        let ba = self.b - self.a;
        let baba = ba.norm_sq();
        let oa = ray.origin - self.a;
        let bard = ba.dot(ray.dir);
        let baoa = ba.dot(oa);
        let r2 = self.radius * self.radius;

        let mut best: Option<(T, Vec3<T>)> = None;
        let mut consider = |t: T, center: Vec3<T>| {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, center));
            }
        };

        // Cylindrical body, restricted to the segment's axial span.
        let qa = baba - bard * bard;
        if qa > T::epsilon() * baba {
            let qb = baba * ray.dir.dot(oa) - baoa * bard;
            let qc = baba * oa.norm_sq() - baoa * baoa - r2 * baba;
            let h = qb * qb - qa * qc;
            if h >= T::zero() {
                let t = (-qb - h.sqrt()) / qa;
                let y = baoa + t * bard;
                if t > min_distance() && y >= T::zero() && y <= baba {
                    let axis_point = self.a + ba * (y / baba);
                    consider(t, axis_point);
                }
            }
        }
        for cap in [self.a, self.b] {
            if let Some(t) = sphere_entry(ray, cap, self.radius) {
                // Only the half of each cap sphere outside the body counts, but the
                // body hit (when present) is always nearer, so the min is correct.
                consider(t, cap);
            }
        }

        let (t, center) = best?;
        let point = ray.at(t);
        let normal = (point - center).normalized();
        let len = baba.sqrt();
        let axis = if len > T::zero() {
            ba / len
        } else {
            Vec3::new(T::zero(), T::zero(), T::one())
        };
        let e1 = axis.any_orthogonal();
        let e2 = axis.cross(e1);
        let rel = point - self.a;
        let around = rel.dot(e2).atan2(rel.dot(e1));
        Some(Hit {
            distance: t,
            point,
            normal,
            uv: (rel.dot(axis), around * self.radius),
            tangents: (axis, normal.cross(axis).normalized()),
        })
    }
}

impl<T: Real> Quad<T> {
    pub fn new(origin: Vec3<T>, edge_u: Vec3<T>, edge_v: Vec3<T>) -> Self {
        Self { origin, edge_u, edge_v }
    }

    pub fn normal(&self) -> Vec3<T> {
        self.edge_u.cross(self.edge_v).normalized()
    }

    pub fn center(&self) -> Vec3<T> {
        self.origin + (self.edge_u + self.edge_v) * T::lit(0.5)
    }

    pub fn bounds(&self) -> Aabb<T> {
        let corners = [
            self.origin,
            self.origin + self.edge_u,
            self.origin + self.edge_v,
            self.origin + self.edge_u + self.edge_v,
        ];
        let mut b = Aabb {
            min: corners[0],
            max: corners[0],
        };
        for c in &corners[1..] {
            b.min = b.min.component_min(*c);
            b.max = b.max.component_max(*c);
        }
        b
    }

    pub fn intersect(&self, ray: &Ray<T>) -> Option<Hit<T>> {
        let cross = self.edge_u.cross(self.edge_v);
        let area = cross.norm();
        if area <= T::zero() {
            return None;
        }
        let n = cross / area;
        let denom = n.dot(ray.dir);
        if denom.abs() < T::lit(1e-12) {
            return None;
        }
        let t = n.dot(self.origin - ray.origin) / denom;
        if t <= min_distance() {
            return None;
        }
        let point = ray.at(t);
        let rel = point - self.origin;
        let s = rel.cross(self.edge_v).dot(n) / area;
        let r = self.edge_u.cross(rel).dot(n) / area;
        if s < T::zero() || s > T::one() || r < T::zero() || r > T::one() {
            return None;
        }
        Some(Hit {
            distance: t,
            point,
            normal: n,
            uv: (s * self.edge_u.norm(), r * self.edge_v.norm()),
            tangents: (self.edge_u.normalized(), self.edge_v.normalized()),
        })
    }
}

impl<T: Real> Primitive<T> {
    pub fn intersect(&self, ray: &Ray<T>) -> Option<Hit<T>> {
        match self {
            Primitive::Capsule(c) => c.intersect(ray),
            Primitive::Quad(q) => q.intersect(ray),
        }
    }

    pub fn bounds(&self) -> Aabb<T> {
        match self {
            Primitive::Capsule(c) => c.bounds(),
            Primitive::Quad(q) => q.bounds(),
        }
    }
}

/// Nearest positive-distance intersection of a unit-direction ray with a primitive.
pub fn intersect<T: Real>(ray: &Ray<T>, primitive: &Primitive<T>) -> Option<Hit<T>> {
    primitive.intersect(ray)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn empty() -> Self {
        let inf = T::infinity();
        Self {
            min: Vec3::new(inf, inf, inf),
            max: Vec3::new(-inf, -inf, -inf),
        }
    }

    pub fn union(self, o: Self) -> Self {
        Self {
            min: self.min.component_min(o.min),
            max: self.max.component_max(o.max),
        }
    }

    /// Slab test: whether the ray enters the box before `t_max`.
    pub fn hit_before(&self, ray: &Ray<T>, t_max: T) -> bool {
        let mut t0 = T::zero();
        let mut t1 = t_max;
        for (o, d, lo, hi) in [
            (ray.origin.x, ray.dir.x, self.min.x, self.max.x),
            (ray.origin.y, ray.dir.y, self.min.y, self.max.y),
            (ray.origin.z, ray.dir.z, self.min.z, self.max.z),
        ] {
            if d.abs() < T::lit(1e-15) {
                if o < lo || o > hi {
                    return false;
                }
                continue;
            }
            let inv = d.recip();
            let (mut near, mut far) = ((lo - o) * inv, (hi - o) * inv);
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}
