//! Primary-ray renderer: RGB, foreground masks, depth and exact parallax flow.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Hit, Primitive, Ray, Vec3};
use crate::raster::{DepthMap, FlowField, Image};
use crate::scalar::Real;
use crate::scenegen::{CameraFramePair, Intrinsics, Pose, Scene};
use crate::texture::eval_texture_filtered;

/// What a primary ray hit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SurfaceKind {
    Tree { row: usize },
    Wire { row: usize },
    Soil { row: usize },
    Ground,
    Wall,
}

impl SurfaceKind {
    pub fn is_front_tree(self) -> bool {
        matches!(self, SurfaceKind::Tree { row: 0 })
    }
}

struct Object<T> {
    primitive: Primitive<T>,
    texture: usize,
    kind: SurfaceKind,
}

struct Cluster<T> {
    bounds: Aabb<T>,
    objects: std::ops::Range<usize>,
}

/// Flattened, bounding-box-grouped view of a [`Scene`] for ray queries.
struct Tracer<T> {
    objects: Vec<Object<T>>,
    clusters: Vec<Cluster<T>>,
}

impl<T: Real> Tracer<T> {
    fn build(scene: &Scene<T>, keep: impl Fn(SurfaceKind) -> bool) -> Self {
        let mut tracer = Tracer {
            objects: Vec::new(),
            clusters: Vec::new(),
        };
        let push_cluster = |tracer: &mut Tracer<T>, items: Vec<(Primitive<T>, usize, SurfaceKind)>| {
            let items: Vec<_> = items.into_iter().filter(|(_, _, k)| keep(*k)).collect();
            if items.is_empty() {
                return;
            }
            let start = tracer.objects.len();
            let mut bounds = Aabb::empty();
            for (primitive, texture, kind) in items {
                bounds = bounds.union(primitive.bounds());
                tracer.objects.push(Object {
                    primitive,
                    texture,
                    kind,
                });
            }
            tracer.clusters.push(Cluster {
                bounds,
                objects: start..tracer.objects.len(),
            });
        };

        for (r, row) in scene.rows.iter().enumerate() {
            for tree in &row.trees {
                let kind = SurfaceKind::Tree { row: r };
                let items = std::iter::once(&tree.trunk)
                    .chain(&tree.leaders)
                    .map(|c| (Primitive::Capsule(*c), tree.texture, kind))
                    .collect();
                push_cluster(&mut tracer, items);
            }
            let wires = row
                .wires
                .iter()
                .map(|c| (Primitive::Capsule(*c), row.wire_texture, SurfaceKind::Wire { row: r }))
                .collect();
            push_cluster(&mut tracer, wires);
            push_cluster(
                &mut tracer,
                vec![(
                    Primitive::Quad(row.soil.quad),
                    row.soil.texture,
                    SurfaceKind::Soil { row: r },
                )],
            );
        }
        for wall in &scene.walls {
            push_cluster(
                &mut tracer,
                vec![(Primitive::Quad(wall.quad), wall.texture, SurfaceKind::Wall)],
            );
        }
        if let Some(ground) = &scene.ground {
            push_cluster(
                &mut tracer,
                vec![(Primitive::Quad(ground.quad), ground.texture, SurfaceKind::Ground)],
            );
        }
        tracer
    }

    fn trace(&self, ray: &Ray<T>) -> Option<(Hit<T>, &Object<T>)> {
        let mut best: Option<(Hit<T>, &Object<T>)> = None;
        for cluster in &self.clusters {
            let limit = best.as_ref().map_or(T::infinity(), |(h, _)| h.distance);
            if !cluster.bounds.hit_before(ray, limit) {
                continue;
            }
            for obj in &self.objects[cluster.objects.clone()] {
                if let Some(hit) = obj.primitive.intersect(ray) {
                    if best.as_ref().is_none_or(|(b, _)| hit.distance < b.distance) {
                        best = Some((hit, obj));
                    }
                }
            }
        }
        best
    }
}

fn check_intrinsics<T: Real>(intr: &Intrinsics<T>) -> Result<()> {
    if !(intr.focal_px > T::zero() && intr.focal_px.is_finite()) {
        return Err(Error::Domain(format!(
            "focal length must be > 0, got {}",
            intr.focal_px
        )));
    }
    if intr.width == 0 || intr.height == 0 {
        return Err(Error::Domain("image size must be non-zero".into()));
    }
    Ok(())
}

/// World-space ray through the center of pixel `(x, y)`.
pub fn primary_ray<T: Real>(pose: &Pose<T>, intr: &Intrinsics<T>, x: usize, y: usize) -> Ray<T> {
    let d_cam = intr.back_project(T::from_usize_lossy(x), T::from_usize_lossy(y), T::one());
    Ray::new(pose.position, pose.rotation.mul_vec(d_cam))
}

/// Shortest incidence cosine used when sizing a pixel's texture footprint.
const MIN_FOOTPRINT_COS: f64 = 0.05;

/// Extent along each texture axis of the surface patch a pixel covers.
/// `pixel_axes` are the camera's right and down vectors scaled by the angular
/// pixel size (1 / focal length in pixels).
pub fn texture_footprint<T: Real>(hit: &Hit<T>, ray: &Ray<T>, pixel_axes: [Vec3<T>; 2]) -> (T, T) {
    let n = hit.normal;
    let dn = n.dot(ray.dir);
    let dn = if dn.abs() < T::lit(MIN_FOOTPRINT_COS) {
        T::lit(MIN_FOOTPRINT_COS).copysign(dn)
    } else {
        dn
    };
    // A small image-plane offset `a` moves the hit by `z (a - d (a·n)/(d·n))`,
    // `z` being the hit's depth along the optical axis.
    let forward = pixel_axes[0].cross(pixel_axes[1]).normalized();
    let z = hit.distance * ray.dir.dot(forward);
    let spans = pixel_axes.map(|a| (a - ray.dir * (a.dot(n) / dn)) * z);
    let extent = |e: Vec3<T>| spans[0].dot(e).abs() + spans[1].dot(e).abs();
    (extent(hit.tangents.0), extent(hit.tangents.1))
}

/// Lambertian + ambient shading of a textured hit, with the texture averaged
/// over the pixel's footprint (see [`texture_footprint`]).
pub fn shade<T: Real>(
    scene: &Scene<T>,
    hit: &Hit<T>,
    ray: &Ray<T>,
    texture: usize,
    pixel_axes: [Vec3<T>; 2],
) -> [T; 3] {
    let n = if hit.normal.dot(ray.dir) > T::zero() {
        -hit.normal
    } else {
        hit.normal
    };
    let light = &scene.light;
    let level = light.ambient + light.intensity * n.dot(light.direction).max(T::zero());
    let footprint = texture_footprint(hit, ray, pixel_axes);
    let albedo = eval_texture_filtered(&scene.textures[texture], hit.uv.0, hit.uv.1, footprint);
    albedo.map(|c| (c * level).clamp01())
}

/// Everything one pass of primary rays yields for a view.
#[derive(Clone, Debug)]
pub struct Frame<T> {
    pub rgb: Image<T>,
    pub depth: DepthMap<T>,
    /// First-hit surface per pixel, `None` for sky.
    pub surfaces: Vec<Option<SurfaceKind>>,
}

/// RGB, depth and surface kinds of one rendered image row.
type RowBuffers<T> = (Vec<T>, Vec<T>, Vec<Option<SurfaceKind>>);

pub fn render_frame<T: Real>(scene: &Scene<T>, pose: &Pose<T>, intr: &Intrinsics<T>) -> Result<Frame<T>> {
    check_intrinsics(intr)?;
    let tracer = Tracer::build(scene, |_| true);
    let (w, h) = (intr.width, intr.height);
    let sky = scene.light.sky_rgb();
    let axis = pose.optical_axis();
    let pixel_axes = [0, 1].map(|c| pose.rotation.column(c) / intr.focal_px);
    let rows: Vec<RowBuffers<T>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut rgb = Vec::with_capacity(w * 3);
            let mut depth = Vec::with_capacity(w);
            let mut surf = Vec::with_capacity(w);
            for x in 0..w {
                let ray = primary_ray(pose, intr, x, y);
                match tracer.trace(&ray) {
                    Some((hit, obj)) => {
                        rgb.extend_from_slice(&shade(scene, &hit, &ray, obj.texture, pixel_axes));
                        depth.push((hit.point - pose.position).dot(axis));
                        surf.push(Some(obj.kind));
                    }
                    None => {
                        rgb.extend_from_slice(&sky);
                        depth.push(T::infinity());
                        surf.push(None);
                    }
                }
            }
            (rgb, depth, surf)
        })
        .collect();
    let mut rgb = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    let mut surfaces = Vec::with_capacity(w * h);
    for (r, d, s) in rows {
        rgb.extend(r);
        depth.extend(d);
        surfaces.extend(s);
    }
    Ok(Frame {
        rgb: Image::from_vec(w, h, 3, rgb)?,
        depth: DepthMap::from_vec(w, h, depth)?,
        surfaces,
    })
}

pub fn render_rgb<T: Real>(scene: &Scene<T>, pose: &Pose<T>, intr: &Intrinsics<T>) -> Result<Image<T>> {
    Ok(render_frame(scene, pose, intr)?.rgb)
}

pub fn render_depth<T: Real>(scene: &Scene<T>, pose: &Pose<T>, intr: &Intrinsics<T>) -> Result<DepthMap<T>> {
    Ok(render_frame(scene, pose, intr)?.depth)
}

/// Binary foreground mask: 1 where the first hit, with every object except
/// the front-row trees removed, is a front-row tree.
pub fn render_mask<T: Real>(scene: &Scene<T>, pose: &Pose<T>, intr: &Intrinsics<T>) -> Result<Image<T>> {
    check_intrinsics(intr)?;
    let tracer = Tracer::build(scene, SurfaceKind::is_front_tree);
    let (w, h) = (intr.width, intr.height);
    let data: Vec<T> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let tracer = &tracer;
            (0..w).map(move |x| {
                let ray = primary_ray(pose, intr, x, y);
                if tracer.trace(&ray).is_some() {
                    T::one()
                } else {
                    T::zero()
                }
            })
        })
        .collect();
    Image::from_vec(w, h, 1, data)
}

/// Exact flow from frame A to frame B given frame A's depth. Sky pixels are invalid.
pub fn ground_truth_flow<T: Real>(depth_a: &DepthMap<T>, pair: &CameraFramePair<T>) -> FlowField<T> {
    let intr = &pair.intrinsics;
    let (w, h) = (depth_a.width(), depth_a.height());
    let mut u = vec![T::zero(); w * h];
    let mut v = vec![T::zero(); w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = depth_a.get(x, y);
            if !d.is_finite() {
                continue;
            }
            let (px, py) = (T::from_usize_lossy(x), T::from_usize_lossy(y));
            let world = pair.pose_a.to_world(intr.back_project(px, py, d));
            if let Some((qx, qy)) = intr.project(pair.pose_b.to_camera(world)) {
                let i = y * w + x;
                u[i] = qx - px;
                v[i] = qy - py;
                valid[i] = true;
            }
        }
    }
    FlowField::from_parts(w, h, u, v, valid).expect("dimensions consistent by construction")
}

/// Pixels of frame A whose ground-truth correspondence is visible in frame B:
/// the point's depth as seen from pose B agrees, within the relative
/// `tolerance`, with frame B's depth at the nearest pixel to where it lands.
pub fn visible_in_b<T: Real>(
    depth_a: &DepthMap<T>,
    depth_b: &DepthMap<T>,
    pair: &CameraFramePair<T>,
    tolerance: T,
) -> Vec<bool> {
    let intr = &pair.intrinsics;
    let (w, h) = (depth_a.width(), depth_a.height());
    (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let d = depth_a.get(x, y);
            if !d.is_finite() {
                return false;
            }
            let world = pair
                .pose_a
                .to_world(intr.back_project(T::from_usize_lossy(x), T::from_usize_lossy(y), d));
            let in_b = pair.pose_b.to_camera(world);
            let Some((qx, qy)) = intr.project(in_b) else {
                return false;
            };
            if !intr.contains(qx, qy) {
                return false;
            }
            let (qx, qy) = (qx.round().to_usize(), qy.round().to_usize());
            let (Some(qx), Some(qy)) = (qx, qy) else {
                return false;
            };
            let seen = depth_b.get(qx.min(w - 1), qy.min(h - 1));
            (seen - in_b.z).abs() <= tolerance * in_b.z
        })
        .collect()
}

/// Distance along `ray` to the nearest primitive of `scene`, if any.
pub fn cast<T: Real>(scene: &Scene<T>, ray: &Ray<T>) -> Option<(T, SurfaceKind)> {
    Tracer::build(scene, |_| true)
        .trace(ray)
        .map(|(h, o)| (h.distance, o.kind))
}

/// Point on the optical axis of `pose` at z-depth `depth`.
pub fn point_at_depth<T: Real>(pose: &Pose<T>, depth: T) -> Vec3<T> {
    pose.position + pose.optical_axis() * depth
}
