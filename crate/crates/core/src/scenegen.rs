//! Seeded generation of randomized orchard scenes and camera pairs.
//!
//! World frame: `x` runs along the tree rows, `y` points away from the camera
//! into the orchard (rows sit at increasing `y`), `z` is up, the ground is `z = 0`.

use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Capsule, Mat3, Quad, Vec3};
use crate::scalar::Real;
use crate::seed;
use crate::texture::{Hsv, ProceduralTexture};

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Copy + PartialOrd> Interval<T> {
    pub const fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: T) -> bool {
        self.lo <= v && v <= self.hi
    }
}

impl Interval<f64> {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

impl Interval<u32> {
    fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        rng.random_range(self.lo..=self.hi)
    }
}

/// Orchard randomization parameters. Lengths in meters, angles in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub rows_range: Interval<u32>,
    pub tree_spacing_m: f64,
    pub row_spacing_m: f64,
    /// Rows extend this far either side of `x = 0`.
    pub row_half_length_m: f64,
    pub wires_per_row: u32,
    pub wire_height_range_m: Interval<f64>,
    pub wire_radius_m: f64,
    pub walls_range: Interval<u32>,
    /// Gap between the last row and a wall.
    pub wall_distance_range_m: Interval<f64>,
    pub wall_size_range_m: Interval<f64>,
    pub leaders_per_tree_range: Interval<u32>,
    pub trunk_height_range_m: Interval<f64>,
    pub trunk_radius_range_m: Interval<f64>,
    pub trunk_tilt_max_deg: f64,
    pub leader_radius_range_m: Interval<f64>,
    pub leader_length_range_m: Interval<f64>,
    pub leader_lean_max_deg: f64,
    pub soil_width_range_m: Interval<f64>,
    /// Maximum per-channel HSV shift applied to each object's texture.
    pub hsv_jitter_max: [f64; 3],
    pub light_intensity_range: Interval<f64>,
    pub ambient_range: Interval<f64>,
    pub camera_tilt_max_deg: f64,
    pub camera_translation_range_m: Interval<f64>,
    /// Distance from the camera to the front row plane.
    pub camera_distance_range_m: Interval<f64>,
    pub camera_height_range_m: Interval<f64>,
    pub camera_lateral_range_m: Interval<f64>,
    pub image_width: usize,
    pub image_height: usize,
    pub focal_px: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            rows_range: Interval::new(1, 5),
            tree_spacing_m: 0.6,
            row_spacing_m: 1.1,
            row_half_length_m: 4.0,
            wires_per_row: 3,
            wire_height_range_m: Interval::new(0.0, 1.0),
            wire_radius_m: 0.006,
            walls_range: Interval::new(0, 2),
            wall_distance_range_m: Interval::new(0.2, 2.0),
            wall_size_range_m: Interval::new(1.0, 5.0),
            leaders_per_tree_range: Interval::new(4, 10),
            trunk_height_range_m: Interval::new(0.3, 0.6),
            trunk_radius_range_m: Interval::new(0.04, 0.06),
            trunk_tilt_max_deg: 5.0,
            leader_radius_range_m: Interval::new(0.02, 0.035),
            leader_length_range_m: Interval::new(1.2, 2.2),
            leader_lean_max_deg: 10.0,
            soil_width_range_m: Interval::new(0.4, 0.9),
            hsv_jitter_max: [0.08, 0.2, 0.2],
            light_intensity_range: Interval::new(0.5, 1.0),
            ambient_range: Interval::new(0.25, 0.5),
            camera_tilt_max_deg: 15.0,
            camera_translation_range_m: Interval::new(0.005, 0.02),
            camera_distance_range_m: Interval::new(0.6, 1.0),
            camera_height_range_m: Interval::new(0.7, 1.5),
            camera_lateral_range_m: Interval::new(-0.3, 0.3),
            image_width: 128,
            image_height: 128,
            focal_px: 110.0,
        }
    }
}

impl SceneConfig {
    /// Same scene distribution rendered at a different resolution, keeping the
    /// field of view.
    pub fn with_image_size(mut self, width: usize, height: usize) -> Self {
        self.focal_px *= width as f64 / self.image_width as f64;
        self.image_width = width;
        self.image_height = height;
        self
    }

    pub fn validate(&self) -> Result<()> {
        fn interval(field: &'static str, i: &Interval<f64>) -> Result<()> {
            if !(i.lo.is_finite() && i.hi.is_finite()) || i.lo > i.hi {
                return Err(Error::config(
                    field,
                    format!("empty or non-finite interval [{}, {}]", i.lo, i.hi),
                ));
            }
            Ok(())
        }
        fn count(field: &'static str, i: &Interval<u32>) -> Result<()> {
            if i.lo > i.hi {
                return Err(Error::config(field, format!("empty interval [{}, {}]", i.lo, i.hi)));
            }
            Ok(())
        }
        fn positive(field: &'static str, v: f64) -> Result<()> {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be > 0, got {v}")));
            }
            Ok(())
        }
        fn positive_interval(field: &'static str, i: &Interval<f64>) -> Result<()> {
            interval(field, i)?;
            if i.lo <= 0.0 {
                return Err(Error::config(field, format!("lower bound must be > 0, got {}", i.lo)));
            }
            Ok(())
        }

        count("rows_range", &self.rows_range)?;
        if self.rows_range.lo == 0 {
            return Err(Error::config("rows_range", "at least one row is required"));
        }
        positive("tree_spacing_m", self.tree_spacing_m)?;
        positive("row_spacing_m", self.row_spacing_m)?;
        positive("row_half_length_m", self.row_half_length_m)?;
        interval("wire_height_range_m", &self.wire_height_range_m)?;
        positive("wire_radius_m", self.wire_radius_m)?;
        count("walls_range", &self.walls_range)?;
        positive_interval("wall_distance_range_m", &self.wall_distance_range_m)?;
        positive_interval("wall_size_range_m", &self.wall_size_range_m)?;
        count("leaders_per_tree_range", &self.leaders_per_tree_range)?;
        interval("trunk_height_range_m", &self.trunk_height_range_m)?;
        positive_interval("trunk_radius_range_m", &self.trunk_radius_range_m)?;
        positive_interval("leader_radius_range_m", &self.leader_radius_range_m)?;
        positive_interval("leader_length_range_m", &self.leader_length_range_m)?;
        positive_interval("soil_width_range_m", &self.soil_width_range_m)?;
        for (field, deg) in [
            ("trunk_tilt_max_deg", self.trunk_tilt_max_deg),
            ("leader_lean_max_deg", self.leader_lean_max_deg),
            ("camera_tilt_max_deg", self.camera_tilt_max_deg),
        ] {
            if !(0.0..90.0).contains(&deg) {
                return Err(Error::config(field, format!("must lie in [0, 90), got {deg}")));
            }
        }
        if self.hsv_jitter_max.iter().any(|j| !(0.0..=1.0).contains(j)) {
            return Err(Error::config("hsv_jitter_max", "components must lie in [0, 1]"));
        }
        positive_interval("light_intensity_range", &self.light_intensity_range)?;
        interval("ambient_range", &self.ambient_range)?;
        if self.ambient_range.lo < 0.0 {
            return Err(Error::config("ambient_range", "must be non-negative"));
        }
        positive_interval("camera_translation_range_m", &self.camera_translation_range_m)?;
        positive_interval("camera_distance_range_m", &self.camera_distance_range_m)?;
        interval("camera_height_range_m", &self.camera_height_range_m)?;
        interval("camera_lateral_range_m", &self.camera_lateral_range_m)?;
        if self.image_width < 16 || self.image_height < 16 {
            return Err(Error::config(
                "image_size",
                format!("must be at least 16x16, got {}x{}", self.image_width, self.image_height),
            ));
        }
        positive("focal_px", self.focal_px)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree<T> {
    pub trunk: Capsule<T>,
    pub leaders: Vec<Capsule<T>>,
    pub texture: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRow<T> {
    /// Row plane position along `y`.
    pub depth: T,
    pub trees: Vec<Tree<T>>,
    pub wires: Vec<Capsule<T>>,
    pub wire_texture: usize,
    pub soil: TexturedQuad<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TexturedQuad<T> {
    pub quad: Quad<T>,
    pub texture: usize,
}

/// Directional light plus ambient term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Light<T> {
    /// Unit vector from surfaces toward the light.
    pub direction: Vec3<T>,
    pub intensity: T,
    pub ambient: T,
    /// Sky tint; the rendered sky is this color scaled by the light level.
    pub sky: Hsv<T>,
}

impl<T: Real> Light<T> {
    pub fn sky_rgb(&self) -> [T; 3] {
        let level = (self.ambient + self.intensity * T::lit(0.6)).min(T::one());
        self.sky.to_rgb().map(|c| (c * level).clamp01())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene<T> {
    /// Front row first.
    pub rows: Vec<TreeRow<T>>,
    pub ground: Option<TexturedQuad<T>>,
    pub walls: Vec<TexturedQuad<T>>,
    pub light: Light<T>,
    pub textures: Vec<ProceduralTexture<T>>,
}

impl<T: Real + Serialize> Scene<T> {
    /// Stable 64-bit content digest (hex) of the scene description.
    pub fn digest(&self) -> String {
        fnv1a_hex(serde_json::to_string(self).expect("scene serializes").as_bytes())
    }
}

impl<T: Real> Scene<T> {
    /// Scene with no geometry at all, only light.
    pub fn empty(light: Light<T>) -> Self {
        Self {
            rows: Vec::new(),
            ground: None,
            walls: Vec::new(),
            light,
            textures: Vec::new(),
        }
    }
}

fn deg<T: Real>(d: f64) -> T {
    T::lit(d.to_radians())
}

fn sample_tree<T: Real, R: Rng>(rng: &mut R, cfg: &SceneConfig, x: f64, depth: f64, texture: usize) -> Tree<T> {
    let height = cfg.trunk_height_range_m.sample(rng);
    let half = 0.45 * cfg.tree_spacing_m;
    let tilt = rng.random_range(-1.0..=1.0) * cfg.trunk_tilt_max_deg.to_radians();
    let (dz, dx) = (half * tilt.sin(), half * tilt.cos());
    let trunk = Capsule::new(
        Vec3::lit(x - dx, depth, height - dz),
        Vec3::lit(x + dx, depth, height + dz),
        T::lit(cfg.trunk_radius_range_m.sample(rng)),
    );
    let leaders = (0..cfg.leaders_per_tree_range.sample(rng))
        .map(|_| {
            let s = rng.random_range(0.05..=0.95);
            let base = trunk.a + (trunk.b - trunk.a) * T::lit(s);
            let lean = rng.random_range(0.0..=cfg.leader_lean_max_deg.to_radians());
            let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
            let up = Vec3::lit(lean.sin() * azimuth.cos(), lean.sin() * azimuth.sin(), lean.cos());
            let len = cfg.leader_length_range_m.sample(rng);
            Capsule::new(
                base,
                base + up * T::lit(len),
                T::lit(cfg.leader_radius_range_m.sample(rng)),
            )
        })
        .collect();
    Tree {
        trunk,
        leaders,
        texture,
    }
}

/// 64-bit FNV-1a of `bytes` as 16 hex digits.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{h:016x}")
}

/// Generates a randomized orchard. Identical `(config, seed)` give identical scenes.
pub fn generate_scene<T: Real>(config: &SceneConfig, seed: u64) -> Result<Scene<T>> {
    config.validate()?;
    let mut rng = seed::rng(seed);
    let cfg = config;
    let mut textures: Vec<ProceduralTexture<T>> = Vec::new();
    let mut new_texture = |rng: &mut rand_chacha::ChaCha8Rng| {
        textures.push(ProceduralTexture::random(rng, cfg.hsv_jitter_max));
        textures.len() - 1
    };

    // Every tree in the scene wears the same texture.
    let tree_texture = new_texture(&mut rng);
    let row_count = cfg.rows_range.sample(&mut rng);
    let per_side = (cfg.row_half_length_m / cfg.tree_spacing_m).ceil() as i64;
    let mut rows = Vec::with_capacity(row_count as usize);
    for r in 0..row_count {
        let depth = f64::from(r) * cfg.row_spacing_m;
        let phase = rng.random_range(0.0..cfg.tree_spacing_m);
        let trees = (-per_side..=per_side)
            .map(|k| {
                sample_tree(
                    &mut rng,
                    cfg,
                    k as f64 * cfg.tree_spacing_m + phase,
                    depth,
                    tree_texture,
                )
            })
            .collect();
        let wire_texture = new_texture(&mut rng);
        let wire_r = T::lit(cfg.wire_radius_m);
        let wires = (0..cfg.wires_per_row)
            .map(|_| {
                let h = cfg.wire_height_range_m.sample(&mut rng);
                Capsule::new(
                    Vec3::lit(-cfg.row_half_length_m - 1.0, depth, h),
                    Vec3::lit(cfg.row_half_length_m + 1.0, depth, h),
                    wire_r,
                )
            })
            .collect();
        let soil_w = cfg.soil_width_range_m.sample(&mut rng);
        let len = 2.0 * cfg.row_half_length_m + 2.0;
        let soil = TexturedQuad {
            quad: Quad::new(
                Vec3::lit(-len / 2.0, depth - soil_w / 2.0, 0.002),
                Vec3::lit(len, 0.0, 0.0),
                Vec3::lit(0.0, soil_w, 0.0),
            ),
            texture: new_texture(&mut rng),
        };
        rows.push(TreeRow {
            depth: T::lit(depth),
            trees,
            wires,
            wire_texture,
            soil,
        });
    }
    let last_depth = f64::from(row_count - 1) * cfg.row_spacing_m;

    let walls = (0..cfg.walls_range.sample(&mut rng))
        .map(|_| {
            let y = last_depth + cfg.wall_distance_range_m.sample(&mut rng);
            let w = cfg.wall_size_range_m.sample(&mut rng);
            let h = cfg.wall_size_range_m.sample(&mut rng);
            let cx = rng.random_range(-cfg.row_half_length_m..=cfg.row_half_length_m);
            TexturedQuad {
                quad: Quad::new(
                    Vec3::lit(cx - w / 2.0, y, 0.0),
                    Vec3::lit(w, 0.0, 0.0),
                    Vec3::lit(0.0, 0.0, h),
                ),
                texture: new_texture(&mut rng),
            }
        })
        .collect();

    let ground_extent = 60.0;
    let ground = TexturedQuad {
        quad: Quad::new(
            Vec3::lit(-ground_extent / 2.0, -10.0, 0.0),
            Vec3::lit(ground_extent, 0.0, 0.0),
            Vec3::lit(0.0, ground_extent, 0.0),
        ),
        texture: new_texture(&mut rng),
    };

    // Light from the camera side of the rows, above the horizon.
    let elevation = rng.random_range(15f64..75.0).to_radians();
    let azimuth = rng.random_range(-70f64..70.0).to_radians();
    let direction = Vec3::lit(
        elevation.cos() * azimuth.sin(),
        -elevation.cos() * azimuth.cos(),
        elevation.sin(),
    );
    let light = Light {
        direction,
        intensity: T::lit(cfg.light_intensity_range.sample(&mut rng)),
        ambient: T::lit(cfg.ambient_range.sample(&mut rng)),
        sky: Hsv::new(
            T::lit(rng.random_range(0.0..1.0)),
            T::lit(rng.random_range(0.0..0.6)),
            T::lit(rng.random_range(0.5..1.0)),
        ),
    };

    Ok(Scene {
        rows,
        ground: Some(ground),
        walls,
        light,
        textures,
    })
}

/// Pinhole intrinsics; pixel `(i, j)` has its center at integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics<T> {
    pub focal_px: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Intrinsics<T> {
    /// Principal point at the image center.
    pub fn centered(width: usize, height: usize, focal_px: T) -> Self {
        Self {
            focal_px,
            cx: T::from_usize_lossy(width - 1) * T::lit(0.5),
            cy: T::from_usize_lossy(height - 1) * T::lit(0.5),
            width,
            height,
        }
    }

    /// Projects a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: Vec3<T>) -> Option<(T, T)> {
        (p.z > T::zero()).then(|| (self.focal_px * p.x / p.z + self.cx, self.focal_px * p.y / p.z + self.cy))
    }

    /// Camera-frame point at z-depth `depth` seen through pixel `(x, y)`.
    pub fn back_project(&self, x: T, y: T, depth: T) -> Vec3<T> {
        Vec3::new(
            (x - self.cx) / self.focal_px * depth,
            (y - self.cy) / self.focal_px * depth,
            depth,
        )
    }

    pub fn contains(&self, x: T, y: T) -> bool {
        let max_x = T::from_usize_lossy(self.width) - T::lit(0.5);
        let max_y = T::from_usize_lossy(self.height) - T::lit(0.5);
        x >= -T::lit(0.5) && y >= -T::lit(0.5) && x < max_x && y < max_y
    }
}

/// Camera-to-world rigid transform. Camera axes: `x` right, `y` down, `z` forward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub rotation: Mat3<T>,
    pub position: Vec3<T>,
}

impl<T: Real> Pose<T> {
    /// Looking along world `+y` with world `z` up.
    pub fn facing_rows(position: Vec3<T>) -> Self {
        Self {
            rotation: Mat3::from_columns(
                Vec3::lit(1.0, 0.0, 0.0),
                Vec3::lit(0.0, 0.0, -1.0),
                Vec3::lit(0.0, 1.0, 0.0),
            ),
            position,
        }
    }

    pub fn to_world(&self, p_cam: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p_cam) + self.position
    }

    pub fn to_camera(&self, p_world: Vec3<T>) -> Vec3<T> {
        self.rotation.transpose().mul_vec(p_world - self.position)
    }

    pub fn optical_axis(&self) -> Vec3<T> {
        self.rotation.column(2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraFramePair<T> {
    pub intrinsics: Intrinsics<T>,
    pub pose_a: Pose<T>,
    pub pose_b: Pose<T>,
}

impl<T: Real> CameraFramePair<T> {
    pub fn translation(&self) -> Vec3<T> {
        self.pose_b.position - self.pose_a.position
    }

    /// Angle between the shared optical axis and the row normal (world `+y`).
    pub fn tilt_from_row_normal(&self) -> T {
        self.pose_a.optical_axis().y.max(-T::one()).min(T::one()).acos()
    }

    /// Whether any point along the front row's leaders projects into frame A.
    pub fn sees_front_row(&self, scene: &Scene<T>) -> bool {
        let Some(front) = scene.rows.first() else {
            return false;
        };
        front
            .trees
            .iter()
            .flat_map(|t| t.leaders.iter().chain(std::iter::once(&t.trunk)))
            .any(|c| {
                (0..=8).any(|k| {
                    let p = c.a + (c.b - c.a) * T::lit(k as f64 / 8.0);
                    self.intrinsics
                        .project(self.pose_a.to_camera(p))
                        .is_some_and(|(x, y)| self.intrinsics.contains(x, y))
                })
            })
    }

    /// Copy of the pair with frames A and B exchanged.
    pub fn reversed(&self) -> Self {
        Self {
            intrinsics: self.intrinsics,
            pose_a: self.pose_b,
            pose_b: self.pose_a,
        }
    }
}

/// Direction of the small inter-frame camera move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationMode {
    /// Uniform on the unit sphere.
    #[default]
    Random,
    /// Uniform in the image plane (perpendicular to the optical axis).
    Lateral,
}

pub fn sample_camera_pair<T: Real>(scene: &Scene<T>, config: &SceneConfig, seed: u64) -> CameraFramePair<T> {
    sample_camera_pair_with(scene, config, seed, TranslationMode::Random)
}

/// Redraws bounded by this many attempts when the front row is out of view.
const CAMERA_ATTEMPTS: u64 = 64;

/// Camera pair facing the front row, redrawn until the row is in view of
/// frame A (bounded, so a scene without trees still yields a pair).
pub fn sample_camera_pair_with<T: Real>(
    scene: &Scene<T>,
    config: &SceneConfig,
    seed: u64,
    mode: TranslationMode,
) -> CameraFramePair<T> {
    let mut pair = draw_camera_pair(scene, config, seed, mode);
    for attempt in 1..CAMERA_ATTEMPTS {
        if pair.sees_front_row(scene) {
            break;
        }
        pair = draw_camera_pair(scene, config, seed::mix64(seed ^ attempt), mode);
    }
    pair
}

fn draw_camera_pair<T: Real>(
    scene: &Scene<T>,
    config: &SceneConfig,
    seed: u64,
    mode: TranslationMode,
) -> CameraFramePair<T> {
    let mut rng = seed::rng(seed);
    let front = scene.rows.first().map_or(0.0, |r| r.depth.as_f64());
    let position = Vec3::lit(
        config.camera_lateral_range_m.sample(&mut rng),
        front - config.camera_distance_range_m.sample(&mut rng),
        config.camera_height_range_m.sample(&mut rng),
    );
    let base = Pose::facing_rows(position);
    let axis: [f64; 3] = UnitSphere.sample(&mut rng);
    let angle = rng.random_range(0.0..=config.camera_tilt_max_deg);
    let perturb = Mat3::rotation(Vec3::lit(axis[0], axis[1], axis[2]), deg::<T>(angle));
    let pose_a = Pose {
        rotation: perturb.mul_mat(&base.rotation),
        position,
    };

    let magnitude = config.camera_translation_range_m.sample(&mut rng);
    let direction = match mode {
        TranslationMode::Random => {
            let d: [f64; 3] = UnitSphere.sample(&mut rng);
            Vec3::lit(d[0], d[1], d[2])
        }
        TranslationMode::Lateral => {
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let cam = Vec3::lit(phi.cos(), phi.sin(), 0.0);
            pose_a.rotation.mul_vec(cam)
        }
    };
    let pose_b = Pose {
        rotation: pose_a.rotation,
        position: position + direction.normalized() * T::lit(magnitude),
    };
    CameraFramePair {
        intrinsics: Intrinsics::centered(config.image_width, config.image_height, T::lit(config.focal_px)),
        pose_a,
        pose_b,
    }
}
