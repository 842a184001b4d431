use orchardseg::geometry::{Quad, Vec3};
use orchardseg::render::{ground_truth_flow, render_frame, render_mask, visible_in_b, Frame, SurfaceKind};
use orchardseg::scenegen::{
    generate_scene, sample_camera_pair_with, CameraFramePair, Intrinsics, Light, Pose, SceneConfig, TexturedQuad,
    TranslationMode,
};
use orchardseg::texture::{Hsv, ProceduralTexture};
use orchardseg::{Scene, SimFlow};

fn light() -> Light<f64> {
    Light {
        direction: Vec3::new(0.3, -0.8, 0.5).normalized(),
        intensity: 0.7,
        ambient: 0.3,
        sky: Hsv::new(0.58, 0.3, 0.9),
    }
}

/// Fronto-parallel rectangle at `y = depth` spanning `x0..x1` and `z` in `[-2, 2]`.
fn plane(depth: f64, x0: f64, x1: f64) -> TexturedQuad<f64> {
    TexturedQuad {
        quad: Quad::new(
            Vec3::new(x0, depth, -2.0),
            Vec3::new(x1 - x0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 4.0),
        ),
        texture: 0,
    }
}

fn planes_scene(planes: Vec<TexturedQuad<f64>>) -> Scene {
    let mut scene = Scene::empty(light());
    scene.textures.push(ProceduralTexture::solid(Hsv::new(0.3, 0.6, 0.7)));
    scene.walls = planes;
    scene
}

/// Camera at the origin looking down world `+y`, so z-depth equals world `y`.
fn origin_pair(size: usize, focal: f64, shift: Vec3<f64>) -> CameraFramePair<f64> {
    let pose_a = Pose::facing_rows(Vec3::zero());
    CameraFramePair {
        intrinsics: Intrinsics::centered(size, size, focal),
        pose_a,
        pose_b: Pose {
            position: shift,
            ..pose_a
        },
    }
}

/// Three planes one row spacing apart, adjoining in angle as seen from the origin.
fn staircase() -> Scene {
    planes_scene(vec![
        plane(1.0, -3.0, -0.3),
        plane(2.1, -0.63, 0.21),
        plane(3.2, 0.32, 6.0),
    ])
}

fn frame(scene: &Scene, pair: &CameraFramePair<f64>) -> Frame<f64> {
    render_frame(scene, &pair.pose_a, &pair.intrinsics).unwrap()
}

#[test]
fn depth_matches_analytic_ray_plane_oracle_across_rows() {
    let scene = staircase();
    let pair = origin_pair(64, 64.0, Vec3::zero());
    let depth = frame(&scene, &pair).depth;
    let intr = pair.intrinsics;
    for y in 0..64 {
        let mut previous = 0.0;
        for x in 0..64 {
            // Ray direction in world coordinates: (x_cam, forward, -y_cam).
            let (dx, dz) = (
                (x as f64 - intr.cx) / intr.focal_px,
                -(y as f64 - intr.cy) / intr.focal_px,
            );
            let expected = scene
                .walls
                .iter()
                .filter_map(|w| {
                    let d = w.quad.origin.y;
                    let (px, pz) = (dx * d, dz * d);
                    let inside = (w.quad.origin.x..=w.quad.origin.x + w.quad.edge_u.x).contains(&px)
                        && (-2.0..=2.0).contains(&pz);
                    inside.then_some(d)
                })
                .fold(f64::INFINITY, f64::min);
            let got = depth.get(x, y);
            assert!((got - expected).abs() < 1e-9, "pixel ({x}, {y}): {got} vs {expected}");
            assert!(
                got >= previous - 1e-9,
                "depth decreased along row {y} at x = {x}: {previous} -> {got}"
            );
            previous = got;
        }
    }
    let mut seen: Vec<f64> = depth.data().to_vec();
    seen.sort_by(f64::total_cmp);
    seen.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    assert_eq!(seen.len(), 3, "{seen:?}");
}

#[test]
fn lateral_flow_follows_the_pinhole_formula_per_plane() {
    // Near plane on the left half, far plane behind everything.
    let scene = planes_scene(vec![plane(0.5, -2.0, 0.0), plane(1.6, -5.0, 5.0)]);
    let pair = origin_pair(64, 200.0, Vec3::new(0.01, 0.0, 0.0));
    let f = frame(&scene, &pair);
    let flow = ground_truth_flow(&f.depth, &pair);
    let (mut near, mut far) = (0, 0);
    for y in 0..64 {
        for x in 0..64 {
            assert!(flow.is_valid(x, y));
            let (u, v) = flow.get(x, y);
            let expected = if f.depth.get(x, y) < 1.0 {
                near += 1;
                4.0
            } else {
                far += 1;
                1.25
            };
            assert!(
                (u.abs() - expected).abs() < 1e-9 && v.abs() < 1e-9,
                "({x}, {y}): ({u}, {v})"
            );
            assert!(u < 0.0, "a camera moving right sees the world move left");
        }
    }
    assert!(near > 0 && far > 0);
}

#[test]
fn flow_magnitude_strictly_decreases_with_depth() {
    let scene = staircase();
    for shift in [
        Vec3::new(0.02, 0.0, 0.0),
        Vec3::new(0.0, 0.0, -0.01),
        Vec3::new(0.006, 0.0, 0.008),
    ] {
        let pair = origin_pair(64, 64.0, shift);
        let f = frame(&scene, &pair);
        let flow = ground_truth_flow(&f.depth, &pair);
        // Motion parallel to fronto-parallel planes gives uniform flow per plane.
        let mut by_depth: Vec<(f64, f64)> = (0..64 * 64)
            .filter(|&i| f.depth.data()[i].is_finite())
            .map(|i| {
                let (u, v) = flow.get(i % 64, i / 64);
                (f.depth.data()[i], u.hypot(v))
            })
            .collect();
        by_depth.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in by_depth.windows(2) {
            if w[1].0 - w[0].0 > 1e-9 {
                assert!(w[1].1 < w[0].1, "deeper plane moved as much: {w:?}");
            } else {
                assert!((w[1].1 - w[0].1).abs() < 1e-9, "uniform flow within a plane");
            }
        }
    }
}

#[test]
fn points_hidden_behind_a_nearer_plane_in_frame_b_are_not_visible() {
    // Moving left, the near plane (4 px of parallax) slides 2.75 px further
    // right than the far plane (1.25 px) and covers the far pixels next to its
    // edge at x = 31.5: far pixels 32..=34 land at or before 35.5.
    let scene = planes_scene(vec![plane(0.5, -2.0, 0.0), plane(1.6, -5.0, 5.0)]);
    let pair = origin_pair(64, 200.0, Vec3::new(-0.01, 0.0, 0.0));
    let a = frame(&scene, &pair);
    let b = frame(&scene, &pair.reversed());
    let visible = visible_in_b(&a.depth, &b.depth, &pair, 0.05);
    for y in 0..64 {
        for x in 0..64 {
            // The last column lands past the right border (63 + 1.25 > 63.5).
            let expected = !(32..=34).contains(&x) && x < 63;
            assert_eq!(visible[y * 64 + x], expected, "pixel ({x}, {y})");
        }
    }
    let still = origin_pair(64, 200.0, Vec3::zero());
    assert!(visible_in_b(&a.depth, &a.depth, &still, 0.0).iter().all(|&v| v));
}

#[test]
fn sky_is_invalid_flow_and_infinite_depth() {
    let scene = planes_scene(vec![plane(1.0, -5.0, 0.0)]);
    let pair = origin_pair(32, 32.0, Vec3::new(0.01, 0.0, 0.0));
    let f = frame(&scene, &pair);
    let flow = ground_truth_flow(&f.depth, &pair);
    let sky = scene.light.sky_rgb();
    for y in 0..32 {
        for x in 0..32 {
            let open = f.depth.get(x, y).is_infinite();
            assert_eq!(open, x >= 16, "left half is covered, right half is sky");
            assert_eq!(flow.is_valid(x, y), !open);
            assert_eq!(f.surfaces[y * 32 + x].is_none(), open);
            if open {
                assert_eq!(f.rgb.pixel(x, y), sky);
            }
        }
    }
}

fn generated(s: u64, size: usize, mode: TranslationMode) -> (Scene, CameraFramePair<f64>) {
    let cfg = SceneConfig::default().with_image_size(size, size);
    let scene = generate_scene(&cfg, s).unwrap();
    let pair = sample_camera_pair_with(&scene, &cfg, s ^ 0xa5a5, mode);
    (scene, pair)
}

#[test]
fn rendering_is_bit_identical_across_runs() {
    let (scene, pair) = generated(7, 48, TranslationMode::Random);
    let (a, b) = (frame(&scene, &pair), frame(&scene, &pair));
    assert_eq!(a.rgb, b.rgb);
    assert_eq!(a.depth, b.depth);
    assert_eq!(a.surfaces, b.surfaces);
    let mask = |_| render_mask(&scene, &pair.pose_a, &pair.intrinsics).unwrap();
    assert_eq!(mask(()), mask(()));
}

/// Copy of `scene` holding nothing but its front-row trees.
fn front_trees_only(scene: &Scene) -> Scene {
    let mut only = scene.clone();
    only.rows.truncate(1);
    only.ground = None;
    only.walls.clear();
    let row = &mut only.rows[0];
    row.wires.clear();
    row.soil.quad = Quad::new(row.soil.quad.origin, Vec3::zero(), Vec3::zero());
    only
}

#[test]
fn mask_agrees_with_a_dual_render() {
    for s in 0..8 {
        let (scene, pair) = generated(s, 64, TranslationMode::Random);
        let full = frame(&scene, &pair);
        let front = frame(&front_trees_only(&scene), &pair);
        let mask = render_mask(&scene, &pair.pose_a, &pair.intrinsics).unwrap();
        let mut foreground = 0;
        for i in 0..64 * 64 {
            let m = mask.data()[i];
            assert!(m == 0.0 || m == 1.0, "masks are binary");
            let front_depth = front.depth.data()[i];
            assert_eq!(m == 1.0, front_depth.is_finite(), "seed {s}, pixel {i}");
            if m == 1.0 {
                foreground += 1;
                // Either the front tree itself is visible, or something occludes it.
                let hit = full.surfaces[i].expect("mask pixels are never sky");
                assert!(full.depth.data()[i] <= front_depth + 1e-9);
                if hit.is_front_tree() {
                    assert!((full.depth.data()[i] - front_depth).abs() < 1e-9);
                }
            } else {
                assert!(!full.surfaces[i].is_some_and(SurfaceKind::is_front_tree));
            }
        }
        assert!(foreground > 0, "seed {s}: camera sees the front row");
    }
}

#[test]
fn only_front_row_trees_reach_the_mask() {
    for s in 0..5 {
        let (mut scene, pair) = generated(s, 48, TranslationMode::Random);
        scene.rows[0].trees.clear();
        let f = frame(&scene, &pair);
        assert!(f
            .surfaces
            .iter()
            .flatten()
            .any(|k| matches!(k, SurfaceKind::Wire { .. } | SurfaceKind::Ground)));
        let mask = render_mask(&scene, &pair.pose_a, &pair.intrinsics).unwrap();
        assert!(mask.data().iter().all(|&m| m == 0.0), "seed {s}");
    }
}

fn mean_magnitude(flow: &SimFlow, pick: impl Fn(usize) -> bool) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..flow.width() * flow.height() {
        let (x, y) = (i % flow.width(), i / flow.width());
        if flow.is_valid(x, y) && pick(i) {
            let (u, v) = flow.get(x, y);
            sum += u.hypot(v);
            n += 1;
        }
    }
    sum / n as f64
}

#[test]
fn foreground_moves_more_than_background_under_lateral_motion() {
    for s in 0..20 {
        let (scene, pair) = generated(100 + s, 64, TranslationMode::Lateral);
        let f = frame(&scene, &pair);
        let flow = ground_truth_flow(&f.depth, &pair);
        let mask = render_mask(&scene, &pair.pose_a, &pair.intrinsics).unwrap();
        let fg = mean_magnitude(&flow, |i| mask.data()[i] == 1.0);
        let bg = mean_magnitude(&flow, |i| mask.data()[i] == 0.0);
        assert!(fg > bg, "seed {s}: foreground {fg} vs background {bg}");
    }
}

/// Color frame `pose` renders at the continuous image location `(x, y)`: a
/// one-pixel render whose pixel center is moved there.
fn render_at(scene: &Scene, pose: &Pose<f64>, intr: &Intrinsics<f64>, x: f64, y: f64) -> [f64; 3] {
    let one = Intrinsics {
        cx: intr.cx - x,
        cy: intr.cy - y,
        width: 1,
        height: 1,
        ..*intr
    };
    let rgb = render_frame(scene, pose, &one).unwrap().rgb;
    [0, 1, 2].map(|c| rgb.get(0, 0, c))
}

#[test]
fn frame_b_resampled_along_the_flow_reproduces_frame_a() {
    let size = 96;
    let (mut checked, mut within) = (0usize, 0usize);
    for s in 0..6 {
        let (scene, pair) = generated(200 + s, size, TranslationMode::Random);
        let a = frame(&scene, &pair);
        let b = frame(&scene, &pair.reversed());
        let flow = ground_truth_flow(&a.depth, &pair);
        let intr = pair.intrinsics;
        for y in 1..size - 1 {
            for x in 1..size - 1 {
                let i = y * size + x;
                let Some(kind) = a.surfaces[i] else { continue };
                // Interior of one surface only: edges mix surfaces under resampling.
                let interior = (-1..=1).all(|dy: isize| {
                    (-1..=1).all(|dx: isize| {
                        a.surfaces[(y as isize + dy) as usize * size + (x as isize + dx) as usize] == Some(kind)
                    })
                });
                let (u, v) = flow.get(x, y);
                let (tx, ty) = (x as f64 + u, y as f64 + v);
                if !interior || tx < 1.0 || ty < 1.0 || tx > (size - 2) as f64 || ty > (size - 2) as f64 {
                    continue;
                }
                // Skip pixels occluded in frame B.
                let world = pair
                    .pose_a
                    .to_world(intr.back_project(x as f64, y as f64, a.depth.get(x, y)));
                let expected_b = pair.pose_b.to_camera(world).z;
                let got_b = b.depth.get(tx.round() as usize, ty.round() as usize);
                if (got_b - expected_b).abs() > 0.05 * expected_b {
                    continue;
                }
                checked += 1;
                let sampled = render_at(&scene, &pair.pose_b, &intr, tx, ty);
                let err = (0..3)
                    .map(|c| (sampled[c] - a.rgb.get(x, y, c)).abs())
                    .fold(0.0, f64::max);
                if err <= 0.05 {
                    within += 1;
                }
            }
        }
    }
    let share = within as f64 / checked as f64;
    assert!(checked > 10_000, "too few comparable pixels: {checked}");
    assert!(
        share >= 0.95,
        "only {:.1}% of {checked} pixels reproject within 0.05",
        100.0 * share
    );
}
