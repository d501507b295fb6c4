//! Synthetic LiDAR scenes: ray-cast primitives with dropout and noise.
//!
//! Rays follow the range-image geometry (one per cell center), so a clean
//! synthetic scan projects back onto the grid it was cast from. The corner
//! corpus builds wedge scenes — planes meeting at edges — where a patch's
//! best representative point is rarely the mean of its points.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::rangegrid::{cell_direction, GridSpec, Point};

/// Scene primitive with pose and size.
#[derive(Clone, Debug)]
pub enum Primitive {
    /// Finite rectangle: center, unit normal, half extents along the two
    /// in-plane axes (derived deterministically from the normal).
    Plane {
        center: Point,
        normal: Point,
        half_extents: [f64; 2],
    },
    /// Axis-aligned box rotated by `yaw` around z.
    Box {
        center: Point,
        half_extents: Point,
        yaw: f64,
    },
    Sphere { center: Point, radius: f64 },
}

/// Declarative synthetic scan: sensor geometry, primitives, and corruption.
#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub grid: GridSpec,
    pub primitives: Vec<Primitive>,
    /// Probability of dropping a returned echo, in [0, 1).
    pub dropout: f64,
    /// Isotropic Gaussian noise in meters.
    pub noise_sigma: f64,
    pub seed: u64,
}

fn normalize(v: Point) -> Point {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// In-plane axes for a rectangle normal, deterministic in the normal.
fn plane_axes(normal: Point) -> (Point, Point) {
    let n = normalize(normal);
    let helper = if n[2].abs() < 0.9 {
        [0.0, 0.0, 1.0]
    } else {
        [1.0, 0.0, 0.0]
    };
    let u = normalize(cross(n, helper));
    let v = cross(n, u);
    (u, v)
}

const RAY_EPS: f64 = 1e-6;

/// Distance along the unit ray from the origin to the primitive, if hit.
fn intersect(dir: Point, prim: &Primitive) -> Option<f64> {
    match prim {
        Primitive::Plane {
            center,
            normal,
            half_extents,
        } => {
            let n = normalize(*normal);
            let denom = dot(dir, n);
            if denom.abs() < 1e-12 {
                return None;
            }
            let t = dot(*center, n) / denom;
            if t <= RAY_EPS {
                return None;
            }
            let p = [dir[0] * t, dir[1] * t, dir[2] * t];
            let local = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
            let (u, v) = plane_axes(*normal);
            if dot(local, u).abs() <= half_extents[0] && dot(local, v).abs() <= half_extents[1] {
                Some(t)
            } else {
                None
            }
        }
        Primitive::Box {
            center,
            half_extents,
            yaw,
        } => {
            // Slab test in the box frame (rotate by -yaw around z).
            let (s, c) = yaw.sin_cos();
            let rot = |p: Point| -> Point {
                [c * p[0] + s * p[1], -s * p[0] + c * p[1], p[2]]
            };
            let o = rot([-center[0], -center[1], -center[2]]);
            let d = rot(dir);
            let mut t_near = f64::NEG_INFINITY;
            let mut t_far = f64::INFINITY;
            for a in 0..3 {
                if d[a].abs() < 1e-12 {
                    if o[a].abs() > half_extents[a] {
                        return None;
                    }
                    continue;
                }
                let t1 = (-half_extents[a] - o[a]) / d[a];
                let t2 = (half_extents[a] - o[a]) / d[a];
                let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                t_near = t_near.max(lo);
                t_far = t_far.min(hi);
                if t_near > t_far {
                    return None;
                }
            }
            if t_near > RAY_EPS {
                Some(t_near)
            } else if t_far > RAY_EPS {
                Some(t_far)
            } else {
                None
            }
        }
        Primitive::Sphere { center, radius } => {
            let b = dot(dir, *center);
            let disc = b * b - (dot(*center, *center) - radius * radius);
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t1 = b - sq;
            let t2 = b + sq;
            if t1 > RAY_EPS {
                Some(t1)
            } else if t2 > RAY_EPS {
                Some(t2)
            } else {
                None
            }
        }
    }
}

/// Casts one ray per grid cell, keeps the nearest hit, applies dropout and
/// isotropic noise. Deterministic for a given spec (including its seed).
pub fn synth_scan(spec: &SceneSpec) -> Vec<Point> {
    assert!(!spec.primitives.is_empty(), "scene needs at least one primitive");
    assert!((0.0..1.0).contains(&spec.dropout), "dropout must be in [0, 1)");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::new();
    for row in 0..spec.grid.rows {
        for col in 0..spec.grid.cols {
            let dir = cell_direction(&spec.grid, row as f64, col as f64);
            let mut nearest: Option<f64> = None;
            for prim in &spec.primitives {
                if let Some(t) = intersect(dir, prim) {
                    nearest = Some(nearest.map_or(t, |n: f64| n.min(t)));
                }
            }
            let Some(t) = nearest else { continue };
            if spec.dropout > 0.0 && rng.gen_bool(spec.dropout) {
                continue;
            }
            let mut p = [dir[0] * t, dir[1] * t, dir[2] * t];
            if spec.noise_sigma > 0.0 {
                for v in p.iter_mut() {
                    *v += gaussian(&mut rng) * spec.noise_sigma;
                }
            }
            points.push(p);
        }
    }
    points
}

/// Standard normal draw via Box-Muller.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Wedge-heavy scenes for the sampler ablations: pairs of large planes
/// meeting at an edge in front of the sensor, plus boxes and spheres for
/// variety. Geometry is randomized per seed; ranges stay desk-scale.
pub fn corner_scene(grid: GridSpec, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut primitives = Vec::new();
    // Backdrop wall so most rays return something.
    let backdrop = 18.0 + rng.gen_range(-2.0..2.0);
    for k in 0..4 {
        let az = -std::f64::consts::PI + (k as f64 + 0.5) * std::f64::consts::FRAC_PI_2;
        primitives.push(Primitive::Plane {
            center: [backdrop * az.cos(), backdrop * az.sin(), -1.0],
            normal: [-az.cos(), -az.sin(), 0.0],
            half_extents: [backdrop * 0.9, 12.0],
        });
    }
    // Wedges: two planes meeting at a vertical edge.
    for _ in 0..6 {
        let az = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let dist = rng.gen_range(5.0..12.0);
        let apex = [dist * az.cos(), dist * az.sin(), rng.gen_range(-1.5..0.5)];
        let opening = rng.gen_range(0.6..1.4);
        for side in [-1.0, 1.0] {
            let wing = az + side * opening;
            let wing_dir = [wing.cos(), wing.sin(), 0.0];
            let half = rng.gen_range(1.5..3.0);
            let center = [
                apex[0] + wing_dir[0] * half,
                apex[1] + wing_dir[1] * half,
                apex[2],
            ];
            let normal = [-(wing + side * std::f64::consts::FRAC_PI_2).cos(),
                          -(wing + side * std::f64::consts::FRAC_PI_2).sin(),
                          0.0];
            primitives.push(Primitive::Plane {
                center,
                normal,
                half_extents: [half, rng.gen_range(1.5..3.5)],
            });
        }
    }
    for _ in 0..3 {
        let az = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let dist = rng.gen_range(4.0..10.0);
        primitives.push(Primitive::Box {
            center: [dist * az.cos(), dist * az.sin(), rng.gen_range(-1.0..0.0)],
            half_extents: [
                rng.gen_range(0.4..1.2),
                rng.gen_range(0.4..1.2),
                rng.gen_range(0.5..1.5),
            ],
            yaw: rng.gen_range(0.0..std::f64::consts::PI),
        });
    }
    for _ in 0..2 {
        let az = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let dist = rng.gen_range(4.0..9.0);
        primitives.push(Primitive::Sphere {
            center: [dist * az.cos(), dist * az.sin(), rng.gen_range(-0.5..0.5)],
            radius: rng.gen_range(0.5..1.2),
        });
    }
    SceneSpec {
        grid,
        primitives,
        dropout: 0.05,
        noise_sigma: 0.005,
        seed: seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1),
    }
}

/// Corpus for the sampler/expansion ablations: only wedges (plane pairs
/// meeting at an edge) and boxes at close range, no backdrop, so edge and
/// corner geometry dominates the patch population.
pub fn wedge_scene(grid: GridSpec, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut primitives = Vec::new();
    for _ in 0..10 {
        let az = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let dist = rng.gen_range(3.0..9.0);
        let apex = [dist * az.cos(), dist * az.sin(), rng.gen_range(-1.0..0.5)];
        let opening = rng.gen_range(0.5..1.3);
        for side in [-1.0, 1.0] {
            let wing = az + side * opening;
            let wing_dir = [wing.cos(), wing.sin(), 0.0];
            let half = rng.gen_range(1.0..2.2);
            let center = [
                apex[0] + wing_dir[0] * half,
                apex[1] + wing_dir[1] * half,
                apex[2],
            ];
            let normal = [
                -(wing + side * std::f64::consts::FRAC_PI_2).cos(),
                -(wing + side * std::f64::consts::FRAC_PI_2).sin(),
                0.0,
            ];
            primitives.push(Primitive::Plane {
                center,
                normal,
                half_extents: [half, rng.gen_range(1.2..2.5)],
            });
        }
    }
    for _ in 0..4 {
        let az = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let dist = rng.gen_range(2.5..7.0);
        primitives.push(Primitive::Box {
            center: [dist * az.cos(), dist * az.sin(), rng.gen_range(-0.8..0.2)],
            half_extents: [
                rng.gen_range(0.3..1.0),
                rng.gen_range(0.3..1.0),
                rng.gen_range(0.4..1.2),
            ],
            yaw: rng.gen_range(0.0..std::f64::consts::PI),
        });
    }
    SceneSpec {
        grid,
        primitives,
        dropout: 0.02,
        noise_sigma: 0.003,
        seed: seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(11),
    }
}

/// Fence of alternating-radius planar strips around the sensor: every
/// vertex is a vertical fold, and the fold spacing is tighter than a patch,
/// so essentially every patch straddles edge geometry. This is the corpus
/// where a patch's best representative point is systematically not the mean.
pub fn zigzag_scene(grid: GridSpec, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segments = 40 + 2 * rng.gen_range(0..8); // folds every 2pi/40..2pi/54
    let base_r = rng.gen_range(4.5..7.5);
    let depth = rng.gen_range(0.5..1.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let z_center = rng.gen_range(-0.8..0.2);
    let z_half = rng.gen_range(1.5..2.5);
    let vertex = |k: usize| -> [f64; 2] {
        let th = phase + std::f64::consts::TAU * k as f64 / segments as f64;
        let r = base_r + if k % 2 == 0 { depth } else { -depth };
        [r * th.cos(), r * th.sin()]
    };
    let mut primitives = Vec::new();
    for k in 0..segments {
        let a = vertex(k);
        let b = vertex((k + 1) % segments);
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, z_center];
        let along = [b[0] - a[0], b[1] - a[1]];
        let len = (along[0] * along[0] + along[1] * along[1]).sqrt();
        // horizontal normal, pointing back toward the sensor
        let mut normal = [-along[1] / len, along[0] / len, 0.0];
        if normal[0] * mid[0] + normal[1] * mid[1] > 0.0 {
            normal = [-normal[0], -normal[1], 0.0];
        }
        primitives.push(Primitive::Plane {
            center: mid,
            normal,
            half_extents: [len / 2.0, z_half],
        });
    }
    for _ in 0..3 {
        let az = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let dist = rng.gen_range(2.0..base_r - depth - 0.8);
        primitives.push(Primitive::Box {
            center: [dist * az.cos(), dist * az.sin(), rng.gen_range(-0.8..0.0)],
            half_extents: [
                rng.gen_range(0.2..0.7),
                rng.gen_range(0.2..0.7),
                rng.gen_range(0.4..1.2),
            ],
            yaw: rng.gen_range(0.0..std::f64::consts::PI),
        });
    }
    SceneSpec {
        grid,
        primitives,
        dropout: 0.02,
        noise_sigma: 0.003,
        seed: seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(23),
    }
}
