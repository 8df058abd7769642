//! Procedural convex polyhedra and a flat-shading z-buffer rasterizer.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sixd_core::linalg::{cross, dot, norm, scale, sub};
use sixd_core::{CameraIntrinsics, DepthMap, RigidTransform, SymmetrySpec, Vec3};

use crate::error::SynthError;
use crate::image::Mask;

/// Shape families. All are built centered on their bounding-box center,
/// which is the object origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Axis-aligned box with the given edge lengths.
    Box { size: [f64; 3] },
    /// Convex polygon in the xy plane (counter-clockwise) extruded along z.
    Extrusion { polygon: Vec<[f64; 2]>, height: f64 },
    /// Regular `sides`-gon frustum along z; `top_radius` may equal
    /// `bottom_radius` for a prism.
    Frustum {
        sides: usize,
        bottom_radius: f64,
        top_radius: f64,
        height: f64,
    },
}

/// How faces are colored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coloring {
    /// Every face gets its own color drawn from a seeded palette.
    Distinct { seed: u64 },
    /// Side faces share `side`; the two caps get `top` and `bottom`. When
    /// `label` is set, the first side face is painted with it.
    Banded {
        side: [u8; 3],
        top: [u8; 3],
        bottom: [u8; 3],
        label: Option<[u8; 3]>,
    },
}

/// A renderable toy object with its class and symmetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    pub class_id: usize,
    pub shape: Shape,
    pub coloring: Coloring,
    pub symmetry: SymmetrySpec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    /// Vertex indices, counter-clockwise seen from outside.
    pub indices: Vec<usize>,
    pub normal: Vec3<f64>,
    pub color: [u8; 3],
}

/// Convex polyhedron in its object frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    pub vertices: Vec<Vec3<f64>>,
    pub faces: Vec<Face>,
}

/// Random saturated color at least 120 away (L1) from pure red.
fn palette_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    loop {
        let c = [rng.gen_range(30..=235u8), rng.gen_range(30..=235u8), rng.gen_range(30..=235u8)];
        let dist_red = (255 - c[0] as i32) + c[1] as i32 + c[2] as i32;
        let spread = *c.iter().max().unwrap() as i32 - *c.iter().min().unwrap() as i32;
        if dist_red >= 120 && spread >= 60 {
            return c;
        }
    }
}

fn distinct_colors(n: usize, seed: u64) -> Vec<[u8; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<[u8; 3]> = Vec::with_capacity(n);
    while out.len() < n {
        let c = palette_color(&mut rng);
        let far = out.iter().all(|o| o.iter().zip(c).map(|(a, b)| (*a as i32 - b as i32).abs()).sum::<i32>() >= 90);
        if far || out.len() > 64 {
            out.push(c);
        }
    }
    out
}

impl Shape {
    fn validate(&self) -> Result<(), SynthError> {
        let ok = match self {
            Shape::Box { size } => size.iter().all(|s| *s > 0.0),
            Shape::Extrusion { polygon, height } => polygon.len() >= 3 && *height > 0.0,
            Shape::Frustum {
                sides,
                bottom_radius,
                top_radius,
                height,
            } => *sides >= 3 && *bottom_radius > 0.0 && *top_radius > 0.0 && *height > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidObject(format!("degenerate shape {self:?}")))
        }
    }

    /// Bottom and top rings of vertices (same count).
    fn rings(&self) -> (Vec<[f64; 2]>, Vec<[f64; 2]>, f64) {
        match self {
            Shape::Box { size } => {
                let (a, b) = (size[0] / 2.0, size[1] / 2.0);
                let ring = vec![[-a, -b], [a, -b], [a, b], [-a, b]];
                (ring.clone(), ring, size[2])
            }
            Shape::Extrusion { polygon, height } => (polygon.clone(), polygon.clone(), *height),
            Shape::Frustum {
                sides,
                bottom_radius,
                top_radius,
                height,
            } => {
                let ring = |r: f64| {
                    (0..*sides)
                        .map(|k| {
                            let a = std::f64::consts::TAU * k as f64 / *sides as f64;
                            [r * a.cos(), r * a.sin()]
                        })
                        .collect::<Vec<_>>()
                };
                (ring(*bottom_radius), ring(*top_radius), *height)
            }
        }
    }
}

impl ObjectSpec {
    /// Builds the polyhedron: side faces in ring order, then bottom and top
    /// caps. Vertices are shifted so the bounding-box center is the origin.
    pub fn polyhedron(&self) -> Result<Polyhedron, SynthError> {
        self.shape.validate()?;
        let (bottom, top, h) = self.shape.rings();
        let n = bottom.len();
        let mut vertices: Vec<Vec3<f64>> = bottom
            .iter()
            .map(|p| [p[0], p[1], -h / 2.0])
            .chain(top.iter().map(|p| [p[0], p[1], h / 2.0]))
            .collect();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
        for v in vertices.iter_mut() {
            *v = sub(*v, mid);
        }
        let mut index_faces: Vec<Vec<usize>> = (0..n).map(|i| vec![i, (i + 1) % n, n + (i + 1) % n, n + i]).collect();
        index_faces.push((0..n).rev().collect());
        index_faces.push((n..2 * n).collect());
        let colors: Vec<[u8; 3]> = match &self.coloring {
            Coloring::Distinct { seed } => distinct_colors(n + 2, *seed),
            Coloring::Banded { side, top, bottom, label } => {
                let mut c = vec![*side; n];
                if let Some(l) = label {
                    c[0] = *l;
                }
                c.push(*bottom);
                c.push(*top);
                c
            }
        };
        let mut faces = Vec::with_capacity(index_faces.len());
        for (indices, color) in index_faces.into_iter().zip(colors) {
            let [a, b, c] = [vertices[indices[0]], vertices[indices[1]], vertices[indices[2]]];
            let nrm = cross(sub(b, a), sub(c, a));
            let len = norm(nrm);
            if !(len > 1e-12) {
                return Err(SynthError::InvalidObject(format!("{}: degenerate face", self.name)));
            }
            let normal = scale(nrm, 1.0 / len);
            // every other vertex must lie behind the face plane
            if vertices.iter().any(|v| dot(normal, sub(*v, a)) > 1e-9) {
                return Err(SynthError::InvalidObject(format!("{}: shape is not convex", self.name)));
            }
            faces.push(Face { indices, normal, color });
        }
        Ok(Polyhedron { vertices, faces })
    }
}

impl Polyhedron {
    /// Largest vertex distance from the origin.
    pub fn radius(&self) -> f64 {
        self.vertices.iter().map(|v| norm(*v)).fold(0.0, f64::max)
    }

    /// Distance from the origin to the surface along unit direction `dir`
    /// (object frame).
    pub fn exit_distance(&self, dir: Vec3<f64>) -> f64 {
        self.faces
            .iter()
            .filter_map(|f| {
                let denom = dot(f.normal, dir);
                (denom > 1e-12).then(|| dot(f.normal, self.vertices[f.indices[0]]) / denom)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Object-frame surface samples: the vertices plus the strictly
    /// interior points of a barycentric grid of `n` steps on every fan
    /// triangle of every face. No point is repeated.
    pub fn surface_points(&self, n: usize) -> Vec<Vec3<f64>> {
        let mut pts = self.vertices.clone();
        for f in &self.faces {
            let c0 = self.vertices[f.indices[0]];
            for k in 1..f.indices.len() - 1 {
                let ea = sub(self.vertices[f.indices[k]], c0);
                let eb = sub(self.vertices[f.indices[k + 1]], c0);
                for i in 1..n {
                    for j in 1..n - i {
                        let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
                        pts.push([
                            c0[0] + u * ea[0] + v * eb[0],
                            c0[1] + u * ea[1] + v * eb[1],
                            c0[2] + u * ea[2] + v * eb[2],
                        ]);
                    }
                }
            }
        }
        pts
    }
}

/// Rendered turntable-style frame of one object.
#[derive(Debug, Clone)]
pub struct Capture {
    pub rgb: RgbImage,
    /// Meters; `0` where nothing was rendered.
    pub depth: DepthMap,
    pub mask: Mask,
    /// Object in the camera frame.
    pub pose: RigidTransform<f64>,
    pub class_id: usize,
    /// Projection of the object origin.
    pub center: [f64; 2],
}

/// Direction the light travels, in the camera frame (unit).
const LIGHT_DIR: Vec3<f64> = [0.267_261_241_912_424_4, 0.534_522_483_824_848_8, 0.801_783_725_737_273_2];
const AMBIENT: f64 = 0.45;

fn shade(color: [u8; 3], normal_cam: Vec3<f64>) -> Rgb<u8> {
    let lambert = (-dot(normal_cam, LIGHT_DIR)).max(0.0);
    let k = AMBIENT + (1.0 - AMBIENT) * lambert;
    Rgb(color.map(|c| (c as f64 * k).round().clamp(0.0, 255.0) as u8))
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Flat-shaded rendering of `object` at `pose` on a black background.
/// Depth at each pixel is the exact ray/face-plane intersection.
pub fn render_toy_capture(
    object: &ObjectSpec,
    pose: &RigidTransform<f64>,
    intrinsics: &CameraIntrinsics<f64>,
    image_size: [usize; 2],
) -> Result<Capture, SynthError> {
    let poly = object.polyhedron()?;
    render_polyhedron(&poly, object.class_id, pose, intrinsics, image_size)
}

pub fn render_polyhedron(
    poly: &Polyhedron,
    class_id: usize,
    pose: &RigidTransform<f64>,
    intrinsics: &CameraIntrinsics<f64>,
    image_size: [usize; 2],
) -> Result<Capture, SynthError> {
    let [w, h] = image_size;
    let tz = pose.translation[2];
    let cam: Vec<Vec3<f64>> = poly.vertices.iter().map(|v| pose.transform_point(*v)).collect();
    if !(tz > 0.0) || cam.iter().any(|p| !(p[2] > 1e-6)) {
        return Err(SynthError::BehindCamera(tz));
    }
    let center = intrinsics.project(pose.translation).ok_or(SynthError::BehindCamera(tz))?;
    let proj: Vec<[f64; 2]> = cam.iter().map(|p| intrinsics.project(*p).expect("in front")).collect();
    let mut rgb = RgbImage::new(w as u32, h as u32);
    let mut depth = DepthMap::new(w, h);
    let mut mask = Mask::new(w, h);
    for face in &poly.faces {
        let n = pose.rotation.rotate(face.normal);
        let p0 = cam[face.indices[0]];
        let plane_d = dot(n, p0);
        // camera at the origin sees the front side when n . p0 < 0
        if plane_d >= 0.0 {
            continue;
        }
        let color = shade(face.color, n);
        let pts: Vec<[f64; 2]> = face.indices.iter().map(|&i| proj[i]).collect();
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &pts {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
        let xa = (x0.ceil() as i64).max(0);
        let xb = (x1.floor() as i64).min(w as i64 - 1);
        let ya = (y0.ceil() as i64).max(0);
        let yb = (y1.floor() as i64).min(h as i64 - 1);
        if xa > xb || ya > yb {
            continue;
        }
        // projected winding: visible faces keep one consistent sign
        let area: f64 = (0..pts.len()).map(|i| edge(pts[0], pts[i], pts[(i + 1) % pts.len()])).sum();
        let sign = if area >= 0.0 { 1.0 } else { -1.0 };
        for py in ya as usize..=yb as usize {
            for px in xa as usize..=xb as usize {
                let p = [px as f64, py as f64];
                let inside = (0..pts.len()).all(|i| sign * edge(pts[i], pts[(i + 1) % pts.len()], p) >= 0.0);
                if !inside {
                    continue;
                }
                let ray = [(p[0] - intrinsics.cx) / intrinsics.fx, (p[1] - intrinsics.cy) / intrinsics.fy, 1.0];
                let denom = dot(n, ray);
                if denom.abs() < 1e-15 {
                    continue;
                }
                let z = plane_d / denom;
                if z <= 0.0 {
                    continue;
                }
                let current = depth.get(px, py);
                if current == 0.0 || (z as f32) < current {
                    depth.set(px, py, z as f32);
                    rgb.put_pixel(px as u32, py as u32, color);
                    mask.set(px, py, true);
                }
            }
        }
    }
    if mask.is_empty() {
        return Err(SynthError::EmptyMask);
    }
    Ok(Capture {
        rgb,
        depth,
        mask,
        pose: *pose,
        class_id,
        center,
    })
}

/// Depth difference between the object origin and the visible surface
/// along the viewing ray through the origin: the quantity to add to a
/// surface depth sample at the object center to reach the origin's depth.
pub fn center_depth_offset(poly: &Polyhedron, pose: &RigidTransform<f64>) -> f64 {
    let t = pose.translation;
    let dist = norm(t);
    // direction from the origin toward the camera, in the object frame
    let to_cam = pose.rotation.conjugate().rotate(scale(t, -1.0 / dist));
    let s = poly.exit_distance(to_cam);
    t[2] * s / dist
}
