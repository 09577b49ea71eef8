//! Procedural scenes. Every sample is a pure function of `(master_seed, index, params)`:
//! the generator is a ChaCha8 stream keyed by the master seed with the sample index as
//! stream id, so samples can be rendered in any order or in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::io::{FloatMap, Mask};
use super::{Sample, Target};
use crate::error::{Error, Result};
use crate::task::TaskKind;

/// Width of the image plane in scene units for the depth/normal renderer.
pub const SCENE_EXTENT: f64 = 4.0;
const NOISE_STD: f64 = 0.05;
const FOG: f64 = 0.18;

pub fn sample_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disc,
    Ring,
    Bar,
    Rect,
}

impl ShapeKind {
    /// Shape family used to draw foreground class `class` (class 0 is background).
    pub fn for_class(class: usize) -> Self {
        [
            ShapeKind::Disc,
            ShapeKind::Ring,
            ShapeKind::Bar,
            ShapeKind::Rect,
        ][(class - 1) % 4]
    }
}

/// One drawn primitive in pixel coordinates (pixel centers sit at `i + 0.5`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Disc {
        cx: f64,
        cy: f64,
        r: f64,
    },
    Ring {
        cx: f64,
        cy: f64,
        r_outer: f64,
        r_inner: f64,
    },
    Bar {
        cx: f64,
        cy: f64,
        half_len: f64,
        half_width: f64,
        angle: f64,
    },
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
}

impl Shape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Ring {
                cx,
                cy,
                r_outer,
                r_inner,
            } => {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                d2 <= r_outer * r_outer && d2 >= r_inner * r_inner
            }
            Shape::Bar {
                cx,
                cy,
                half_len,
                half_width,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                (dx * c + dy * s).abs() <= half_len && (-dx * s + dy * c).abs() <= half_width
            }
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
        }
    }

    fn random(kind: ShapeKind, size: f64, rng: &mut ChaCha8Rng) -> Self {
        let center = |rng: &mut ChaCha8Rng, margin: f64| {
            (
                rng.gen_range(margin..size - margin),
                rng.gen_range(margin..size - margin),
            )
        };
        match kind {
            ShapeKind::Disc => {
                let r = rng.gen_range(0.10..0.22) * size;
                let (cx, cy) = center(rng, r * 0.6);
                Shape::Disc { cx, cy, r }
            }
            ShapeKind::Ring => {
                let r_outer = rng.gen_range(0.14..0.25) * size;
                let r_inner = r_outer * rng.gen_range(0.55..0.75);
                let (cx, cy) = center(rng, r_outer * 0.6);
                Shape::Ring {
                    cx,
                    cy,
                    r_outer,
                    r_inner,
                }
            }
            ShapeKind::Bar => {
                let half_len = rng.gen_range(0.2..0.4) * size;
                let half_width = rng.gen_range(1.0..2.0_f64).max(size / 64.0);
                let (cx, cy) = center(rng, 0.2 * size);
                let angle = rng.gen_range(0.0..std::f64::consts::PI);
                Shape::Bar {
                    cx,
                    cy,
                    half_len,
                    half_width,
                    angle,
                }
            }
            ShapeKind::Rect => {
                let w = rng.gen_range(0.15..0.35) * size;
                let h = rng.gen_range(0.15..0.35) * size;
                let x0 = rng.gen_range(0.0..size - w);
                let y0 = rng.gen_range(0.0..size - h);
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + w,
                    y1: y0 + h,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegParams {
    pub size: usize,
    pub classes: usize,
    /// 0 draws exactly one shape; level k draws between 1 and 1 + 2k shapes.
    pub clutter: usize,
}

impl SegParams {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::config("image size must be at least 16"));
        }
        if self.classes < 2 || self.classes > 255 {
            return Err(Error::config(
                "segmentation needs between 2 and 255 classes",
            ));
        }
        Ok(())
    }
}

/// Mean intensity of class `c`; classes are spread evenly over [0.12, 0.90].
pub fn class_intensity(c: usize, classes: usize) -> f64 {
    0.12 + 0.78 * c as f64 / (classes - 1) as f64
}

/// Shapes drawn for one segmentation sample, in painter order, with their classes.
pub fn segmentation_layout(p: &SegParams, rng: &mut ChaCha8Rng) -> Vec<(usize, Shape)> {
    let count = if p.clutter == 0 {
        1
    } else {
        1 + rng.gen_range(0..=2 * p.clutter)
    };
    (0..count)
        .map(|_| {
            let class = rng.gen_range(1..p.classes);
            (
                class,
                Shape::random(ShapeKind::for_class(class), p.size as f64, rng),
            )
        })
        .collect()
}

pub fn segmentation_sample(p: &SegParams, master_seed: u64, index: u64) -> Result<Sample> {
    p.validate()?;
    let mut rng = sample_rng(master_seed, index);
    let n = p.size;
    let shapes = segmentation_layout(p, &mut rng);
    let mut classes = vec![0u8; n * n];
    let mut instances = vec![0u8; n * n];
    for (k, (class, shape)) in shapes.iter().enumerate() {
        for row in 0..n {
            for col in 0..n {
                if shape.contains(col as f64 + 0.5, row as f64 + 0.5) {
                    classes[row * n + col] = *class as u8;
                    instances[row * n + col] = (k + 1) as u8;
                }
            }
        }
    }
    // Per-class stripe texture: frequency and phase drawn once per sample.
    let phases: Vec<(f64, f64)> = (0..p.classes)
        .map(|_| {
            (
                rng.gen_range(0.2..0.6),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let image: Vec<f64> = (0..n * n)
        .map(|i| {
            let c = classes[i] as usize;
            let (row, col) = ((i / n) as f64, (i % n) as f64);
            let (f, ph) = phases[c];
            let texture = 0.03 * (f * (row + col) + ph).sin();
            let v = class_intensity(c, p.classes) + texture + noise.sample(&mut rng);
            f64::from(quantize(v)) / 255.0
        })
        .collect();
    Ok(Sample {
        id: format!("{index:06}"),
        image: FloatMap::new(1, n, n, image)?,
        target: Target::Classes(Mask::new(n, n, classes)?),
        instances: Mask::new(n, n, instances)?,
    })
}

/// Axis-aligned pixel rectangle `[row0, row1) x [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl PixelRect {
    fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row1).contains(&row) && (self.col0..self.col1).contains(&col)
    }
}

/// A plane `depth = depth0 + slope_x * X + slope_y * Y` in scene units, where `X` runs
/// right and `Y` runs down the image, both centred on the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub depth0: f64,
    pub slope_x: f64,
    pub slope_y: f64,
    /// Restricts the plane to a pixel rectangle (box faces); `None` is unbounded.
    pub region: Option<PixelRect>,
    pub instance: u8,
    pub albedo: f64,
}

impl Plane {
    pub fn fronto_parallel(depth: f64, instance: u8) -> Self {
        Plane {
            depth0: depth,
            slope_x: 0.0,
            slope_y: 0.0,
            region: None,
            instance,
            albedo: 0.7,
        }
    }

    pub fn depth_at(&self, x: f64, y: f64) -> f64 {
        self.depth0 + self.slope_x * x + self.slope_y * y
    }

    /// Unit normal in camera coordinates (x right, y up, z toward the viewer).
    pub fn normal(&self) -> [f64; 3] {
        let v = [self.slope_x, -self.slope_y, 1.0];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    }
}

/// Scene coordinate of the centre of pixel `i` on an `n`-pixel axis.
pub fn pixel_coord(i: usize, n: usize) -> f64 {
    ((i as f64 + 0.5) / n as f64 - 0.5) * SCENE_EXTENT
}

/// Orthographic render of the nearest plane at each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneRender {
    pub depth: FloatMap,
    pub normal: FloatMap,
    pub instances: Mask,
    /// Index into the plane list of the visible plane at each pixel.
    pub owner: Vec<usize>,
}

pub fn render_planes(size: usize, planes: &[Plane]) -> Result<PlaneRender> {
    if planes.is_empty() {
        return Err(Error::config("scene needs at least one plane"));
    }
    let hw = size * size;
    let mut depth = vec![0.0; hw];
    let mut normal = vec![0.0; 3 * hw];
    let mut inst = vec![0u8; hw];
    let mut owner = vec![0; hw];
    for row in 0..size {
        let y = pixel_coord(row, size);
        for col in 0..size {
            let x = pixel_coord(col, size);
            let best = planes
                .iter()
                .enumerate()
                .filter(|(_, p)| p.region.is_none_or(|r| r.contains(row, col)))
                .map(|(k, p)| (k, p.depth_at(x, y)))
                .filter(|&(_, d)| d > 0.0)
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .ok_or_else(|| {
                    Error::data(format!("no visible surface at pixel ({row}, {col})"))
                })?;
            let i = row * size + col;
            let p = &planes[best.0];
            depth[i] = best.1;
            let n = p.normal();
            for c in 0..3 {
                normal[c * hw + i] = n[c];
            }
            inst[i] = p.instance;
            owner[i] = best.0;
        }
    }
    Ok(PlaneRender {
        depth: FloatMap::new(1, size, size, depth)?,
        normal: FloatMap::new(3, size, size, normal)?,
        instances: Mask::new(size, size, inst)?,
        owner,
    })
}

/// Semantic class of a room-scene instance id: back wall 1, floor 2, side walls 3, boxes 4.
pub fn scene_class(instance: u8) -> usize {
    match instance {
        0 => 0,
        1 => 1,
        2 => 2,
        3 | 4 => 3,
        _ => 4,
    }
}

pub const SCENE_CLASSES: usize = 5;

/// Planes of one random room: back wall, floor, two side walls and up to three boxes
/// standing on the floor.
pub fn room_layout(size: usize, rng: &mut ChaCha8Rng) -> Vec<Plane> {
    let half = SCENE_EXTENT / 2.0;
    let back = rng.gen_range(4.0..5.5);
    let horizon = rng.gen_range(-0.4..0.4);
    let floor_near = rng.gen_range(1.5..2.5);
    let floor_slope = -(back - floor_near) / (half - horizon);
    let left_edge = rng.gen_range(-1.8..-1.1);
    let left_near = rng.gen_range(2.0..3.0);
    let left_slope = (back - left_near) / (left_edge + half);
    let right_edge = rng.gen_range(1.1..1.8);
    let right_near = rng.gen_range(2.0..3.0);
    let right_slope = -(back - right_near) / (half - right_edge);
    let mut planes = vec![
        Plane {
            albedo: rng.gen_range(0.5..0.9),
            ..Plane::fronto_parallel(back, 1)
        },
        Plane {
            depth0: back - floor_slope * horizon,
            slope_x: 0.0,
            slope_y: floor_slope,
            region: None,
            instance: 2,
            albedo: rng.gen_range(0.5..0.9),
        },
        Plane {
            depth0: back - left_slope * left_edge,
            slope_x: left_slope,
            slope_y: 0.0,
            region: None,
            instance: 3,
            albedo: rng.gen_range(0.5..0.9),
        },
        Plane {
            depth0: back - right_slope * right_edge,
            slope_x: right_slope,
            slope_y: 0.0,
            region: None,
            instance: 4,
            albedo: rng.gen_range(0.5..0.9),
        },
    ];
    let to_px = |v: f64| {
        (((v / SCENE_EXTENT) + 0.5) * size as f64)
            .round()
            .clamp(0.0, size as f64) as usize
    };
    let boxes = rng.gen_range(0..=3);
    for b in 0..boxes {
        let base_y = rng.gen_range(horizon + 0.3..half);
        let depth = planes[1].depth_at(0.0, base_y);
        let height = rng.gen_range(0.5..1.5);
        let width = rng.gen_range(0.5..1.4);
        let cx = rng.gen_range(left_edge + width / 2.0..right_edge - width / 2.0);
        let region = PixelRect {
            row0: to_px(base_y - height),
            row1: to_px(base_y),
            col0: to_px(cx - width / 2.0),
            col1: to_px(cx + width / 2.0),
        };
        if region.row0 < region.row1 && region.col0 < region.col1 {
            planes.push(Plane {
                region: Some(region),
                albedo: rng.gen_range(0.3..1.0),
                ..Plane::fronto_parallel(depth, 5 + b as u8)
            });
        }
    }
    planes
}

pub fn room_sample(task: TaskKind, size: usize, master_seed: u64, index: u64) -> Result<Sample> {
    if size < 16 {
        return Err(Error::config("image size must be at least 16"));
    }
    if task == TaskKind::Segmentation {
        return Err(Error::usage(
            "room scenes provide depth and normal targets only",
        ));
    }
    let mut rng = sample_rng(master_seed, index);
    let planes = room_layout(size, &mut rng);
    let render = render_planes(size, &planes)?;
    let light = {
        let v: [f64; 3] = [rng.gen_range(-0.5..0.5), rng.gen_range(0.3..0.8), 1.0];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    };
    let noise = Normal::new(0.0, 0.5 * NOISE_STD).expect("valid std");
    let hw = size * size;
    let image: Vec<f64> = (0..hw)
        .map(|i| {
            let p = &planes[render.owner[i]];
            let nrm = [
                render.normal.data[i],
                render.normal.data[hw + i],
                render.normal.data[2 * hw + i],
            ];
            let diffuse = (nrm[0] * light[0] + nrm[1] * light[1] + nrm[2] * light[2]).max(0.0);
            let shade = p.albedo * (0.35 + 0.65 * diffuse) * (-FOG * render.depth.data[i]).exp();
            f64::from(quantize(shade * 1.6 + noise.sample(&mut rng))) / 255.0
        })
        .collect();
    // Stored as 32-bit floats on disk; keep the in-memory copy identical to a reload.
    let depth = FloatMap {
        data: render
            .depth
            .data
            .iter()
            .map(|&d| f64::from(d as f32))
            .collect(),
        ..render.depth
    };
    let normal = super::renormalize(&FloatMap {
        data: render
            .normal
            .data
            .iter()
            .map(|&d| f64::from(d as f32))
            .collect(),
        ..render.normal
    });
    let target = match task {
        TaskKind::Depth => Target::Depth(depth),
        TaskKind::Normal => Target::Normal(normal),
        _ => Target::Joint { depth, normal },
    };
    Ok(Sample {
        id: format!("{index:06}"),
        image: FloatMap::new(1, size, size, image)?,
        target,
        instances: render.instances,
    })
}
