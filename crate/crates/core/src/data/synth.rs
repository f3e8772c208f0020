//! Hard-edged geometric test imagery: pentagrams, regular polygons, stripes
//! and linear gradients.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::RgbImage;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Pentagram,
    /// Regular polygon with the given vertex count (≥ 3).
    Polygon(u32),
    Stripes,
    Gradient,
}

impl ShapeKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pentagram" => Some(Self::Pentagram),
            "stripes" => Some(Self::Stripes),
            "gradient" => Some(Self::Gradient),
            _ => s
                .strip_prefix("polygon-")
                .and_then(|n| n.parse().ok())
                .filter(|&n| n >= 3)
                .map(Self::Polygon),
        }
    }
}

/// Placement of a shape on the canvas, in pixel units.
///
/// For stripes `radius` is the stripe period and `rotation` the stripe angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub rotation: f64,
}

impl Pose {
    /// Centred, apex up, outer radius 0.45·side.
    pub fn identity(side: usize) -> Self {
        let s = side as f64;
        Self {
            cx: s / 2.0,
            cy: s / 2.0,
            radius: 0.45 * s,
            rotation: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: ShapeKind,
    pub side: usize,
    pub foreground: [u8; 3],
    pub background: [u8; 3],
    pub pose: Pose,
    pub seed: u64,
}

/// Well-separated colours used for random specs.
pub const PALETTE: [[u8; 3]; 8] = [
    [230, 40, 40],
    [40, 160, 60],
    [40, 70, 220],
    [240, 200, 30],
    [250, 250, 245],
    [25, 25, 30],
    [150, 60, 190],
    [30, 190, 200],
];

/// Pose jitter for random pentagrams: centre offset as a fraction of the side.
const CENTER_JITTER: f64 = 1.0 / 16.0;
const RADIUS_RANGE: (f64, f64) = (0.38, 0.46);
/// Full rotational period of a five-pointed star is 72°.
const ROTATION_RANGE: f64 = PI / 5.0;

impl SynthSpec {
    pub fn identity(kind: ShapeKind, side: usize) -> Self {
        Self {
            kind,
            side,
            foreground: [255, 255, 255],
            background: [0, 0, 0],
            pose: Pose::identity(side),
            seed: 0,
        }
    }

    /// Random colours and pose drawn deterministically from `seed`.
    pub fn random(kind: ShapeKind, side: usize, seed: u64) -> Self {
        let mut prng = rng::from_seed(rng::derive(seed, &[0x5EED]));
        let fg = prng.random_range(0..PALETTE.len());
        let bg = (fg + prng.random_range(1..PALETTE.len())) % PALETTE.len();
        let s = side as f64;
        let pose = match kind {
            ShapeKind::Stripes => Pose {
                cx: 0.0,
                cy: 0.0,
                radius: prng.random_range(s / 8.0..s / 3.0),
                rotation: prng.random_range(0.0..PI),
            },
            ShapeKind::Gradient => Pose::identity(side),
            _ => Pose {
                cx: s / 2.0 + prng.random_range(-CENTER_JITTER..CENTER_JITTER) * s,
                cy: s / 2.0 + prng.random_range(-CENTER_JITTER..CENTER_JITTER) * s,
                radius: prng.random_range(RADIUS_RANGE.0..RADIUS_RANGE.1) * s,
                rotation: prng.random_range(-ROTATION_RANGE..ROTATION_RANGE),
            },
        };
        Self {
            kind,
            side,
            foreground: PALETTE[fg],
            background: PALETTE[bg],
            pose,
            seed,
        }
    }
}

/// Ten-vertex outline of a five-pointed star, alternating outer and inner points.
pub fn pentagram_outline(pose: &Pose) -> Vec<(f64, f64)> {
    // Inner radius where the chords of the {5/2} star cross.
    let inner = pose.radius * (2.0 * PI / 5.0).cos() / (PI / 5.0).cos();
    (0..10)
        .map(|k| {
            let r = if k % 2 == 0 { pose.radius } else { inner };
            let a = -PI / 2.0 + pose.rotation + k as f64 * TAU / 10.0;
            (pose.cx + r * a.cos(), pose.cy + r * a.sin())
        })
        .collect()
}

pub fn polygon_outline(pose: &Pose, n: u32) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let a = -PI / 2.0 + pose.rotation + k as f64 * TAU / n as f64;
            (pose.cx + pose.radius * a.cos(), pose.cy + pose.radius * a.sin())
        })
        .collect()
}

/// Even-odd crossing test.
pub fn inside_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Rasterise a spec; a pixel is foreground iff its centre lies inside the shape.
pub fn render_synth(spec: &SynthSpec) -> RgbImage {
    let fg = spec.foreground.map(f64::from);
    let bg = spec.background.map(f64::from);
    let side = spec.side;
    let pick = |on: bool| if on { fg } else { bg };
    match spec.kind {
        ShapeKind::Pentagram => {
            let poly = pentagram_outline(&spec.pose);
            RgbImage::from_fn(side, side, |x, y| pick(inside_polygon(&poly, x as f64 + 0.5, y as f64 + 0.5)))
        }
        ShapeKind::Polygon(n) => {
            let poly = polygon_outline(&spec.pose, n.max(3));
            RgbImage::from_fn(side, side, |x, y| pick(inside_polygon(&poly, x as f64 + 0.5, y as f64 + 0.5)))
        }
        ShapeKind::Stripes => {
            let (s, c) = spec.pose.rotation.sin_cos();
            let period = spec.pose.radius.max(1.0);
            RgbImage::from_fn(side, side, |x, y| {
                let u = (x as f64 + 0.5) * c + (y as f64 + 0.5) * s;
                pick((u / period).floor().rem_euclid(2.0) == 0.0)
            })
        }
        ShapeKind::Gradient => RgbImage::from_fn(side, side, |x, _| {
            let t = (x as f64 + 0.5) / side as f64;
            [0, 1, 2].map(|c| bg[c] + (fg[c] - bg[c]) * t)
        }),
    }
}

/// Mixed corpus: half pentagrams, a quarter polygons, the rest stripes and gradients.
pub fn synth_corpus(count: usize, side: usize, seed: u64) -> Vec<RgbImage> {
    corpus_specs(count, side, seed).iter().map(render_synth).collect()
}

pub fn corpus_specs(count: usize, side: usize, seed: u64) -> Vec<SynthSpec> {
    (0..count)
        .map(|i| {
            let s = rng::derive(seed, &[i as u64]);
            let kind = match i % 8 {
                0..=3 => ShapeKind::Pentagram,
                4 | 5 => ShapeKind::Polygon(3 + (s % 6) as u32),
                6 => ShapeKind::Stripes,
                _ => ShapeKind::Gradient,
            };
            SynthSpec::random(kind, side, s)
        })
        .collect()
}
