//! Procedural scenes: filled class shapes over textured backgrounds.

use rand::Rng;

pub const SHAPE_FAMILIES: usize = 8;
pub const TEXTURE_FAMILIES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Ring,
    Cross,
    Diamond,
    Ellipse,
    HalfDisc,
}

impl Shape {
    pub const ALL: [Shape; SHAPE_FAMILIES] = [
        Shape::Circle,
        Shape::Square,
        Shape::Triangle,
        Shape::Ring,
        Shape::Cross,
        Shape::Diamond,
        Shape::Ellipse,
        Shape::HalfDisc,
    ];

    /// Whether the offset `(dx, dy)` from the center lies inside a shape of
    /// radius `r`.
    pub fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        let (ax, ay) = (dx.abs(), dy.abs());
        match self {
            Shape::Circle => dx * dx + dy * dy <= r * r,
            Shape::Square => ax <= 0.85 * r && ay <= 0.85 * r,
            Shape::Triangle => dy >= -r && dy <= 0.8 * r && ax <= 0.5 * (dy + r),
            Shape::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= 0.3 * r * r
            }
            Shape::Cross => (ax <= r / 3.0 && ay <= r) || (ay <= r / 3.0 && ax <= r),
            Shape::Diamond => ax + ay <= r,
            Shape::Ellipse => (dx / r).powi(2) + (dy / (0.55 * r)).powi(2) <= 1.0,
            Shape::HalfDisc => dy >= -0.2 * r && dx * dx + (dy + 0.2 * r).powi(2) <= r * r,
        }
    }
}

const CLASS_COLORS: [[u8; 3]; SHAPE_FAMILIES] = [
    [220, 40, 40],
    [40, 190, 60],
    [50, 80, 230],
    [235, 210, 40],
    [210, 50, 210],
    [40, 210, 220],
    [245, 140, 30],
    [240, 240, 240],
];

/// Muted two-tone palettes, one per texture family.
const TEXTURE_TONES: [[[u8; 3]; 2]; TEXTURE_FAMILIES] = [
    [[70, 60, 50], [120, 105, 85]],
    [[50, 70, 60], [90, 120, 100]],
    [[55, 55, 75], [100, 100, 135]],
    [[80, 75, 70], [140, 130, 120]],
    [[40, 40, 40], [110, 110, 110]],
    [[60, 50, 70], [130, 110, 140]],
    [[75, 65, 45], [125, 120, 80]],
    [[45, 65, 75], [95, 125, 140]],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Texture {
    HorizontalStripes,
    VerticalStripes,
    DiagonalStripes,
    Dots,
    Checker,
    Gradient,
    Grid,
    Rings,
}

impl Texture {
    pub const ALL: [Texture; TEXTURE_FAMILIES] = [
        Texture::HorizontalStripes,
        Texture::VerticalStripes,
        Texture::DiagonalStripes,
        Texture::Dots,
        Texture::Checker,
        Texture::Gradient,
        Texture::Grid,
        Texture::Rings,
    ];
}

/// Per-image texture parameters.
#[derive(Clone, Copy, Debug)]
struct TextureParams {
    period: f64,
    phase_x: f64,
    phase_y: f64,
    angle: f64,
}

/// Weight of the light tone at pixel `(x, y)`, in [0, 1].
fn texture_level(t: Texture, p: &TextureParams, x: f64, y: f64, size: f64) -> f64 {
    let (u, v) = (x + p.phase_x, y + p.phase_y);
    let band = |s: f64| {
        if (s / p.period).rem_euclid(1.0) < 0.5 {
            1.0
        } else {
            0.0
        }
    };
    match t {
        Texture::HorizontalStripes => band(v),
        Texture::VerticalStripes => band(u),
        Texture::DiagonalStripes => band(u + v),
        Texture::Dots => {
            let cx = (u / p.period).rem_euclid(1.0) - 0.5;
            let cy = (v / p.period).rem_euclid(1.0) - 0.5;
            if cx * cx + cy * cy < 0.09 {
                1.0
            } else {
                0.0
            }
        }
        Texture::Checker => {
            let a = (u / p.period).floor() as i64 + (v / p.period).floor() as i64;
            (a.rem_euclid(2)) as f64
        }
        Texture::Gradient => {
            let s = (x * p.angle.cos() + y * p.angle.sin()) / (size * std::f64::consts::SQRT_2);
            (s + 0.5).clamp(0.0, 1.0)
        }
        Texture::Grid => {
            let gx = (u / p.period).rem_euclid(1.0);
            let gy = (v / p.period).rem_euclid(1.0);
            if gx < 0.2 || gy < 0.2 {
                1.0
            } else {
                0.0
            }
        }
        Texture::Rings => {
            let (dx, dy) = (x - size / 2.0 + p.phase_x, y - size / 2.0 + p.phase_y);
            band((dx * dx + dy * dy).sqrt())
        }
    }
}

/// One object placed in a scene.
#[derive(Clone, Debug)]
pub struct PlacedObject {
    pub class: usize,
    pub mask: Vec<bool>,
    pub area: usize,
}

fn jitter<R: Rng>(rng: &mut R, c: u8, amount: i32) -> u8 {
    (c as i32 + rng.random_range(-amount..=amount)).clamp(0, 255) as u8
}

/// Paints the background texture into an interleaved RGB buffer.
pub fn paint_background<R: Rng>(rng: &mut R, texture: usize, size: usize, rgb: &mut [u8]) {
    let params = TextureParams {
        period: rng.random_range(6.0..12.0),
        phase_x: rng.random_range(0.0..12.0),
        phase_y: rng.random_range(0.0..12.0),
        angle: rng.random_range(0.0..std::f64::consts::TAU),
    };
    let tones = TEXTURE_TONES[texture].map(|c| c.map(|v| jitter(rng, v, 12)));
    let fam = Texture::ALL[texture];
    for y in 0..size {
        for x in 0..size {
            let a = texture_level(fam, &params, x as f64 + 0.5, y as f64 + 0.5, size as f64);
            let i = 3 * (y * size + x);
            for ch in 0..3 {
                let v = (1.0 - a) * tones[0][ch] as f64 + a * tones[1][ch] as f64;
                rgb[i + ch] = v.round() as u8;
            }
        }
    }
}

/// Tries to rasterize a shape of `class` that keeps a one-pixel gap to
/// `occupied`. Returns `None` after a bounded number of rejected placements.
pub fn place_object<R: Rng>(
    rng: &mut R,
    class: usize,
    size: usize,
    radius: (f64, f64),
    occupied: &[bool],
) -> Option<PlacedObject> {
    let shape = Shape::ALL[class];
    let s = size as f64;
    for _ in 0..64 {
        let r = rng.random_range(radius.0..=radius.1).min(s / 2.0 - 1.0);
        let cx = rng.random_range(r..=s - r);
        let cy = rng.random_range(r..=s - r);
        let mut mask = vec![false; size * size];
        let mut area = 0;
        let mut clash = false;
        for y in 0..size {
            for x in 0..size {
                if shape.contains(x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, r) {
                    mask[y * size + x] = true;
                    area += 1;
                    clash |= near(occupied, size, x, y);
                }
            }
        }
        if area > 0 && !clash {
            return Some(PlacedObject { class, mask, area });
        }
    }
    None
}

fn near(occupied: &[bool], size: usize, x: usize, y: usize) -> bool {
    let lo = |v: usize| v.saturating_sub(1);
    let hi = |v: usize| (v + 1).min(size - 1);
    (lo(y)..=hi(y)).any(|yy| (lo(x)..=hi(x)).any(|xx| occupied[yy * size + xx]))
}

/// Fills the object's pixels with its jittered class color.
pub fn paint_object<R: Rng>(rng: &mut R, obj: &PlacedObject, rgb: &mut [u8]) {
    let color = CLASS_COLORS[obj.class].map(|v| jitter(rng, v, 20));
    for (i, _) in obj.mask.iter().enumerate().filter(|(_, &m)| m) {
        rgb[3 * i..3 * i + 3].copy_from_slice(&color);
    }
}
