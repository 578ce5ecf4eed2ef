//! Deterministic synthetic digit corpus. Ten stroke-drawn glyph classes get
//! per-sample affine jitter (scale, aspect, rotation, translation, stroke
//! width, ink intensity), per-point skeleton wobble, and per-pixel ink
//! texture, and are rasterized at 28x28 with a soft one-pixel edge, then
//! quantized to the u8 grid the IDX format stores, so a disk round trip is
//! lossless. Exists for machines without the real dataset; the loader path
//! and the experiment protocol are identical either way.

use patchshuffle_core::data::Dataset;
use patchshuffle_core::rng::StreamRng;
use patchshuffle_core::tensor::{Shape4, Tensor};

pub const SIDE: usize = 28;
/// Glyphs are designed in a unit box and drawn into a 20 px box, like the
/// centered digits of the classic corpus.
const GLYPH_BOX: f64 = 20.0;

const STREAM_TRAIN: u64 = 100;
const STREAM_TEST: u64 = 101;

type Point = (f64, f64);

/// Elliptical arc sampled as a polyline. Angles are degrees; y grows
/// downward, so 0 points right, 90 points down, 270 points up.
fn arc(cx: f64, cy: f64, rx: f64, ry: f64, deg0: f64, deg1: f64, n: usize) -> Vec<Point> {
    (0..=n)
        .map(|i| {
            let t = (deg0 + (deg1 - deg0) * i as f64 / n as f64).to_radians();
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Stroke skeleton per class, as polylines in the unit box.
fn glyph(digit: u8) -> Vec<Vec<Point>> {
    match digit {
        0 => vec![arc(0.50, 0.50, 0.30, 0.40, 0.0, 360.0, 24)],
        1 => vec![vec![(0.35, 0.26), (0.54, 0.10), (0.54, 0.90)]],
        2 => vec![{
            let mut s = arc(0.50, 0.32, 0.26, 0.22, 180.0, 360.0, 10);
            s.push((0.74, 0.42));
            s.push((0.26, 0.86));
            s.push((0.78, 0.86));
            s
        }],
        3 => vec![
            arc(0.47, 0.30, 0.22, 0.20, 225.0, 495.0, 12),
            arc(0.47, 0.70, 0.24, 0.22, 225.0, 495.0, 12),
        ],
        4 => vec![
            vec![(0.60, 0.10), (0.24, 0.58), (0.80, 0.58)],
            vec![(0.63, 0.34), (0.63, 0.92)],
        ],
        5 => vec![vec![(0.74, 0.12), (0.30, 0.12), (0.29, 0.45)], {
            let mut s = vec![(0.29, 0.45)];
            s.extend(arc(0.47, 0.66, 0.25, 0.23, 250.0, 500.0, 12));
            s
        }],
        6 => vec![
            vec![(0.66, 0.08), (0.47, 0.30), (0.33, 0.55)],
            arc(0.47, 0.67, 0.22, 0.21, 0.0, 360.0, 20),
        ],
        7 => vec![vec![(0.24, 0.12), (0.78, 0.12), (0.40, 0.90)]],
        8 => vec![
            arc(0.50, 0.30, 0.20, 0.18, 0.0, 360.0, 18),
            arc(0.50, 0.70, 0.23, 0.20, 0.0, 360.0, 18),
        ],
        9 => vec![
            arc(0.50, 0.33, 0.21, 0.20, 0.0, 360.0, 18),
            vec![(0.71, 0.36), (0.69, 0.62), (0.56, 0.90)],
        ],
        other => unreachable!("digit {other} out of range"),
    }
}

struct Jitter {
    sx: f64,
    sy: f64,
    rot: f64,
    tx: f64,
    ty: f64,
    radius: f64,
    intensity: f64,
}

/// Per-point wobble amplitude in unit-box coordinates. Makes every sample's
/// stroke geometry unique, so nets have to learn shapes, not instances.
const WOBBLE: f64 = 0.012;

/// Per-pixel ink texture range: each inked pixel keeps between 55% and 120%
/// of its rendered value, like pen-pressure variation. The texture is unique
/// per sample and class irrelevant, so nets that key on exact gray-level
/// arrangements overfit it.
const SPECKLE_LO: f64 = 0.45;
const SPECKLE_SPAN: f64 = 0.85;

/// Fixed draw order (seven uniforms, two per skeleton point, then one per
/// pixel) keeps the corpus a pure function of (count, rng stream).
fn sample_jitter(rng: &mut StreamRng) -> Jitter {
    let scale = 0.92 + 0.10 * rng.next_f64();
    Jitter {
        sx: scale * (0.95 + 0.10 * rng.next_f64()),
        sy: scale * (0.95 + 0.10 * rng.next_f64()),
        rot: -0.07 + 0.14 * rng.next_f64(),
        tx: -1.0 + 2.0 * rng.next_f64(),
        ty: -1.0 + 2.0 * rng.next_f64(),
        radius: 0.72 + 0.20 * rng.next_f64(),
        intensity: 0.93 + 0.07 * rng.next_f64(),
    }
}

fn wobble(strokes: &mut [Vec<Point>], rng: &mut StreamRng) {
    for stroke in strokes {
        for p in stroke {
            p.0 += WOBBLE * (2.0 * rng.next_f64() - 1.0);
            p.1 += WOBBLE * (2.0 * rng.next_f64() - 1.0);
        }
    }
}

fn transform(p: Point, j: &Jitter) -> Point {
    let (c, s) = (j.rot.cos(), j.rot.sin());
    let x0 = (p.0 - 0.5) * GLYPH_BOX * j.sx;
    let y0 = (p.1 - 0.5) * GLYPH_BOX * j.sy;
    let center = SIDE as f64 / 2.0;
    (
        c * x0 - s * y0 + center + j.tx,
        s * x0 + c * y0 + center + j.ty,
    )
}

fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

fn quantize(v: f64) -> f64 {
    (v * 255.0).round() / 255.0
}

/// Rasterizes one jittered stroke skeleton into a SIDE x SIDE plane in [0, 1].
fn render(strokes: &[Vec<Point>], j: &Jitter) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; SIDE * SIDE];
    let reach = j.radius + 1.0;
    for stroke in strokes {
        let pts: Vec<Point> = stroke.iter().map(|&p| transform(p, j)).collect();
        for seg in pts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let x_lo = ((a.0.min(b.0) - reach).floor().max(0.0)) as usize;
            let x_hi = ((a.0.max(b.0) + reach).ceil()).min(SIDE as f64 - 1.0) as usize;
            let y_lo = ((a.1.min(b.1) - reach).floor().max(0.0)) as usize;
            let y_hi = ((a.1.max(b.1) + reach).ceil()).min(SIDE as f64 - 1.0) as usize;
            for py in y_lo..=y_hi {
                for px in x_lo..=x_hi {
                    let c = (px as f64 + 0.5, py as f64 + 0.5);
                    let d = dist_to_segment(c, a, b);
                    let cell = &mut dist[py * SIDE + px];
                    if d < *cell {
                        *cell = d;
                    }
                }
            }
        }
    }
    dist.into_iter()
        .map(|d| j.intensity * (j.radius + 0.5 - d).clamp(0.0, 1.0))
        .collect()
}

/// One texture draw per pixel, inked or not, so the stream position never
/// depends on rendered content.
fn speckle(plane: &mut [f64], rng: &mut StreamRng) {
    for v in plane {
        let f = SPECKLE_LO + SPECKLE_SPAN * rng.next_f64();
        *v = quantize((*v * f).min(1.0));
    }
}

/// `count` samples with round-robin labels 0..9, so any prefix is close to
/// class balanced.
pub fn synthetic_digits(count: usize, rng: &mut StreamRng) -> Dataset {
    assert!(count > 0, "count must be >= 1");
    let shape = Shape4::new(count, 1, SIDE, SIDE);
    let mut data = Vec::with_capacity(shape.volume());
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let digit = (i % 10) as u8;
        let j = sample_jitter(rng);
        let mut strokes = glyph(digit);
        wobble(&mut strokes, rng);
        let mut plane = render(&strokes, &j);
        speckle(&mut plane, rng);
        data.extend(plane);
        labels.push(digit);
    }
    let images = Tensor::from_vec(shape, data).expect("rendered values are finite");
    Dataset::new(images, labels, 10).expect("labels are 0..9")
}

/// Disjoint train/test splits from one corpus seed.
pub fn synthetic_pair(train: usize, test: usize, seed: u64) -> (Dataset, Dataset) {
    let mut train_rng = StreamRng::stream(seed, STREAM_TRAIN);
    let mut test_rng = StreamRng::stream(seed, STREAM_TEST);
    (
        synthetic_digits(train, &mut train_rng),
        synthetic_digits(test, &mut test_rng),
    )
}
