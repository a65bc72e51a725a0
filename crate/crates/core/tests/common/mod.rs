//! Shared fixtures for the integration suites: a deterministic synthetic
//! digit-glyph image task (MNIST-format stand-in, swappable for the real
//! files via GROWNET_MNIST_DIR), multivariate series generators, and a small
//! DOT grammar checker used as an independent oracle.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use grownet::data::{load_idx, Dataset, MtsDataset, Samples};
use grownet::tensor::ImageBatch;
use grownet::training::simset_indices;

/// Seven-segment skeletons: endpoints in the unit square, (x0,y0,x1,y1).
const SEGMENTS: [(f64, f64, f64, f64); 7] = [
    (0.0, 0.0, 1.0, 0.0), // A top
    (1.0, 0.0, 1.0, 0.5), // B top right
    (1.0, 0.5, 1.0, 1.0), // C bottom right
    (0.0, 1.0, 1.0, 1.0), // D bottom
    (0.0, 0.5, 0.0, 1.0), // E bottom left
    (0.0, 0.0, 0.0, 0.5), // F top left
    (0.0, 0.5, 1.0, 0.5), // G middle
];

const DIGIT_SEGMENTS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],    // 0
    &[1, 2],                // 1
    &[0, 1, 6, 4, 3],       // 2
    &[0, 1, 6, 2, 3],       // 3
    &[5, 6, 1, 2],          // 4
    &[0, 5, 6, 2, 3],       // 5
    &[0, 5, 6, 4, 2, 3],    // 6
    &[0, 1, 2],             // 7
    &[0, 1, 2, 3, 4, 5, 6], // 8
    &[0, 1, 2, 3, 5, 6],    // 9
];

fn draw_segment(img: &mut [f64], side: usize, seg: (f64, f64, f64, f64), intensity: f64) {
    let (x0, y0, x1, y1) = seg;
    let steps = 40;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = x0 + (x1 - x0) * t;
        let y = y0 + (y1 - y0) * t;
        let cx = x.round() as isize;
        let cy = y.round() as isize;
        for (dx, dy) in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
            let px = cx + dx;
            let py = cy + dy;
            if px < 0 || py < 0 || px >= side as isize || py >= side as isize {
                continue;
            }
            let d = ((px as f64 - x).powi(2) + (py as f64 - y).powi(2)).sqrt();
            if d <= 1.1 {
                let v = intensity * (1.0 - 0.35 * d);
                let idx = py as usize * side + px as usize;
                if v > img[idx] {
                    img[idx] = v;
                }
            }
        }
    }
}

/// Renders one jittered seven-segment glyph into a `side x side` image.
/// Rotation, scale, offset, stroke and noise variation are deliberately
/// strong: the task has to be hard enough that a wrecked representation
/// costs many epochs to relearn.
fn render_digit(digit: usize, side: usize, rng: &mut ChaCha8Rng) -> Vector {
    let mut img = vec![0.0f64; side * side];
    for v in img.iter_mut() {
        *v = rng.gen::<f64>() * 0.22;
    }
    let base = side as f64;
    let glyph_w = base * (0.32 + 0.20 * rng.gen::<f64>());
    let glyph_h = base * (0.46 + 0.26 * rng.gen::<f64>());
    let ox = base * 0.30 + (rng.gen::<f64>() - 0.5) * base * 0.30;
    let oy = base * 0.18 + (rng.gen::<f64>() - 0.5) * base * 0.24;
    let theta = (rng.gen::<f64>() - 0.5) * 0.7; // about +/- 20 degrees
    let (sin_t, cos_t) = theta.sin_cos();
    let (cx, cy) = (ox + glyph_w / 2.0, oy + glyph_h / 2.0);
    let rotate = |x: f64, y: f64| {
        (
            cx + (x - cx) * cos_t - (y - cy) * sin_t,
            cy + (x - cx) * sin_t + (y - cy) * cos_t,
        )
    };
    let intensity = 0.55 + 0.45 * rng.gen::<f64>();
    for &s in DIGIT_SEGMENTS[digit] {
        let (x0, y0, x1, y1) = SEGMENTS[s];
        let jitter = |r: &mut ChaCha8Rng| (r.gen::<f64>() - 0.5) * 2.2;
        let (ax, ay) = rotate(ox + x0 * glyph_w, oy + y0 * glyph_h);
        let (bx, by) = rotate(ox + x1 * glyph_w, oy + y1 * glyph_h);
        let seg = (ax + jitter(rng), ay + jitter(rng), bx + jitter(rng), by + jitter(rng));
        draw_segment(&mut img, side, seg, intensity);
    }
    // salt noise
    for _ in 0..(side * side / 64) {
        let p = rng.gen_range(0..side * side);
        img[p] = 0.55 + 0.45 * rng.gen::<f64>();
    }
    img
}

type Vector = Vec<f64>;

/// A deterministic 10-class digit-glyph dataset in MNIST dimensions.
pub fn synth_digits(per_class: usize, side: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = per_class * 10;
    let mut batch = ImageBatch::zeros(n, 1, side, side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = i % 10;
        let img = render_digit(digit, side, &mut rng);
        batch.data_mut()[i * side * side..(i + 1) * side * side].copy_from_slice(&img);
        labels.push(digit);
    }
    Dataset::new(Samples::Images(batch), labels, 10).unwrap()
}

/// Real MNIST when `GROWNET_MNIST_DIR` points at the IDX files, subsampled
/// to `per_class` samples per class; otherwise `None`.
pub fn mnist_if_available(per_class: usize, seed: u64) -> Option<Dataset> {
    let dir = std::env::var_os("GROWNET_MNIST_DIR")?;
    let dir = PathBuf::from(dir);
    let images = dir.join("train-images-idx3-ubyte");
    let labels = dir.join("train-labels-idx1-ubyte");
    if !images.exists() || !labels.exists() {
        return None;
    }
    let full = load_idx(&images, &labels).ok()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = simset_indices(full.labels(), full.class_count(), per_class, &mut rng).ok()?;
    Some(full.subset(&idx))
}

/// The image dataset for the desk-scale runs: real MNIST if present in the
/// environment, the synthetic glyph task otherwise.
pub fn desk_scale_images(per_class: usize, seed: u64) -> (Dataset, &'static str) {
    match mnist_if_available(per_class, seed) {
        Some(ds) => (ds, "mnist"),
        None => (synth_digits(per_class, 28, seed), "synthetic-glyphs"),
    }
}

/// Multivariate series where only dimension 0 carries class information
/// (class-dependent frequency); every other dimension is pure noise.
pub fn mts_signal_in_dim0(
    per_class: usize,
    classes: usize,
    dims: usize,
    length: usize,
    seed: u64,
) -> MtsDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut series = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * classes {
        let label = i % classes;
        let mut sample = Vec::with_capacity(dims);
        let freq = 0.35 + 0.55 * label as f64;
        let phase = rng.gen::<f64>() * std::f64::consts::TAU;
        sample.push(
            (0..length)
                .map(|t| (freq * t as f64 + phase).sin() + 0.1 * (rng.gen::<f64>() - 0.5))
                .collect::<Vec<f64>>(),
        );
        for _ in 1..dims {
            sample.push((0..length).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect());
        }
        series.push(sample);
        labels.push(label);
    }
    MtsDataset {
        series,
        dims,
        length,
        labels,
        class_count: classes,
    }
}

/// Minimal DOT grammar checker: accepts exactly the digraph shape this crate
/// emits and returns (node names, edges). Any other line is an error.
pub fn parse_dot(text: &str) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty input")?;
    if header.trim() != "digraph model {" {
        return Err(format!("bad header: `{header}`"));
    }
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut closed = false;
    for line in lines {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if t == "}" {
            closed = true;
            continue;
        }
        if closed {
            return Err(format!("content after closing brace: `{t}`"));
        }
        if let Some(rest) = t.strip_suffix(';') {
            if rest.starts_with("rankdir=") {
                continue;
            }
            if let Some((from, to)) = rest.split_once(" -> ") {
                let (from, to) = (from.trim(), to.trim());
                if !is_ident(from) || !is_ident(to) {
                    return Err(format!("bad edge ids: `{t}`"));
                }
                edges.push((from.to_string(), to.to_string()));
                continue;
            }
            if let Some((id, attrs)) = rest.split_once(' ') {
                if is_ident(id)
                    && attrs.starts_with("[label=\"")
                    && attrs.ends_with("\"]")
                {
                    nodes.push(id.to_string());
                    continue;
                }
            }
        }
        return Err(format!("unrecognized statement: `{t}`"));
    }
    if !closed {
        return Err("missing closing brace".into());
    }
    for (from, to) in &edges {
        if !nodes.contains(from) || !nodes.contains(to) {
            return Err(format!("edge {from}->{to} references undeclared node"));
        }
    }
    Ok((nodes, edges))
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !s.chars().next().unwrap().is_ascii_digit()
}
