//! Procedural glyph dataset for desk-scale runs.
//!
//! Each class is a fixed arrangement of strokes and ellipse outlines (derived
//! from the class index alone, so class geometry is stable across run seeds).
//! Each rendered image jitters the glyph with a small rotation, translation,
//! scale and intensity change over a noisy background, then goes to disk as a
//! PNG in the `load_dataset` layout.

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use image::RgbImage;
use std::path::Path;

const MAX_CLASSES: usize = 64;

#[derive(Clone, Copy)]
struct Stroke {
    a: (f64, f64),
    b: (f64, f64),
    thickness: f64,
}

#[derive(Clone, Copy)]
struct Ellipse {
    center: (f64, f64),
    rx: f64,
    ry: f64,
    angle: f64,
    band: f64,
}

struct Glyph {
    strokes: Vec<Stroke>,
    ellipses: Vec<Ellipse>,
}

/// Class geometry in unit coordinates, derived from the class index only.
///
/// Each class is a segment-display arrangement: bit i of (class+1) switches
/// stroke/ring element i on. A fixed corner anchor breaks rotational and
/// mirror symmetry so jittered instances stay unambiguous.
fn archetype(class: usize) -> Glyph {
    let thickness = 0.055;
    let mut strokes = vec![
        // Orientation anchor, always present.
        Stroke {
            a: (0.14, 0.14),
            b: (0.38, 0.14),
            thickness,
        },
        Stroke {
            a: (0.14, 0.14),
            b: (0.14, 0.38),
            thickness,
        },
    ];
    let mut ellipses = Vec::new();
    let pattern = class as u32 + 1;
    let stroke_elements = [
        ((0.32, 0.30), (0.72, 0.30)), // top bar
        ((0.32, 0.52), (0.72, 0.52)), // middle bar
        ((0.32, 0.74), (0.72, 0.74)), // bottom bar
        ((0.30, 0.32), (0.30, 0.72)), // left bar
        ((0.74, 0.32), (0.74, 0.72)), // right bar
    ];
    for (i, &(a, b)) in stroke_elements.iter().enumerate() {
        if pattern & (1 << i) != 0 {
            strokes.push(Stroke { a, b, thickness });
        }
    }
    if pattern & (1 << 5) != 0 {
        ellipses.push(Ellipse {
            center: (0.52, 0.52),
            rx: 0.10,
            ry: 0.10,
            angle: 0.0,
            band: 0.05,
        });
    }
    if pattern & (1 << 6) != 0 {
        ellipses.push(Ellipse {
            center: (0.52, 0.52),
            rx: 0.20,
            ry: 0.20,
            angle: 0.0,
            band: 0.045,
        });
    }
    Glyph { strokes, ellipses }
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (p.0 - (a.0 + t * vx), p.1 - (a.1 + t * vy));
    (dx * dx + dy * dy).sqrt()
}

fn rotate_about(p: (f64, f64), center: (f64, f64), angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    let (dx, dy) = (p.0 - center.0, p.1 - center.1);
    (center.0 + c * dx - s * dy, center.1 + s * dx + c * dy)
}

/// Renders one jittered instance of a glyph as a grayscale intensity field.
fn render(glyph: &Glyph, size: usize, rng: &mut RngStream) -> Vec<f64> {
    let rotation = rng.uniform_in(-10.0f64, 10.0).to_radians();
    let tx = rng.uniform_in(-0.08, 0.08);
    let ty = rng.uniform_in(-0.08, 0.08);
    let scale = rng.uniform_in(0.92, 1.08);
    let fg = rng.uniform_in(0.8, 1.0);
    let c = (0.5, 0.5);

    let place = |p: (f64, f64)| -> (f64, f64) {
        let scaled = (c.0 + (p.0 - c.0) * scale, c.1 + (p.1 - c.1) * scale);
        let r = rotate_about(scaled, c, rotation);
        (r.0 + tx, r.1 + ty)
    };
    let strokes: Vec<Stroke> = glyph
        .strokes
        .iter()
        .map(|s| Stroke {
            a: place(s.a),
            b: place(s.b),
            thickness: s.thickness * scale,
        })
        .collect();
    let ellipses: Vec<Ellipse> = glyph
        .ellipses
        .iter()
        .map(|e| Ellipse {
            center: place(e.center),
            rx: e.rx * scale,
            ry: e.ry * scale,
            angle: e.angle + rotation,
            band: e.band * scale,
        })
        .collect();

    let edge = 1.5 / size as f64;
    let mut px = vec![0.0f64; size * size];
    for y in 0..size {
        for x in 0..size {
            let p = (
                (x as f64 + 0.5) / size as f64,
                (y as f64 + 0.5) / size as f64,
            );
            let mut cov = 0.0f64;
            for s in &strokes {
                let d = dist_to_segment(p, s.a, s.b);
                cov = cov.max(((s.thickness - d) / edge + 1.0).clamp(0.0, 1.0));
            }
            for e in &ellipses {
                let q = rotate_about(p, e.center, -e.angle);
                let (dx, dy) = ((q.0 - e.center.0) / e.rx, (q.1 - e.center.1) / e.ry);
                let radial = (dx * dx + dy * dy).sqrt();
                // Distance from the unit ring, roughly in unit coordinates.
                let d = (radial - 1.0).abs() * e.rx.min(e.ry);
                cov = cov.max(((e.band - d) / edge + 1.0).clamp(0.0, 1.0));
            }
            px[y * size + x] = fg * cov;
        }
    }
    // Noisy background under the glyph.
    for v in px.iter_mut() {
        let noise = rng.uniform_in(0.0, 0.22);
        *v = (noise + *v).clamp(0.0, 1.0);
    }
    px
}

/// Class directory names that sort lexicographically in label order.
pub fn class_name(idx: usize, num_classes: usize) -> String {
    if num_classes <= 26 {
        char::from(b'A' + idx as u8).to_string()
    } else {
        format!("C{idx:02}")
    }
}

/// Writes `num_classes × per_class` PNGs under `out_dir` (one subdirectory
/// per class) and loads the result back as a [`Dataset`]. Byte-identical
/// output for identical arguments.
pub fn synth_generate(
    num_classes: usize,
    per_class: usize,
    image_size: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Dataset> {
    if num_classes == 0 || num_classes > MAX_CLASSES {
        return Err(Error::Input(format!(
            "num_classes must be in 1..={MAX_CLASSES}, got {num_classes}"
        )));
    }
    if per_class == 0 || image_size < 8 {
        return Err(Error::Input(
            "per_class must be positive and image_size at least 8".into(),
        ));
    }
    let root = RngStream::seed(seed);
    for class in 0..num_classes {
        let glyph = archetype(class);
        let dir = out_dir.join(class_name(class, num_classes));
        std::fs::create_dir_all(&dir)?;
        for i in 0..per_class {
            let mut rng = root.derive(&[class as u64, i as u64]);
            let gray = render(&glyph, image_size, &mut rng);
            let mut img = RgbImage::new(image_size as u32, image_size as u32);
            for (idx, p) in img.pixels_mut().enumerate() {
                let v = (gray[idx] * 255.0).round() as u8;
                *p = image::Rgb([v, v, v]);
            }
            img.save_with_format(dir.join(format!("img_{i:04}.png")), image::ImageFormat::Png)
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
    }
    super::load_dataset(out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archetypes_are_class_stable() {
        let a = archetype(3);
        let b = archetype(3);
        assert_eq!(a.strokes.len(), b.strokes.len());
        assert_eq!(a.strokes[0].a, b.strokes[0].a);
        let c = archetype(4);
        assert!(a.strokes[0].a != c.strokes[0].a || a.strokes.len() != c.strokes.len());
    }

    #[test]
    fn class_names_sort_in_label_order() {
        let names: Vec<String> = (0..26).map(|i| class_name(i, 26)).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        let names64: Vec<String> = (0..64).map(|i| class_name(i, 64)).collect();
        let mut sorted64 = names64.clone();
        sorted64.sort();
        assert_eq!(names64, sorted64);
    }

    #[test]
    fn render_is_deterministic_and_bounded() {
        let g = archetype(0);
        let a = render(&g, 32, &mut RngStream::seed(1).derive(&[0, 0]));
        let b = render(&g, 32, &mut RngStream::seed(1).derive(&[0, 0]));
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // The glyph must actually draw something.
        assert!(a.iter().filter(|&&v| v > 0.5).count() > 10);
    }
}
