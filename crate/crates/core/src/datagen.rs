//! Synthetic segmentation data: thin tubular curves whose image signal
//! drops out along short stretches, and non-touching disks.
//!
//! Every sample is a pure function of the parameters and its index.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Manifest, SampleEntry};
use crate::distance::distance_to;
use crate::error::{Error, Result};
use crate::metrics::{connected_components, hard_skeleton, BinaryMask, Connectivity};
use crate::rng;
use crate::tensor::{Shape, Tensor4};
use crate::tns;

pub const SIGNAL: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Structure {
    Tubular { thickness: f64 },
    Round { radius_min: f64, radius_max: f64 },
}

impl Structure {
    pub fn name(&self) -> &'static str {
        match self {
            Structure::Tubular { .. } => "tubular",
            Structure::Round { .. } => "round",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub structure: Structure,
    pub n_samples: usize,
    pub size: usize,
    pub noise: f64,
    /// Chance that a curve gets one dropout stretch.
    pub dropout: f64,
    /// Inclusive range of dropout stretch lengths in pixels.
    pub dropout_len: [usize; 2],
    /// Fraction of the signal left inside a dropout stretch.
    #[serde(default)]
    pub dropout_residual: f64,
    pub seed: u64,
}

impl GenParams {
    pub fn tubular(n_samples: usize, size: usize, thickness: f64, seed: u64) -> Self {
        GenParams {
            structure: Structure::Tubular { thickness },
            n_samples,
            size,
            noise: 0.15,
            dropout: 0.5,
            dropout_len: [3, 6],
            dropout_residual: 0.25,
            seed,
        }
    }

    pub fn round(n_samples: usize, size: usize, seed: u64) -> Self {
        GenParams {
            structure: Structure::Round {
                radius_min: 3.0,
                radius_max: 6.0,
            },
            ..Self::tubular(n_samples, size, 1.0, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be at least 1"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("noise must be non-negative, got {}", self.noise)));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout must lie in [0, 1], got {}", self.dropout)));
        }
        if !(0.0..=1.0).contains(&self.dropout_residual) {
            return Err(Error::invalid(format!(
                "dropout residual must lie in [0, 1], got {}",
                self.dropout_residual
            )));
        }
        let [lo, hi] = self.dropout_len;
        if lo == 0 || lo > hi {
            return Err(Error::invalid(format!("bad dropout length range {lo}..={hi}")));
        }
        match self.structure {
            Structure::Tubular { thickness } => {
                if !(thickness >= 1.0) {
                    return Err(Error::invalid(format!("thickness must be at least 1, got {thickness}")));
                }
                if 2.0 * thickness + 2.0 >= self.size as f64 {
                    return Err(Error::invalid(format!(
                        "thickness {thickness} does not fit a {0}×{0} image",
                        self.size
                    )));
                }
            }
            Structure::Round { radius_min, radius_max } => {
                if !(radius_min >= 1.0 && radius_min <= radius_max) {
                    return Err(Error::invalid(format!("bad radius range {radius_min}..={radius_max}")));
                }
                if 2.0 * radius_max + 2.0 >= self.size as f64 {
                    return Err(Error::invalid(format!(
                        "radius {radius_max} does not fit a {0}×{0} image",
                        self.size
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One generated image with its mask and the individual structures that
/// were rasterized into it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Vec<f64>,
    pub mask: BinaryMask,
    pub parts: Vec<BinaryMask>,
    pub components: usize,
}

type Point = (f64, f64);

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dy + (p.1 - a.1) * dx) / len2).clamp(0.0, 1.0)
    };
    let (qy, qx) = (a.0 + t * dy - p.0, a.1 + t * dx - p.1);
    (qy * qy + qx * qx).sqrt()
}

/// Marks every pixel whose center lies within `radius` of the polyline.
fn rasterize_polyline(points: &[Point], radius: f64, mask: &mut BinaryMask) {
    let (h, w) = (mask.height(), mask.width());
    for seg in points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let y0 = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
        let y1 = ((a.0.max(b.0) + radius).ceil() as usize).min(h - 1);
        let x0 = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
        let x1 = ((a.1.max(b.1) + radius).ceil() as usize).min(w - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if !mask.get(y, x) && segment_distance((y as f64, x as f64), a, b) <= radius {
                    mask.set(y, x, true);
                }
            }
        }
    }
}

fn bezier(p0: Point, p1: Point, p2: Point, samples: usize) -> Vec<Point> {
    (0..=samples)
        .map(|i| {
            let s = i as f64 / samples as f64;
            let (a, b, c) = ((1.0 - s) * (1.0 - s), 2.0 * (1.0 - s) * s, s * s);
            (a * p0.0 + b * p1.0 + c * p2.0, a * p0.1 + b * p1.1 + c * p2.1)
        })
        .collect()
}

/// Sub-polyline covering arc length `[start, start + len]`.
fn arc_slice(points: &[Point], start: f64, len: f64) -> Vec<Point> {
    let mut out = Vec::new();
    let mut travelled = 0.0;
    let end = start + len;
    for seg in points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let l = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let (s0, s1) = (travelled, travelled + l);
        travelled = s1;
        if s1 < start || s0 > end || l == 0.0 {
            continue;
        }
        let lerp = |s: f64| {
            let t = ((s - s0) / l).clamp(0.0, 1.0);
            (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
        };
        if out.is_empty() {
            out.push(lerp(start.max(s0)));
        }
        out.push(lerp(end.min(s1)));
    }
    out
}

fn arc_length(points: &[Point]) -> f64 {
    points
        .windows(2)
        .map(|s| ((s[1].0 - s[0].0).powi(2) + (s[1].1 - s[0].1).powi(2)).sqrt())
        .sum()
}

fn tubular_sample(p: &GenParams, thickness: f64, rng: &mut ChaCha8Rng) -> (BinaryMask, Vec<BinaryMask>, BinaryMask) {
    let n = p.size;
    let margin = thickness;
    let hi = n as f64 - 1.0 - margin;
    let radius = thickness / 2.0;
    let mut mask = BinaryMask::empty(n, n);
    let mut dropped = BinaryMask::empty(n, n);
    let mut parts = Vec::new();
    let curves = rng.random_range(2..=4);
    for _ in 0..curves {
        let mut point = || (rng.random_range(margin..hi), rng.random_range(margin..hi));
        let (p0, p1, p2) = (point(), point(), point());
        let rough = arc_length(&[p0, p1, p2]);
        let poly = bezier(p0, p1, p2, (rough * 2.0).ceil().max(8.0) as usize);
        let mut part = BinaryMask::empty(n, n);
        rasterize_polyline(&poly, radius, &mut part);
        if rng.random_bool(p.dropout) {
            let len = rng.random_range(p.dropout_len[0]..=p.dropout_len[1]) as f64;
            let total = arc_length(&poly);
            let start = if total > len { rng.random_range(0.0..total - len) } else { 0.0 };
            let cut = arc_slice(&poly, start, len);
            rasterize_polyline(&cut, radius + 0.5, &mut dropped);
        }
        mask.union_with(&part);
        parts.push(part);
    }
    (mask, parts, dropped)
}

fn round_sample(p: &GenParams, rmin: f64, rmax: f64, rng: &mut ChaCha8Rng) -> (BinaryMask, Vec<BinaryMask>) {
    let n = p.size;
    let target = rng.random_range(5..=15);
    let mut disks: Vec<(f64, f64, f64)> = Vec::new();
    let mut attempts = 0;
    while disks.len() < target && attempts < 1000 {
        attempts += 1;
        let r = if rmax > rmin { rng.random_range(rmin..=rmax) } else { rmin };
        let cy = rng.random_range(r..n as f64 - 1.0 - r);
        let cx = rng.random_range(r..n as f64 - 1.0 - r);
        // Centers further apart than r1 + r2 + √2 keep the rasters from
        // touching even diagonally.
        let clear = disks
            .iter()
            .all(|&(y, x, q)| ((y - cy).powi(2) + (x - cx).powi(2)).sqrt() > r + q + 2.0);
        if clear {
            disks.push((cy, cx, r));
        }
    }
    let mut mask = BinaryMask::empty(n, n);
    let parts = disks
        .iter()
        .map(|&(cy, cx, r)| {
            let mut part = BinaryMask::empty(n, n);
            for y in 0..n {
                for x in 0..n {
                    if (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r {
                        part.set(y, x, true);
                        mask.set(y, x, true);
                    }
                }
            }
            part
        })
        .collect();
    (mask, parts)
}

/// Generates sample `index`.
pub fn generate_sample(p: &GenParams, index: usize) -> Result<Sample> {
    p.validate()?;
    let mut rng = rng::indexed_stream(p.seed, "data", index as u64);
    let (mask, parts, dropped) = match p.structure {
        Structure::Tubular { thickness } => tubular_sample(p, thickness, &mut rng),
        Structure::Round { radius_min, radius_max } => {
            let (m, parts) = round_sample(p, radius_min, radius_max, &mut rng);
            (m, parts, BinaryMask::empty(p.size, p.size))
        }
    };
    let normal = Normal::new(0.0, p.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let image = mask
        .data()
        .iter()
        .zip(dropped.data())
        .map(|(&m, &d)| {
            let signal = match (m, d) {
                (false, _) => 0.0,
                (true, false) => SIGNAL,
                (true, true) => SIGNAL * p.dropout_residual,
            };
            let noise = if p.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            // Stored at single precision on disk; round here so the
            // in-memory sample equals its file.
            (signal + noise) as f32 as f64
        })
        .collect();
    let components = connected_components(&mask, Connectivity::Eight);
    Ok(Sample {
        image,
        mask,
        parts,
        components,
    })
}

pub fn generate(p: &GenParams) -> Result<Vec<Sample>> {
    (0..p.n_samples).map(|i| generate_sample(p, i)).collect()
}

fn manifest_for(p: &GenParams, samples: &[Sample]) -> Manifest {
    let samples = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let id = format!("{i:05}");
            SampleEntry {
                image: format!("images/{id}.tns"),
                mask: format!("masks/{id}.tns"),
                id,
                components: Some(s.components),
            }
        })
        .collect();
    Manifest {
        kind: p.structure.name().to_string(),
        params: *p,
        seed: p.seed,
        classes: 2,
        height: p.size,
        width: p.size,
        samples,
    }
}

/// Generates the dataset into `dir` (`dataset.json`, `images/`, `masks/`).
pub fn write_dataset(dir: &Path, p: &GenParams) -> Result<Manifest> {
    let samples = generate(p)?;
    for sub in ["images", "masks"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let manifest = manifest_for(p, &samples);
    let dims = [1, 1, p.size, p.size];
    for (entry, s) in manifest.samples.iter().zip(&samples) {
        tns::write(&dir.join(&entry.image), &dims, &s.image)?;
        tns::write(&dir.join(&entry.mask), &dims, &s.mask.to_plane())?;
    }
    manifest.write(dir)?;
    Ok(manifest)
}

/// The dataset [`write_dataset`] would produce, kept in memory.
pub fn build_dataset(p: &GenParams) -> Result<Dataset> {
    let samples = generate(p)?;
    let (images, labels) = stack_samples(&samples, p.size)?;
    Ok(Dataset {
        manifest: manifest_for(p, &samples),
        images,
        labels,
    })
}

/// Median structure thickness: `2d - 1` at every skeleton pixel, where `d`
/// is the distance from the pixel center to the nearest background pixel
/// center (outside the image counts as background). `None` for an empty
/// mask.
pub fn median_thickness(mask: &BinaryMask) -> Option<f64> {
    let (h, w) = (mask.height(), mask.width());
    let (ph, pw) = (h + 2, w + 2);
    let mut background = vec![true; ph * pw];
    for y in 0..h {
        for x in 0..w {
            background[(y + 1) * pw + x + 1] = !mask.get(y, x);
        }
    }
    let d = distance_to(&background, ph, pw);
    let skel = hard_skeleton(mask);
    let mut values: Vec<f64> = (0..h * w)
        .filter(|&i| skel.data()[i])
        .map(|i| 2.0 * d[(i / w + 1) * pw + i % w + 1] - 1.0)
        .collect();
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    })
}

/// Stacks samples into an image tensor and a label tensor, both
/// `(n, 1, size, size)`.
pub fn stack_samples(samples: &[Sample], size: usize) -> Result<(Tensor4, Tensor4)> {
    let shape = Shape::new(samples.len(), 1, size, size);
    let images = Tensor4::from_vec(shape, samples.iter().flat_map(|s| s.image.iter().copied()).collect())?;
    let labels = Tensor4::from_vec(shape, samples.iter().flat_map(|s| s.mask.to_plane()).collect())?;
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{component_roundness, dilate};

    #[test]
    fn clean_image_is_scaled_mask() {
        let mut p = GenParams::tubular(3, 32, 2.0, 4);
        p.noise = 0.0;
        p.dropout = 0.0;
        for s in generate(&p).unwrap() {
            for (&v, m) in s.image.iter().zip(s.mask.to_plane()) {
                assert_eq!(v, (SIGNAL * m) as f32 as f64);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let p = GenParams::tubular(4, 32, 2.0, 11);
        assert_eq!(generate(&p).unwrap(), generate(&p).unwrap());
        let q = GenParams { seed: 12, ..p };
        assert_ne!(generate(&p).unwrap()[0].image, generate(&q).unwrap()[0].image);
    }

    #[test]
    fn dropout_only_touches_the_image() {
        for residual in [0.0, 0.3] {
            let mut p = GenParams::tubular(20, 48, 2.0, 2);
            p.noise = 0.0;
            p.dropout = 1.0;
            p.dropout_residual = residual;
            let faint = (SIGNAL * residual) as f32 as f64;
            let mut darkened = 0;
            for s in generate(&p).unwrap() {
                for (&v, m) in s.image.iter().zip(s.mask.data()) {
                    if *m {
                        assert!(v == SIGNAL as f32 as f64 || v == faint, "{v}");
                        darkened += (v == faint) as usize;
                    } else {
                        assert_eq!(v, 0.0);
                    }
                }
            }
            assert!(darkened > 0);
        }
    }

    /// Groups curves whose rasters touch (8-adjacency) and counts groups.
    fn touching_groups(parts: &[BinaryMask]) -> usize {
        let n = parts.len();
        let mut group: Vec<usize> = (0..n).collect();
        fn root(g: &mut [usize], mut i: usize) -> usize {
            while g[i] != i {
                i = g[i];
            }
            i
        }
        for i in 0..n {
            let grown = dilate(&parts[i], 3);
            for j in i + 1..n {
                if grown.intersection_count(&parts[j]) > 0 {
                    let (a, b) = (root(&mut group, i), root(&mut group, j));
                    group[a] = b;
                }
            }
        }
        (0..n).filter(|&i| root(&mut group, i) == i).count()
    }

    #[test]
    fn component_count_matches_touching_curves() {
        let p = GenParams::tubular(30, 64, 2.0, 5);
        for s in generate(&p).unwrap() {
            assert!((2..=4).contains(&s.parts.len()));
            for part in &s.parts {
                assert_eq!(connected_components(part, Connectivity::Eight), 1);
            }
            assert_eq!(s.components, touching_groups(&s.parts));
        }
    }

    #[test]
    fn unit_thickness_curves_measure_one() {
        let p = GenParams::tubular(10, 64, 1.0, 8);
        for s in generate(&p).unwrap() {
            assert_eq!(median_thickness(&s.mask), Some(1.0));
        }
        let bar = BinaryMask::from_ascii(&[".......", ".#####.", ".#####.", ".#####.", "......."]);
        assert_eq!(median_thickness(&bar), Some(3.0));
    }

    #[test]
    fn disks_never_touch() {
        let p = GenParams::round(20, 64, 3);
        for s in generate(&p).unwrap() {
            assert!((5..=15).contains(&s.parts.len()), "{} disks", s.parts.len());
            assert_eq!(s.components, s.parts.len());
        }
    }

    #[test]
    fn radius_eight_disks_match_boundary_oracle() {
        let mut p = GenParams::round(4, 64, 6);
        p.structure = Structure::Round {
            radius_min: 8.0,
            radius_max: 8.0,
        };
        p.noise = 0.0;
        let mut got = Vec::new();
        let mut oracle = Vec::new();
        for s in generate(&p).unwrap() {
            got.extend(component_roundness(&s.mask));
            for part in &s.parts {
                // Outer boundary edges: set pixels with an unset (or
                // off-image) 4-neighbor, counted per side. Disks have no
                // holes, so every such edge is on the outer boundary.
                let (h, w) = (part.height() as isize, part.width() as isize);
                let at = |y: isize, x: isize| y >= 0 && x >= 0 && y < h && x < w && part.get(y as usize, x as usize);
                let mut perimeter = 0;
                for y in 0..h {
                    for x in 0..w {
                        if at(y, x) {
                            perimeter += [(-1, 0), (1, 0), (0, -1), (0, 1)]
                                .iter()
                                .filter(|&&(dy, dx)| !at(y + dy, x + dx))
                                .count();
                        }
                    }
                }
                oracle.push(4.0 * std::f64::consts::PI * part.count() as f64 / (perimeter * perimeter) as f64);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert_eq!(got.len(), oracle.len());
        assert!((mean(&got) - mean(&oracle)).abs() < 0.02);
    }

    #[test]
    fn rejects_infeasible_parameters() {
        assert!(generate(&GenParams::tubular(1, 8, 4.0, 0)).is_err());
        assert!(generate(&GenParams::tubular(1, 32, 0.5, 0)).is_err());
        let mut p = GenParams::tubular(1, 32, 1.0, 0);
        p.dropout = 1.5;
        assert!(generate(&p).is_err());
    }
}
