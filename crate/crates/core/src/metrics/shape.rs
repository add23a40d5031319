//! Component roundness as the isoperimetric quotient `4πA/P²`, where `P`
//! counts the unit pixel edges on the outer boundary of an 8-connected
//! component (holes do not contribute).

use std::f64::consts::PI;

use super::components::{component_labels, Connectivity};
use super::BinaryMask;

// Headings in clockwise order: east, south, west, north.
const STEPS: [(isize, isize); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];

/// Pixels to the left and right of the edge leaving corner `(cy, cx)` with
/// heading `d`, as `(y, x)` pixel coordinates.
fn edge_sides(cy: isize, cx: isize, d: usize) -> ((isize, isize), (isize, isize)) {
    match d {
        0 => ((cy - 1, cx), (cy, cx)),
        1 => ((cy, cx), (cy, cx - 1)),
        2 => ((cy, cx - 1), (cy - 1, cx - 1)),
        _ => ((cy - 1, cx - 1), (cy - 1, cx)),
    }
}

/// Length of the outer boundary of the component containing `start`,
/// traced corner to corner with the component kept on the right.
fn trace_boundary(labels: &[usize], h: usize, w: usize, start: (usize, usize)) -> usize {
    let label = labels[start.0 * w + start.1];
    let inside = |(y, x): (isize, isize)| {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && labels[y as usize * w + x as usize] == label
    };
    let origin = (start.0 as isize, start.1 as isize, 0usize);
    let (mut cy, mut cx, mut d) = origin;
    let mut steps = 0;
    loop {
        cy += STEPS[d].0;
        cx += STEPS[d].1;
        steps += 1;
        let (front_left, front_right) = edge_sides(cy, cx, d);
        d = if inside(front_left) {
            (d + 3) % 4
        } else if inside(front_right) {
            d
        } else {
            (d + 1) % 4
        };
        if (cy, cx, d) == origin {
            return steps;
        }
    }
}

/// `(area, outer perimeter)` for every 8-connected component, in label
/// order.
pub fn outer_perimeter(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height(), mask.width());
    let (labels, n) = component_labels(mask, Connectivity::Eight);
    let mut area = vec![0usize; n];
    let mut first = vec![None; n];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        area[l - 1] += 1;
        first[l - 1].get_or_insert((i / w, i % w));
    }
    area.into_iter()
        .zip(first)
        .map(|(a, start)| (a, trace_boundary(&labels, h, w, start.expect("labelled pixel"))))
        .collect()
}

/// `4πA/P²` for each component.
pub fn component_roundness(mask: &BinaryMask) -> Vec<f64> {
    outer_perimeter(mask)
        .into_iter()
        .map(|(a, p)| 4.0 * PI * a as f64 / (p * p) as f64)
        .collect()
}

/// Area-weighted mean component roundness; 0 for an empty mask.
pub fn roundness_score(mask: &BinaryMask) -> f64 {
    let parts = outer_perimeter(mask);
    let total: usize = parts.iter().map(|&(a, _)| a).sum();
    if total == 0 {
        return 0.0;
    }
    parts
        .iter()
        .map(|&(a, p)| a as f64 * (4.0 * PI * a as f64 / (p * p) as f64))
        .sum::<f64>()
        / total as f64
}

pub fn roundness_error(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    (roundness_score(pred) - roundness_score(gt)).abs()
}
