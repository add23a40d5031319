//! Properties of the public API checked against straightforward oracles.

use std::collections::VecDeque;

use proptest::prelude::*;

use scnp_core::distance::distance_to;
use scnp_core::losses::LossKind;
use scnp_core::metrics::{binary_closing, connected_components, BinaryMask, Connectivity};
use scnp_core::scnp::{apply_mode, scnp_backward, scnp_forward, ScnpMode};
use scnp_core::tensor::{OneHotMask, Shape, Tensor4, WindowSize};

/// Logits drawn from a small integer grid so that ties are common.
fn instance() -> impl Strategy<Value = (Tensor4, OneHotMask, usize)> {
    (1usize..3, 2usize..4, 1usize..9, 1usize..9, 0usize..4).prop_flat_map(|(b, c, h, w, r)| {
        let shape = Shape::new(b, c, h, w);
        (
            prop::collection::vec(-4i32..5, shape.len()),
            prop::collection::vec(0..c, b * h * w),
        )
            .prop_map(move |(z, labels)| {
                let z = Tensor4::from_vec(shape, z.into_iter().map(|v| v as f64 * 0.5).collect()).unwrap();
                (z, OneHotMask::from_labels(shape, &labels).unwrap(), 2 * r + 1)
            })
    })
}

/// The worst same-class value in the clipped window, first occurrence in
/// row-major order winning ties.
fn scan(z: &Tensor4, y: &OneHotMask, w: usize) -> (Vec<f64>, Vec<usize>) {
    let s = z.shape();
    let r = (w / 2) as isize;
    let mut values = Vec::new();
    let mut sources = Vec::new();
    for b in 0..s.batch {
        for k in 0..s.channels {
            for i in 0..s.height as isize {
                for j in 0..s.width as isize {
                    let fg = y.tensor().get(b, k, i as usize, j as usize) == 1.0;
                    let mut best: Option<(f64, usize)> = None;
                    for di in -r..=r {
                        for dj in -r..=r {
                            let (u, v) = (i + di, j + dj);
                            if u < 0 || v < 0 || u >= s.height as isize || v >= s.width as isize {
                                continue;
                            }
                            let (u, v) = (u as usize, v as usize);
                            if (y.tensor().get(b, k, u, v) == 1.0) != fg {
                                continue;
                            }
                            let val = z.get(b, k, u, v);
                            let idx = ((b * s.channels + k) * s.height + u) * s.width + v;
                            let better = match best {
                                None => true,
                                Some((bv, bi)) => {
                                    let strictly = if fg { val < bv } else { val > bv };
                                    strictly || (val == bv && idx < bi)
                                }
                            };
                            if better {
                                best = Some((val, idx));
                            }
                        }
                    }
                    let (v, idx) = best.unwrap();
                    values.push(v);
                    sources.push(idx);
                }
            }
        }
    }
    (values, sources)
}

fn flood_count(mask: &BinaryMask) -> usize {
    let (h, w) = (mask.height(), mask.width());
    let mut seen = vec![false; h * w];
    let mut count = 0;
    for start in 0..h * w {
        if !mask.data()[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (v, u) = (y + dy, x + dx);
                    if v < 0 || u < 0 || v >= h as isize || u >= w as isize {
                        continue;
                    }
                    let q = v as usize * w + u as usize;
                    if mask.data()[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    count
}

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(prop::bool::weighted(0.45), h * w).prop_map(move |d| BinaryMask::new(h, w, d))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn forward_matches_window_scan((z, y, w) in instance()) {
        let (out, trace) = scnp_forward(&z, &y, WindowSize::new(w).unwrap()).unwrap();
        let (values, sources) = scan(&z, &y, w);
        prop_assert_eq!(out.data(), values.as_slice());
        prop_assert_eq!(trace.sources(), sources.as_slice());
    }

    #[test]
    fn backward_routes_every_upstream_value_to_its_source((z, y, w) in instance(), scale in 0.1f64..2.0) {
        let (_, trace) = scnp_forward(&z, &y, WindowSize::new(w).unwrap()).unwrap();
        let upstream = Tensor4::from_fn(z.shape(), |b, c, i, j| scale * (1 + b + 2 * c + 3 * i + 5 * j) as f64);
        let g = scnp_backward(&trace, &upstream).unwrap();
        let mut expected = vec![0.0; z.len()];
        for (i, &src) in trace.sources().iter().enumerate() {
            expected[src] += upstream.data()[i];
        }
        prop_assert_eq!(g.data(), expected.as_slice());
    }

    #[test]
    fn joint_loss_is_plain_plus_penalized((z, y, w) in instance()) {
        let w = WindowSize::new(w).unwrap();
        for kind in [LossKind::Ce, LossKind::CeDice, LossKind::Focal] {
            let loss = kind.default_loss();
            let off = apply_mode(ScnpMode::Off, &loss, &z, &y).unwrap();
            let on = apply_mode(ScnpMode::ScnpOnly { w }, &loss, &z, &y).unwrap();
            let joint = apply_mode(ScnpMode::Joint { w }, &loss, &z, &y).unwrap();
            prop_assert_eq!(joint.value, off.value + on.value);
            prop_assert_eq!(joint.grad_z, off.grad_z.add(&on.grad_z).unwrap());
        }
    }

    #[test]
    fn components_match_flood_fill(mask in mask_strategy(16)) {
        prop_assert_eq!(connected_components(&mask, Connectivity::Eight), flood_count(&mask));
    }

    #[test]
    fn distances_match_brute_force(mask in mask_strategy(12)) {
        let (h, w) = (mask.height(), mask.width());
        prop_assume!(mask.count() > 0);
        let d = distance_to(mask.data(), h, w);
        for p in 0..h * w {
            let (y, x) = ((p / w) as f64, (p % w) as f64);
            let best = (0..h * w)
                .filter(|&q| mask.data()[q])
                .map(|q| ((q / w) as f64 - y).powi(2) + ((q % w) as f64 - x).powi(2))
                .fold(f64::INFINITY, f64::min);
            prop_assert_eq!(d[p], best.sqrt());
        }
    }

    #[test]
    fn closing_is_extensive_and_idempotent(mask in mask_strategy(12), r in 1usize..3) {
        let k = 2 * r + 1;
        let closed = binary_closing(&mask, k, 64);
        prop_assert!(mask.is_subset_of(&closed));
        prop_assert_eq!(binary_closing(&closed, k, 64), closed);
    }
}
