//! Exact Euclidean distance transform.
//!
//! Two separable passes of the lower-envelope-of-parabolas algorithm, first
//! along columns and then along rows, give squared distances in linear time.

/// Squared distance from every pixel of an `height`×`width` grid to the
/// nearest `true` pixel of `seeds`; `f64::INFINITY` when there is none.
pub fn squared_distance_to(seeds: &[bool], height: usize, width: usize) -> Vec<f64> {
    assert_eq!(seeds.len(), height * width);
    let mut d: Vec<f64> = seeds
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let longest = height.max(width);
    let mut f = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];

    for x in 0..width {
        for y in 0..height {
            f[y] = d[y * width + x];
        }
        lower_envelope(&f[..height], &mut out[..height], &mut v, &mut z);
        for y in 0..height {
            d[y * width + x] = out[y];
        }
    }
    for y in 0..height {
        let row = &mut d[y * width..(y + 1) * width];
        f[..width].copy_from_slice(row);
        lower_envelope(&f[..width], &mut out[..width], &mut v, &mut z);
        row.copy_from_slice(&out[..width]);
    }
    d
}

/// Euclidean distance to the nearest seed.
pub fn distance_to(seeds: &[bool], height: usize, width: usize) -> Vec<f64> {
    squared_distance_to(seeds, height, width)
        .into_iter()
        .map(f64::sqrt)
        .collect()
}

/// 1-D squared distance transform of the sampled function `f`:
/// `out[q] = min_p (q - p)² + f[p]`.
fn lower_envelope(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    // Parabolas rooted at infinite samples never contribute.
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k as usize] = q;
            z[k as usize] = s;
            z[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        out.fill(f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let dq = q as f64 - p as f64;
        *o = dq * dq + f[p];
    }
}
