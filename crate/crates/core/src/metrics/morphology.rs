//! Binary dilation, erosion and closing with square structuring elements.
//! Dilation and erosion clip their windows at the border, matching the
//! tensor pooling kernels. Closing treats everything outside the image as
//! background, so it never removes a pixel.

use super::BinaryMask;

fn square_filter(mask: &BinaryMask, size: usize, any: bool) -> BinaryMask {
    assert!(size % 2 == 1, "structuring element size must be odd");
    let (h, w) = (mask.height(), mask.width());
    let r = size / 2;
    let mut out = BinaryMask::empty(h, w);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            let window = (y0..=y1).flat_map(|yy| (x0..=x1).map(move |xx| (yy, xx)));
            let v = if any {
                window.into_iter().any(|(yy, xx)| mask.get(yy, xx))
            } else {
                window.into_iter().all(|(yy, xx)| mask.get(yy, xx))
            };
            out.set(y, x, v);
        }
    }
    out
}

pub fn dilate(mask: &BinaryMask, size: usize) -> BinaryMask {
    square_filter(mask, size, true)
}

pub fn erode(mask: &BinaryMask, size: usize) -> BinaryMask {
    square_filter(mask, size, false)
}

fn close_once(mask: &BinaryMask, size: usize) -> BinaryMask {
    let r = size / 2;
    let (h, w) = (mask.height(), mask.width());
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let mut padded = BinaryMask::empty(ph, pw);
    for y in 0..h {
        for x in 0..w {
            padded.set(y + r, x + r, mask.get(y, x));
        }
    }
    let closed = erode(&dilate(&padded, size), size);
    let mut out = BinaryMask::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            out.set(y, x, closed.get(y + r, x + r));
        }
    }
    out
}

/// Dilation followed by erosion, repeated until the mask stops changing or
/// `max_iterations` rounds have run.
pub fn binary_closing(mask: &BinaryMask, size: usize, max_iterations: usize) -> BinaryMask {
    let mut current = mask.clone();
    for _ in 0..max_iterations {
        let next = close_once(&current, size);
        if next == current {
            break;
        }
        current = next;
    }
    current
}
