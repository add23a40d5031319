//! Zhang–Suen thinning.

use super::BinaryMask;

/// Thins `mask` to a one-pixel-wide skeleton by alternating the two
/// Zhang–Suen sub-iterations until neither removes a pixel. Pixels outside
/// the grid count as background.
pub fn hard_skeleton(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    // One pixel of zero padding on every side.
    let pw = w + 2;
    let mut grid = vec![false; (h + 2) * pw];
    for y in 0..h {
        for x in 0..w {
            grid[(y + 1) * pw + x + 1] = mask.get(y, x);
        }
    }
    let mut doomed = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            doomed.clear();
            for y in 1..=h {
                for x in 1..=w {
                    let i = y * pw + x;
                    if grid[i] && removable(&grid, pw, i, pass) {
                        doomed.push(i);
                    }
                }
            }
            for &i in &doomed {
                grid[i] = false;
            }
            changed |= !doomed.is_empty();
        }
        if !changed {
            break;
        }
    }
    let mut out = BinaryMask::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            out.set(y, x, grid[(y + 1) * pw + x + 1]);
        }
    }
    out
}

fn removable(grid: &[bool], pw: usize, i: usize, pass: usize) -> bool {
    // P2..P9 clockwise from north.
    let n = [
        grid[i - pw],
        grid[i - pw + 1],
        grid[i + 1],
        grid[i + pw + 1],
        grid[i + pw],
        grid[i + pw - 1],
        grid[i - 1],
        grid[i - pw - 1],
    ];
    let b = n.iter().filter(|&&v| v).count();
    if !(2..=6).contains(&b) {
        return false;
    }
    let a = (0..8).filter(|&k| !n[k] && n[(k + 1) % 8]).count();
    if a != 1 {
        return false;
    }
    let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
    if pass == 0 {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thin_line_is_fixed() {
        let line = BinaryMask::from_ascii(&[".......", ".#####.", "......."]);
        assert_eq!(hard_skeleton(&line), line);
        let diag = BinaryMask::from_ascii(&["#...", ".#..", "..#.", "...#"]);
        assert_eq!(hard_skeleton(&diag), diag);
    }

    #[test]
    fn filled_rectangle_becomes_horizontal_segment() {
        let rect = BinaryMask::from_ascii(&[
            ".......",
            ".#####.",
            ".#####.",
            ".#####.",
            ".......",
        ]);
        let skel = hard_skeleton(&rect);
        assert_eq!(
            skel.to_ascii(),
            vec![".......", ".......", "..##...", ".......", "......."]
        );
    }

    #[test]
    fn empty_stays_empty() {
        let e = BinaryMask::empty(5, 5);
        assert_eq!(hard_skeleton(&e), e);
    }
}
