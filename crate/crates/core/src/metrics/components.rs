//! Two-pass connected component labeling with union-find.

use super::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Connectivity {
    Four,
    Eight,
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new() -> Self {
        DisjointSet {
            parent: Vec::new(),
            rank: Vec::new(),
        }
    }

    fn make(&mut self) -> usize {
        let id = self.parent.len();
        self.parent.push(id);
        self.rank.push(0);
        id
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Labels foreground pixels `1..=n` in raster order of first appearance;
/// background is 0. Returns the label image and `n`.
pub fn component_labels(mask: &BinaryMask, connectivity: Connectivity) -> (Vec<usize>, usize) {
    let (h, w) = (mask.height(), mask.width());
    const NONE: usize = usize::MAX;
    let mut provisional = vec![NONE; h * w];
    let mut sets = DisjointSet::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let mut neighbors = [NONE; 4];
            neighbors[0] = if x > 0 { provisional[y * w + x - 1] } else { NONE };
            if y > 0 {
                let up = (y - 1) * w;
                neighbors[1] = provisional[up + x];
                if connectivity == Connectivity::Eight {
                    neighbors[2] = if x > 0 { provisional[up + x - 1] } else { NONE };
                    neighbors[3] = if x + 1 < w { provisional[up + x + 1] } else { NONE };
                }
            }
            let mut label = NONE;
            for &n in neighbors.iter().filter(|&&n| n != NONE) {
                if label == NONE {
                    label = n;
                } else {
                    sets.union(label, n);
                }
            }
            if label == NONE {
                label = sets.make();
            }
            provisional[y * w + x] = label;
        }
    }
    let mut remap = vec![0usize; sets.parent.len()];
    let mut next = 0;
    let mut labels = vec![0usize; h * w];
    for (i, &p) in provisional.iter().enumerate() {
        if p == NONE {
            continue;
        }
        let root = sets.find(p);
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        labels[i] = remap[root];
    }
    (labels, next)
}

pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> usize {
    component_labels(mask, connectivity).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn flood_fill_count(mask: &BinaryMask, connectivity: Connectivity) -> usize {
        let (h, w) = (mask.height() as isize, mask.width() as isize);
        let mut seen = vec![false; mask.data().len()];
        let offsets: &[(isize, isize)] = match connectivity {
            Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
        };
        let mut count = 0;
        for start in 0..mask.data().len() {
            if !mask.data()[start] || seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                let (y, x) = ((i as isize) / w, (i as isize) % w);
                for &(dy, dx) in offsets {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h || nx >= w {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if mask.data()[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        count
    }

    #[test]
    fn empty_and_diagonal_cases() {
        assert_eq!(connected_components(&BinaryMask::empty(4, 4), Connectivity::Eight), 0);
        let diag = BinaryMask::from_ascii(&["#.", ".#"]);
        assert_eq!(connected_components(&diag, Connectivity::Eight), 1);
        assert_eq!(connected_components(&diag, Connectivity::Four), 2);
        let u = BinaryMask::from_ascii(&["#.#", "#.#", "###"]);
        assert_eq!(connected_components(&u, Connectivity::Four), 1);
        let anti = BinaryMask::from_ascii(&[".#", "#."]);
        assert_eq!(connected_components(&anti, Connectivity::Eight), 1);
    }

    #[test]
    fn matches_flood_fill_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..200 {
            let density = 0.2 + 0.4 * (trial % 5) as f64 / 4.0;
            let data = (0..256).map(|_| rng.random_bool(density)).collect();
            let m = BinaryMask::new(16, 16, data);
            for conn in [Connectivity::Four, Connectivity::Eight] {
                assert_eq!(connected_components(&m, conn), flood_fill_count(&m, conn));
            }
        }
    }

    #[test]
    fn labels_are_dense_and_consistent() {
        let m = BinaryMask::from_ascii(&["##..#", "....#", "#...."]);
        let (labels, n) = component_labels(&m, Connectivity::Eight);
        assert_eq!(n, 3);
        assert_eq!(labels[0], 1);
        assert_eq!(labels[1], 1);
        assert_eq!(labels[4], 2);
        assert_eq!(labels[9], 2);
        assert_eq!(labels[10], 3);
    }
}
