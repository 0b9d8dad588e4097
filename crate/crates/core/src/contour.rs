//! Connected components, outer-boundary tracing and polygon measures.
//!
//! Components are 8-connected. Contours are closed chains of boundary pixel
//! centres in clockwise order (image coordinates, y down); consecutive
//! vertices are 8-neighbours.

use std::collections::VecDeque;

use crate::raster::BinaryMask;

pub type Point = [i32; 2];

const NEIGHBOURS: [(i32, i32); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

/// One 8-connected foreground component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// 1-based label in raster order of first pixel.
    pub label: u32,
    /// Pixels in raster order.
    pub pixels: Vec<Point>,
}

impl Component {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Labels 8-connected components of `mask`. Returns the label raster
/// (0 = background) and the number of components.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, u32) {
    let (w, h) = (mask.width() as i32, mask.height() as i32);
    let bits = mask.bits();
    let mut labels = vec![0u32; bits.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..bits.len() {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i as i32) % w, (i as i32) / w);
            for (dx, dy) in NEIGHBOURS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let j = (ny * w + nx) as usize;
                if bits[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    (labels, next)
}

/// All components of `mask`, ordered by label.
pub fn components(mask: &BinaryMask) -> Vec<Component> {
    let (labels, n) = label_components(mask);
    let w = mask.width() as usize;
    let mut out: Vec<Component> = (1..=n)
        .map(|label| Component {
            label,
            pixels: Vec::new(),
        })
        .collect();
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            out[l as usize - 1]
                .pixels
                .push([(i % w) as i32, (i / w) as i32]);
        }
    }
    out
}

/// Moore-neighbour trace of the outer boundary of the region containing
/// `start`, which must be its first pixel in raster order. `inside` reports
/// membership of arbitrary (possibly out-of-image) coordinates.
pub fn trace_outer_contour(start: Point, inside: impl Fn(i32, i32) -> bool) -> Vec<Point> {
    debug_assert!(inside(start[0], start[1]));
    let mut contour = vec![start];
    // The west neighbour of the first raster pixel is background.
    let mut cur = start;
    let mut back_dir = 0usize;
    let mut first_move: Option<Point> = None;
    // A closed boundary visits each pixel at most four times.
    let limit = 4 * 8 * 1_000_000usize;
    for _ in 0..limit {
        let mut found = None;
        for i in 1..=8 {
            let d = (back_dir + i) % 8;
            let (dx, dy) = NEIGHBOURS[d];
            let n = [cur[0] + dx, cur[1] + dy];
            if inside(n[0], n[1]) {
                // previously examined (background) neighbour becomes the new backtrack
                let pd = (back_dir + i - 1) % 8;
                let (bx, by) = NEIGHBOURS[pd];
                let b = [cur[0] + bx, cur[1] + by];
                found = Some((n, b));
                break;
            }
        }
        let Some((next, back)) = found else {
            // isolated pixel
            return contour;
        };
        if cur == start {
            match first_move {
                None => first_move = Some(next),
                Some(fm) if fm == next => {
                    contour.pop();
                    return contour;
                }
                Some(_) => {}
            }
        }
        let (dx, dy) = (back[0] - next[0], back[1] - next[1]);
        back_dir = NEIGHBOURS
            .iter()
            .position(|&v| v == (dx, dy))
            .expect("backtrack is a neighbour of the new pixel");
        cur = next;
        contour.push(cur);
    }
    contour
}

/// Outer contour of a component (holes ignored).
pub fn component_contour(c: &Component) -> Vec<Point> {
    let (mut x0, mut y0, mut x1, mut y1) = (i32::MAX, i32::MAX, i32::MIN, i32::MIN);
    for p in &c.pixels {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let bw = (x1 - x0 + 1) as usize;
    let bh = (y1 - y0 + 1) as usize;
    let mut local = vec![false; bw * bh];
    for p in &c.pixels {
        local[(p[1] - y0) as usize * bw + (p[0] - x0) as usize] = true;
    }
    let inside = |x: i32, y: i32| {
        let (lx, ly) = (x - x0, y - y0);
        lx >= 0 && ly >= 0 && (lx as usize) < bw && (ly as usize) < bh && local[ly as usize * bw + lx as usize]
    };
    trace_outer_contour(c.pixels[0], inside)
}

/// Shoelace area of the closed polygon.
pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0i64;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] as i64 * b[1] as i64 - b[0] as i64 * a[1] as i64;
    }
    (acc as f64).abs() / 2.0
}

/// Length of the closed polygon; axis steps count 1, diagonal steps √2.
pub fn polygon_perimeter(poly: &[Point]) -> f64 {
    if poly.len() < 2 {
        return 0.0;
    }
    (0..poly.len())
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            let (dx, dy) = ((b[0] - a[0]) as f64, (b[1] - a[1]) as f64);
            (dx * dx + dy * dy).sqrt()
        })
        .sum()
}

/// Circularity on a 0–100 scale: `100 · 4πA / P²`.
pub fn circularity(area: f64, perimeter: f64) -> f64 {
    if perimeter <= 0.0 {
        return 0.0;
    }
    100.0 * 4.0 * std::f64::consts::PI * area / (perimeter * perimeter)
}

/// Axis-aligned bounds `(x0, y0, x1, y1)`, inclusive.
pub fn bounds(poly: &[Point]) -> (i32, i32, i32, i32) {
    poly.iter().fold(
        (i32::MAX, i32::MAX, i32::MIN, i32::MIN),
        |(x0, y0, x1, y1), p| (x0.min(p[0]), y0.min(p[1]), x1.max(p[0]), y1.max(p[1])),
    )
}

/// Pixels covered by the filled polygon: every pixel centre strictly inside
/// (even–odd rule) plus every vertex. Sorted in raster order, no duplicates.
pub fn fill_polygon(poly: &[Point]) -> Vec<Point> {
    if poly.is_empty() {
        return Vec::new();
    }
    let (x0, y0, x1, y1) = bounds(poly);
    let bw = (x1 - x0 + 1) as usize;
    let bh = (y1 - y0 + 1) as usize;
    let mut grid = vec![false; bw * bh];
    for p in poly {
        grid[(p[1] - y0) as usize * bw + (p[0] - x0) as usize] = true;
    }
    let n = poly.len();
    let mut xs: Vec<f64> = Vec::new();
    for y in y0..=y1 {
        xs.clear();
        let yf = y as f64;
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            if (a[1] > y) != (b[1] > y) {
                let t = (yf - a[1] as f64) / (b[1] - a[1]) as f64;
                xs.push(a[0] as f64 + t * (b[0] - a[0]) as f64);
            }
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        for pair in xs.chunks_exact(2) {
            let lo = pair[0].ceil() as i32;
            let hi = pair[1].floor() as i32;
            for x in lo.max(x0)..=hi.min(x1) {
                grid[(y - y0) as usize * bw + (x - x0) as usize] = true;
            }
        }
    }
    let mut out = Vec::new();
    for (i, &v) in grid.iter().enumerate() {
        if v {
            out.push([x0 + (i % bw) as i32, y0 + (i / bw) as i32]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn mask_from(rows: &[&str]) -> BinaryMask {
        let h = rows.len() as u32;
        let w = rows[0].len() as u32;
        let bits = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        BinaryMask::from_bits(w, h, bits).unwrap()
    }

    #[test]
    fn labels_use_eight_connectivity() {
        let m = mask_from(&["#...", ".#..", "...#", "...#"]);
        let comps = components(&m);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].pixels, vec![[0, 0], [1, 1]]);
        assert_eq!(comps[1].len(), 2);
    }

    #[test]
    fn square_contour() {
        let m = mask_from(&[".....", ".###.", ".###.", ".###.", "....."]);
        let c = component_contour(&components(&m)[0]);
        assert_eq!(
            c,
            vec![[1, 1], [2, 1], [3, 1], [3, 2], [3, 3], [2, 3], [1, 3], [1, 2]]
        );
        assert_eq!(polygon_area(&c), 4.0);
        assert_eq!(polygon_perimeter(&c), 8.0);
    }

    #[test]
    fn degenerate_contours() {
        let single = mask_from(&["...", ".#.", "..."]);
        assert_eq!(component_contour(&components(&single)[0]), vec![[1, 1]]);
        let line = mask_from(&["###"]);
        let c = component_contour(&components(&line)[0]);
        assert_eq!(c, vec![[0, 0], [1, 0], [2, 0], [1, 0]]);
        assert_eq!(polygon_area(&c), 0.0);
    }

    #[test]
    fn contour_ignores_holes() {
        let m = mask_from(&["#####", "#...#", "#...#", "#####"]);
        let c = component_contour(&components(&m)[0]);
        assert_eq!(c.len(), 14);
        assert_eq!(polygon_area(&c), 12.0);
        assert_eq!(fill_polygon(&c).len(), 20);
    }

    #[test]
    fn diagonal_staircase() {
        let m = mask_from(&["#..", "##.", "###"]);
        let c = component_contour(&components(&m)[0]);
        assert_eq!(c, vec![[0, 0], [1, 1], [2, 2], [1, 2], [0, 2], [0, 1]]);
        let p = polygon_perimeter(&c);
        assert!((p - (4.0 + 2.0 * 2f64.sqrt())).abs() < 1e-12);
    }

    /// Background pixels not reachable (4-connectivity) from outside the
    /// bounding box.
    fn holes(pixels: &HashSet<Point>) -> HashSet<Point> {
        let (x0, y0, x1, y1) = bounds(&pixels.iter().copied().collect::<Vec<_>>());
        let mut seen = HashSet::new();
        let mut stack = Vec::new();
        for x in x0 - 1..=x1 + 1 {
            stack.push([x, y0 - 1]);
            stack.push([x, y1 + 1]);
        }
        for y in y0 - 1..=y1 + 1 {
            stack.push([x0 - 1, y]);
            stack.push([x1 + 1, y]);
        }
        while let Some(p) = stack.pop() {
            if p[0] < x0 - 1 || p[0] > x1 + 1 || p[1] < y0 - 1 || p[1] > y1 + 1 {
                continue;
            }
            if pixels.contains(&p) || !seen.insert(p) {
                continue;
            }
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                stack.push([p[0] + dx, p[1] + dy]);
            }
        }
        let mut out = HashSet::new();
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = [x, y];
                if !pixels.contains(&p) && !seen.contains(&p) {
                    out.insert(p);
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn filled_contour_is_component_plus_holes(bits in prop::collection::vec(any::<bool>(), 64)) {
            let m = BinaryMask::from_bits(8, 8, bits).unwrap();
            for comp in components(&m) {
                let contour = component_contour(&comp);
                let set: HashSet<Point> = comp.pixels.iter().copied().collect();
                // every contour vertex is a component pixel, and steps are 8-neighbour moves
                for (i, p) in contour.iter().enumerate() {
                    prop_assert!(set.contains(p));
                    let q = contour[(i + 1) % contour.len()];
                    prop_assert!((p[0] - q[0]).abs() <= 1 && (p[1] - q[1]).abs() <= 1);
                }
                let filled: HashSet<Point> = fill_polygon(&contour).into_iter().collect();
                let mut expected = set.clone();
                expected.extend(holes(&set));
                prop_assert_eq!(filled, expected);
            }
        }
    }
}
