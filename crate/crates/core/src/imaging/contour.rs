//! Connected components, Moore-neighbour outer contours and the
//! dilate → largest contour → fill refinement used for inpainting masks.

use std::collections::VecDeque;

use super::{dilate, Mask2D};
use crate::{Error, Result};

/// Clockwise 8-neighbourhood in image coordinates (y down), starting west.
const DIRS: [(isize, isize); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

/// Outer boundary of one 8-connected component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contour {
    /// Boundary pixels in tracing order, starting at the component's first
    /// pixel in raster order.
    pub points: Vec<(usize, usize)>,
    /// Component label (1-based) in [`label_components`] numbering.
    pub label: u32,
    /// Pixels enclosed by the contour, holes included.
    pub area: usize,
}

/// Labels connected components of set pixels (1-based, 0 = background).
pub fn label_components(mask: &Mask2D, eight_connected: bool) -> (Vec<u32>, u32) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if mask.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            for (i, &(dx, dy)) in DIRS.iter().enumerate() {
                if !eight_connected && i % 2 == 1 {
                    continue;
                }
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if mask.data[q] != 0 && labels[q] == 0 {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
    }
    (labels, next)
}

/// Region enclosed by the outer boundary of `region`: every pixel not
/// 4-reachable from outside the image through pixels outside `region`.
pub fn fill_holes(region: &Mask2D) -> Mask2D {
    let (w, h) = (region.width, region.height);
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |x: usize, y: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        let p = y * w + x;
        if region.data[p] == 0 && !outside[p] {
            outside[p] = true;
            queue.push_back(p);
        }
    };
    for x in 0..w {
        seed(x, 0, &mut outside, &mut queue);
        seed(x, h - 1, &mut outside, &mut queue);
    }
    for y in 0..h {
        seed(0, y, &mut outside, &mut queue);
        seed(w - 1, y, &mut outside, &mut queue);
    }
    while let Some(p) = queue.pop_front() {
        let (x, y) = (p % w, p / w);
        let mut visit = |q: usize| {
            if region.data[q] == 0 && !outside[q] {
                outside[q] = true;
                queue.push_back(q);
            }
        };
        if x > 0 {
            visit(p - 1);
        }
        if x + 1 < w {
            visit(p + 1);
        }
        if y > 0 {
            visit(p - w);
        }
        if y + 1 < h {
            visit(p + w);
        }
    }
    Mask2D {
        width: w,
        height: h,
        data: outside.iter().map(|&o| (!o) as u8).collect(),
    }
}

fn trace_outer(labels: &[u32], w: usize, h: usize, label: u32, start: usize) -> Vec<(usize, usize)> {
    let inside = |x: isize, y: isize| x >= 0 && y >= 0 && x < w as isize && y < h as isize && labels[y as usize * w + x as usize] == label;
    let s = ((start % w) as isize, (start / w) as isize);
    let mut points = vec![(s.0 as usize, s.1 as usize)];
    // the raster-first pixel always has an unset western neighbour
    let mut cur = s;
    let mut back = 0usize;
    let first_back = back;
    let mut steps = 0usize;
    loop {
        let mut moved = false;
        for i in 1..=8 {
            let k = (back + i) % 8;
            let (nx, ny) = (cur.0 + DIRS[k].0, cur.1 + DIRS[k].1);
            if inside(nx, ny) {
                let prev_dir = DIRS[(k + 7) % 8];
                let prev = (cur.0 + prev_dir.0, cur.1 + prev_dir.1);
                let rel = (prev.0 - nx, prev.1 - ny);
                back = DIRS.iter().position(|&d| d == rel).expect("neighbouring offset");
                cur = (nx, ny);
                moved = true;
                break;
            }
        }
        if !moved {
            break;
        }
        steps += 1;
        if cur == s && back == first_back {
            break;
        }
        if cur == s && steps > 1 {
            // re-entered the start from another side; keep walking until
            // the entry direction repeats
            if steps > 4 * w * h {
                break;
            }
            continue;
        }
        points.push((cur.0 as usize, cur.1 as usize));
        if steps > 4 * w * h {
            break;
        }
    }
    points
}

/// Outer contours of all 8-connected components, in raster order of their
/// first pixel.
pub fn find_contours(mask: &Mask2D) -> Vec<Contour> {
    let (labels, n) = label_components(mask, true);
    let (w, h) = (mask.width, mask.height);
    let mut firsts = vec![usize::MAX; n as usize];
    for (p, &l) in labels.iter().enumerate() {
        if l != 0 && firsts[l as usize - 1] == usize::MAX {
            firsts[l as usize - 1] = p;
        }
    }
    firsts
        .iter()
        .enumerate()
        .map(|(i, &start)| {
            let label = i as u32 + 1;
            let region = Mask2D {
                width: w,
                height: h,
                data: labels.iter().map(|&l| (l == label) as u8).collect(),
            };
            Contour {
                points: trace_outer(&labels, w, h, label, start),
                label,
                area: fill_holes(&region).count(),
            }
        })
        .collect()
}

/// Dilates with a 3×3 square three times, keeps the contour enclosing the
/// most pixels and returns its filled interior.
pub fn refine_mask(mask: &Mask2D) -> Result<Mask2D> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let dilated = dilate(mask, 3, 3)?;
    let (labels, _) = label_components(&dilated, true);
    let contours = find_contours(&dilated);
    let best = contours
        .iter()
        .fold(None::<&Contour>, |best, c| match best {
            Some(b) if b.area >= c.area => Some(b),
            _ => Some(c),
        })
        .ok_or(Error::EmptyMask)?;
    let region = Mask2D {
        width: mask.width,
        height: mask.height,
        data: labels.iter().map(|&l| (l == best.label) as u8).collect(),
    };
    Ok(fill_holes(&region))
}
