use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::imaging::SoftMask;
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPoint {
    pub x: usize,
    pub y: usize,
    #[serde(default = "positive")]
    pub positive: bool,
}

fn positive() -> bool {
    true
}

impl PromptPoint {
    pub fn positive(x: usize, y: usize) -> Self {
        Self { x, y, positive: true }
    }

    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        if self.x >= width || self.y >= height {
            return Err(Error::InvalidParameter(format!(
                "prompt ({}, {}) outside {width}×{height} image",
                self.x, self.y
            )));
        }
        Ok(())
    }
}

/// Chessboard distance of every pixel to the nearest pixel with value
/// below `low` (or to the image border).
fn inner_distance<T: Scalar>(mask: &SoftMask<T>, low: T) -> Vec<u32> {
    let (w, h) = (mask.width, mask.height);
    let mut dist = vec![u32::MAX; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mask.data[i] < low {
                dist[i] = 0;
                queue.push_back(i);
            } else if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                dist[i] = 1;
                queue.push_back(i);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if dist[j] > dist[i] + 1 {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
    }
    dist
}

/// Up to `k` positive prompts at local maxima of a rendered mask.
///
/// Candidates are 8-neighbourhood local maxima with value ≥ 0.8·max. They
/// are taken greedily by value (compared at 1e-3 resolution, so saturated
/// plateaus tie), then by distance from the mask edge, keeping a pairwise
/// separation of 5% of the image diagonal. A mask whose maximum is below
/// `min_peak` yields no prompts.
pub fn extract_prompts<T: Scalar>(mask: &SoftMask<T>, k: usize, min_peak: T) -> Vec<PromptPoint> {
    let (w, h) = (mask.width, mask.height);
    let peak = mask.max();
    if k == 0 || w == 0 || h == 0 || peak < min_peak || !(peak > T::zero()) {
        return Vec::new();
    }
    let floor = T::lit(0.8) * peak;
    let at = |x: isize, y: isize| -> Option<T> {
        (x >= 0 && y >= 0 && x < w as isize && y < h as isize).then(|| mask.data[y as usize * w + x as usize])
    };
    let dist = inner_distance(mask, T::lit(0.5) * peak);
    let mut cands: Vec<(i64, u32, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = mask.data[y * w + x];
            if v < floor {
                continue;
            }
            let is_max = (-1..=1isize).all(|dy| {
                (-1..=1isize).all(|dx| at(x as isize + dx, y as isize + dy).map_or(true, |n| n <= v))
            });
            if is_max {
                let q = (v / peak * T::lit(1000.0)).round().to_i64().unwrap_or(0);
                cands.push((q, dist[y * w + x], y * w + x));
            }
        }
    }
    cands.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    let min_sep = 0.05 * ((w * w + h * h) as f64).sqrt();
    let mut out: Vec<PromptPoint> = Vec::new();
    for (_, _, i) in cands {
        let (x, y) = (i % w, i / w);
        let far = out.iter().all(|p| {
            let (dx, dy) = (p.x as f64 - x as f64, p.y as f64 - y as f64);
            (dx * dx + dy * dy).sqrt() >= min_sep
        });
        if far {
            out.push(PromptPoint::positive(x, y));
            if out.len() == k {
                break;
            }
        }
    }
    out
}
