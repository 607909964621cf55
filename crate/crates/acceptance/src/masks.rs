//! Binary-mask topology by brute force: box dilation, 8-connected
//! components and holes found by flooding unset pixels from the border.

use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub set: Vec<bool>,
}

const N8: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
const N4: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];

impl Grid {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            set: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let set = (0..width * height).map(|p| f(p % width, p / width)).collect();
        Self { width, height, set }
    }

    pub fn count(&self) -> usize {
        self.set.iter().filter(|&&s| s).count()
    }

    fn neighbours<'a>(&'a self, p: usize, offsets: &'a [(isize, isize)]) -> impl Iterator<Item = usize> + 'a {
        let (x, y) = ((p % self.width) as isize, (p / self.width) as isize);
        offsets.iter().filter_map(move |&(dx, dy)| {
            let (nx, ny) = (x + dx, y + dy);
            (nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height).then(|| ny as usize * self.width + nx as usize)
        })
    }

    /// Every pixel within Chebyshev distance `r` of a set pixel.
    pub fn dilate(&self, r: usize) -> Self {
        let r = r as isize;
        Self::from_fn(self.width, self.height, |x, y| {
            (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height && self.set[ny as usize * self.width + nx as usize]
                })
            })
        })
    }

    /// Pixel sets of the 8-connected components.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.set.len()];
        let mut out = Vec::new();
        for s in 0..self.set.len() {
            if !self.set[s] || seen[s] {
                continue;
            }
            seen[s] = true;
            let mut comp = vec![s];
            let mut q = VecDeque::from([s]);
            while let Some(p) = q.pop_front() {
                for n in self.neighbours(p, &N8) {
                    if self.set[n] && !seen[n] {
                        seen[n] = true;
                        comp.push(n);
                        q.push_back(n);
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Unset pixels reachable from the border through 4-connected unset
    /// pixels.
    fn outside(&self) -> Vec<bool> {
        let (w, h) = (self.width, self.height);
        let mut out = vec![false; self.set.len()];
        let mut q: VecDeque<usize> = (0..w * h).filter(|&p| (p % w == 0 || p % w == w - 1 || p / w == 0 || p / w == h - 1) && !self.set[p]).collect();
        for &p in &q {
            out[p] = true;
        }
        while let Some(p) = q.pop_front() {
            for n in self.neighbours(p, &N4) {
                if !self.set[n] && !out[n] {
                    out[n] = true;
                    q.push_back(n);
                }
            }
        }
        out
    }

    /// Unset pixels the border flood cannot reach.
    pub fn hole_count(&self) -> usize {
        let out = self.outside();
        (0..self.set.len()).filter(|&p| !self.set[p] && !out[p]).count()
    }

    pub fn filled(&self) -> Self {
        let out = self.outside();
        Self {
            width: self.width,
            height: self.height,
            set: out.iter().map(|&o| !o).collect(),
        }
    }

    pub fn only(&self, pixels: &[usize]) -> Self {
        let mut g = Self::new(self.width, self.height);
        for &p in pixels {
            g.set[p] = true;
        }
        g
    }
}

/// Filled regions of the dilated mask's components, each with its area.
pub fn filled_blobs(mask: &Grid, dilation: usize) -> Vec<(Grid, usize)> {
    let d = mask.dilate(dilation);
    d.components()
        .iter()
        .map(|c| {
            let f = d.only(c).filled();
            let area = f.count();
            (f, area)
        })
        .collect()
}
