//! Static 3D k-d tree over splat means: nearest neighbour and radius queries.

use crate::math::Vec3;
use crate::Scalar;

/// Balanced k-d tree stored implicitly: the median of every index range is
/// the node, halves are its subtrees.
#[derive(Clone, Debug)]
pub struct KdTree<T> {
    points: Vec<Vec3<T>>,
    order: Vec<usize>,
    axes: Vec<u8>,
}

fn coord<T: Scalar>(p: &Vec3<T>, axis: u8) -> T {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

impl<T: Scalar> KdTree<T> {
    pub fn build(points: &[Vec3<T>]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            axes: vec![0; points.len()],
        };
        tree.split(0, points.len());
        tree
    }

    fn split(&mut self, lo: usize, hi: usize) {
        if hi - lo <= 1 {
            return;
        }
        let (mut min, mut max) = (self.points[self.order[lo]], self.points[self.order[lo]]);
        for &i in &self.order[lo..hi] {
            min = min.component_min(self.points[i]);
            max = max.component_max(self.points[i]);
        }
        let ext = max - min;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (lo + hi) / 2;
        let pts = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            coord(&pts[a], axis)
                .partial_cmp(&coord(&pts[b], axis))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        self.axes[mid] = axis;
        self.split(lo, mid);
        self.split(mid + 1, hi);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Closest point to `q` (squared distance), skipping index `exclude`.
    /// Ties resolve to the lower index.
    pub fn nearest(&self, q: Vec3<T>, exclude: Option<usize>) -> Option<(usize, T)> {
        let mut best: Option<(usize, T)> = None;
        self.nearest_in(0, self.points.len(), q, exclude, &mut best);
        best
    }

    fn nearest_in(&self, lo: usize, hi: usize, q: Vec3<T>, exclude: Option<usize>, best: &mut Option<(usize, T)>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        if Some(idx) != exclude {
            let d = (p - q).dot(p - q);
            let better = match *best {
                None => true,
                Some((bi, bd)) => d < bd || (d == bd && idx < bi),
            };
            if better {
                *best = Some((idx, d));
            }
        }
        let axis = self.axes[mid];
        let diff = coord(&q, axis) - coord(&p, axis);
        let (first, second) = if diff < T::zero() { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.nearest_in(first.0, first.1, q, exclude, best);
        if best.map_or(true, |(_, bd)| diff * diff <= bd) {
            self.nearest_in(second.0, second.1, q, exclude, best);
        }
    }

    /// Indices of all points within distance `r` of `q` (inclusive), sorted.
    pub fn within_radius(&self, q: Vec3<T>, r: T) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_in(0, self.points.len(), q, r * r, &mut out);
        out.sort_unstable();
        out
    }

    fn radius_in(&self, lo: usize, hi: usize, q: Vec3<T>, r2: T, out: &mut Vec<usize>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        if (p - q).dot(p - q) <= r2 {
            out.push(idx);
        }
        let diff = coord(&q, self.axes[mid]) - coord(&p, self.axes[mid]);
        if diff <= T::zero() || diff * diff <= r2 {
            self.radius_in(lo, mid, q, r2, out);
        }
        if diff >= T::zero() || diff * diff <= r2 {
            self.radius_in(mid + 1, hi, q, r2, out);
        }
    }
}

/// Median over points of the distance to their nearest other point; `None`
/// with fewer than two points.
pub fn median_nn_distance<T: Scalar>(points: &[Vec3<T>]) -> Option<T> {
    if points.len() < 2 {
        return None;
    }
    let tree = KdTree::build(points);
    let mut d: Vec<T> = points
        .iter()
        .enumerate()
        .map(|(i, &p)| tree.nearest(p, Some(i)).map(|(_, d2)| d2.sqrt()).unwrap_or(T::zero()))
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = d.len();
    Some(if n % 2 == 1 { d[n / 2] } else { (d[n / 2 - 1] + d[n / 2]) * T::lit(0.5) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(p: (f64, f64, f64)) -> Vec3<f64> {
        Vec3::new(p.0, p.1, p.2)
    }

    #[test]
    fn empty_and_single() {
        let t = KdTree::<f64>::build(&[]);
        assert!(t.nearest(Vec3::new(0.0, 0.0, 0.0), None).is_none());
        let t = KdTree::build(&[Vec3::new(1.0, 2.0, 3.0)]);
        assert_eq!(t.nearest(Vec3::new(0.0, 0.0, 0.0), None).unwrap().0, 0);
        assert!(t.nearest(Vec3::new(0.0, 0.0, 0.0), Some(0)).is_none());
    }

    #[test]
    fn median_of_grid() {
        let pts: Vec<_> = (0..5).map(|i| Vec3::new(i as f64 * 0.5, 0.0, 0.0)).collect();
        assert!((median_nn_distance(&pts).unwrap() - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), 1..60),
            q in (-6.0..6.0f64, -6.0..6.0f64, -6.0..6.0f64),
            r in 0.0..4.0f64,
        ) {
            let pts: Vec<_> = pts.into_iter().map(v).collect();
            let q = v(q);
            let tree = KdTree::build(&pts);
            let d2: Vec<f64> = pts.iter().map(|p| (*p - q).dot(*p - q)).collect();
            let best = d2.iter().cloned().fold(f64::INFINITY, f64::min);
            let (i, d) = tree.nearest(q, None).unwrap();
            prop_assert_eq!(d, best);
            prop_assert_eq!(i, d2.iter().position(|&x| x == best).unwrap());
            let brute: Vec<usize> = (0..pts.len()).filter(|&i| d2[i] <= r * r).collect();
            prop_assert_eq!(tree.within_radius(q, r), brute);
        }
    }
}
