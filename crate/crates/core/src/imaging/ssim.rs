//! Structural similarity with an 11×11 Gaussian window (σ = 1.5), zero
//! padding, averaged over pixels and channels, plus its gradient w.r.t. the
//! first image.

use super::Image2D;
use crate::{Result, Scalar};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;

fn kernel<T: Scalar>() -> [T; 2 * RADIUS + 1] {
    let mut k = [0.0f64; 2 * RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| T::lit(v / s))
}

/// Separable "same" convolution with zero padding. The kernel is symmetric,
/// so this operator is its own adjoint.
fn blur<T: Scalar>(src: &[T], w: usize, h: usize) -> Vec<T> {
    let k = kernel::<T>();
    let mut tmp = vec![T::zero(); w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(RADIUS);
            let hi = (x + RADIUS).min(w - 1);
            let mut acc = T::zero();
            for (xx, &v) in row.iter().enumerate().take(hi + 1).skip(lo) {
                acc += k[xx + RADIUS - x] * v;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        let lo = y.saturating_sub(RADIUS);
        let hi = (y + RADIUS).min(h - 1);
        for yy in lo..=hi {
            let kv = k[yy + RADIUS - y];
            let (dst, s) = (&mut out[y * w..(y + 1) * w], &tmp[yy * w..(yy + 1) * w]);
            for (d, &v) in dst.iter_mut().zip(s) {
                *d += kv * v;
            }
        }
    }
    out
}

fn planes<T: Scalar>(img: &Image2D<T>) -> [Vec<T>; 3] {
    std::array::from_fn(|c| img.data.iter().map(|p| p[c]).collect())
}

struct Stats<T> {
    mean: T,
    dm1: Vec<T>,
    de11: Vec<T>,
    de12: Vec<T>,
}

fn channel<T: Scalar>(a: &[T], b: &[T], w: usize, h: usize, want_grad: bool) -> Stats<T> {
    let (c1, c2) = (T::lit(SSIM_C1), T::lit(SSIM_C2));
    let two = T::lit(2.0);
    let sq = |v: &[T]| v.iter().map(|&x| x * x).collect::<Vec<_>>();
    let m1 = blur(a, w, h);
    let m2 = blur(b, w, h);
    let e11 = blur(&sq(a), w, h);
    let e22 = blur(&sq(b), w, h);
    let ab: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x * y).collect();
    let e12 = blur(&ab, w, h);
    let n = w * h;
    let mut sum = T::zero();
    let (mut dm1, mut de11, mut de12) = if want_grad {
        (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..n {
        let (u1, u2) = (m1[p], m2[p]);
        let s11 = e11[p] - u1 * u1;
        let s22 = e22[p] - u2 * u2;
        let s12 = e12[p] - u1 * u2;
        let a1 = two * u1 * u2 + c1;
        let a2 = two * s12 + c2;
        let b1 = u1 * u1 + u2 * u2 + c1;
        let b2 = s11 + s22 + c2;
        let den = b1 * b2;
        let s = a1 * a2 / den;
        sum += s;
        if want_grad {
            dm1[p] = two * u2 * (a2 - a1) / den - s * two * u1 / b1 + s * two * u1 / b2;
            de11[p] = -s / b2;
            de12[p] = two * a1 / den;
        }
    }
    Stats {
        mean: sum / T::from_usize_lossy(n),
        dm1,
        de11,
        de12,
    }
}

fn check<T: Scalar>(a: &Image2D<T>, b: &Image2D<T>) -> Result<()> {
    b.check_size(a.width, a.height, "ssim operands")
}

/// Mean SSIM over pixels and RGB channels.
pub fn ssim<T: Scalar>(a: &Image2D<T>, b: &Image2D<T>) -> Result<T> {
    check(a, b)?;
    let (pa, pb) = (planes(a), planes(b));
    let total: T = (0..3).map(|c| channel(&pa[c], &pb[c], a.width, a.height, false).mean).sum();
    Ok(total / T::lit(3.0))
}

/// SSIM and its gradient with respect to every pixel of `a`.
pub fn ssim_with_grad<T: Scalar>(a: &Image2D<T>, b: &Image2D<T>) -> Result<(T, Vec<[T; 3]>)> {
    check(a, b)?;
    let (w, h) = (a.width, a.height);
    let (pa, pb) = (planes(a), planes(b));
    let norm = T::one() / T::from_usize_lossy(3 * w * h);
    let mut grad = vec![[T::zero(); 3]; w * h];
    let mut total = T::zero();
    for c in 0..3 {
        let st = channel(&pa[c], &pb[c], w, h, true);
        total += st.mean;
        let gm1 = blur(&st.dm1, w, h);
        let ge11 = blur(&st.de11, w, h);
        let ge12 = blur(&st.de12, w, h);
        for p in 0..w * h {
            grad[p][c] = norm * (gm1[p] + T::lit(2.0) * pa[c][p] * ge11[p] + pb[c][p] * ge12[p]);
        }
    }
    Ok((total / T::lit(3.0), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, seed: u64) -> Image2D<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image2D::new(w, h, (0..w * h).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).unwrap()
    }

    // direct 2D windowed sums, no separability
    fn naive(a: &Image2D<f64>, b: &Image2D<f64>) -> f64 {
        let (w, h) = (a.width as isize, a.height as isize);
        let mut g = [[0.0; 11]; 11];
        let mut s = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / 4.5).exp();
                s += *v;
            }
        }
        let mut total = 0.0;
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let (mut m1, mut m2, mut e11, mut e22, mut e12) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in -5..=5isize {
                        for j in -5..=5isize {
                            let (xx, yy) = (x + j, y + i);
                            if xx < 0 || yy < 0 || xx >= w || yy >= h {
                                continue;
                            }
                            let wt = g[(i + 5) as usize][(j + 5) as usize] / s;
                            let u = a.get(xx as usize, yy as usize)[c];
                            let v = b.get(xx as usize, yy as usize)[c];
                            m1 += wt * u;
                            m2 += wt * v;
                            e11 += wt * u * u;
                            e22 += wt * v * v;
                            e12 += wt * u * v;
                        }
                    }
                    let num = (2.0 * m1 * m2 + SSIM_C1) * (2.0 * (e12 - m1 * m2) + SSIM_C2);
                    let den = (m1 * m1 + m2 * m2 + SSIM_C1) * (e11 - m1 * m1 + e22 - m2 * m2 + SSIM_C2);
                    total += num / den;
                }
            }
        }
        total / (3 * w * h) as f64
    }

    #[test]
    fn identical_is_one() {
        let a = random(20, 14, 1);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_black_vs_white_is_small() {
        let a = Image2D::filled(24, 24, [0.0f64; 3]);
        let b = Image2D::filled(24, 24, [1.0f64; 3]);
        let s = ssim(&a, &b).unwrap();
        assert!(s >= 0.0 && s < 0.01, "{s}");
    }

    #[test]
    fn symmetric() {
        let (a, b) = (random(17, 13, 2), random(17, 13, 3));
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn matches_direct_window_sum() {
        let (a, b) = (random(16, 19, 4), random(16, 19, 5));
        assert!((ssim(&a, &b).unwrap() - naive(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (a, b) = (random(13, 12, 6), random(13, 12, 7));
        let (_, g) = ssim_with_grad(&a, &b).unwrap();
        let eps = 1e-6;
        for &(p, c) in &[(0usize, 0usize), (5, 1), (77, 2), (155, 0), (60, 1)] {
            let mut hi = a.clone();
            hi.data[p][c] += eps;
            let mut lo = a.clone();
            lo.data[p][c] -= eps;
            let fd = (ssim(&hi, &b).unwrap() - ssim(&lo, &b).unwrap()) / (2.0 * eps);
            assert!((fd - g[p][c]).abs() < 1e-7 + 1e-4 * fd.abs(), "{p} {c}: {fd} vs {}", g[p][c]);
        }
    }

    #[test]
    fn shape_mismatch() {
        assert!(ssim(&random(4, 4, 0), &random(4, 5, 0)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn bounded(seed in 0u64..500) {
            let s = ssim(&random(9, 9, seed), &random(9, 9, seed + 1000)).unwrap();
            proptest::prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
