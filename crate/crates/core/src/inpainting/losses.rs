use serde::{Deserialize, Serialize};

use crate::imaging::{mask_bbox, ssim, ssim_with_grad, DepthMap, Image2D, Mask2D};
use crate::{Error, Result, Scalar};

/// How the SSIM summand enters the outside-mask colour loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimTerm {
    /// `1 − SSIM`, zero for identical images.
    Dissimilarity,
    /// Raw SSIM, as literally written in the loss.
    Similarity,
}

/// Differentiable image distance used for the in-mask term.
pub trait PerceptualMetric<T: Scalar>: Send + Sync {
    fn distance(&self, a: &Image2D<T>, b: &Image2D<T>) -> Result<T> {
        Ok(self.distance_with_grad(a, b)?.0)
    }

    /// Distance and its gradient w.r.t. every pixel of `b`.
    fn distance_with_grad(&self, a: &Image2D<T>, b: &Image2D<T>) -> Result<(T, Vec<[T; 3]>)>;
}

/// Multi-scale SSIM distance: mean of `1 − SSIM` over a pyramid of 2×
/// average-pooled levels. A stand-in for a learned perceptual metric, not
/// an approximation of one.
#[derive(Clone, Debug, PartialEq)]
pub struct MsSsimProxy {
    pub levels: usize,
}

impl Default for MsSsimProxy {
    fn default() -> Self {
        Self { levels: 3 }
    }
}

fn pool2<T: Scalar>(img: &Image2D<T>) -> Image2D<T> {
    let (w, h) = (img.width / 2, img.height / 2);
    let q = T::lit(0.25);
    let data = (0..w * h)
        .map(|i| {
            let (x, y) = (2 * (i % w), 2 * (i / w));
            std::array::from_fn(|c| {
                (img.get(x, y)[c] + img.get(x + 1, y)[c] + img.get(x, y + 1)[c] + img.get(x + 1, y + 1)[c]) * q
            })
        })
        .collect();
    Image2D { width: w, height: h, data }
}

impl<T: Scalar> PerceptualMetric<T> for MsSsimProxy {
    fn distance_with_grad(&self, a: &Image2D<T>, b: &Image2D<T>) -> Result<(T, Vec<[T; 3]>)> {
        b.check_size(a.width, a.height, "perceptual operands")?;
        if a.data.is_empty() {
            return Err(Error::Shape("perceptual distance of an empty image".into()));
        }
        let mut pyr = vec![(a.clone(), b.clone())];
        while pyr.len() < self.levels.max(1) {
            let (pa, pb) = pyr.last().unwrap();
            if pa.width < 2 || pa.height < 2 {
                break;
            }
            let next = (pool2(pa), pool2(pb));
            pyr.push(next);
        }
        let wl = T::one() / T::from_usize_lossy(pyr.len());
        let mut total = T::zero();
        let mut up: Vec<[T; 3]> = Vec::new();
        // coarse to fine, pushing each level's gradient down through the pooling
        for (la, lb) in pyr.iter().rev() {
            let (s, g) = ssim_with_grad(lb, la)?;
            total += wl * (T::one() - s);
            let mut grad: Vec<[T; 3]> = g.iter().map(|p| p.map(|v| -wl * v)).collect();
            if !up.is_empty() {
                let cw = la.width / 2;
                for (i, gp) in up.iter().enumerate() {
                    let (x, y) = (2 * (i % cw), 2 * (i / cw));
                    for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        let q = &mut grad[(y + dy) * la.width + x + dx];
                        for c in 0..3 {
                            q[c] += gp[c] * T::lit(0.25);
                        }
                    }
                }
            }
            up = grad;
        }
        Ok((total.max(T::zero()), up))
    }
}

/// Outside-mask colour term and its gradient w.r.t. `rendered`:
/// `(1 − λ)·L1 + λ·S`, with L1 averaged over unmasked pixel channels and
/// `S` computed on both images with masked pixels zeroed.
pub fn outside_mask_color_loss<T: Scalar>(
    target: &Image2D<T>,
    mask: &Mask2D,
    rendered: &Image2D<T>,
    lambda_ssim: T,
    term: SsimTerm,
) -> Result<(T, Vec<[T; 3]>)> {
    rendered.check_size(target.width, target.height, "outside-mask loss")?;
    if mask.width != target.width || mask.height != target.height {
        return Err(Error::Shape("outside-mask loss: mask size".into()));
    }
    let free = mask.data.len() - mask.count();
    if free == 0 {
        return Err(Error::DegenerateLoss("mask covers every pixel".into()));
    }
    let n = T::from_usize_lossy(3 * free);
    let w1 = T::one() - lambda_ssim;
    let mut l1 = T::zero();
    let mut grad = vec![[T::zero(); 3]; target.data.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        if mask.data[i] != 0 {
            continue;
        }
        for c in 0..3 {
            let d = rendered.data[i][c] - target.data[i][c];
            l1 += d.abs();
            g[c] = w1 * d.signum_or_zero() / n;
        }
    }
    let mut loss = w1 * l1 / n;
    if lambda_ssim != T::zero() {
        let (s, sg) = ssim_with_grad(&rendered.zero_masked(mask), &target.zero_masked(mask))?;
        let sign = match term {
            SsimTerm::Dissimilarity => {
                loss += lambda_ssim * (T::one() - s);
                -lambda_ssim
            }
            SsimTerm::Similarity => {
                loss += lambda_ssim * s;
                lambda_ssim
            }
        };
        for (i, g) in grad.iter_mut().enumerate() {
            if mask.data[i] == 0 {
                for c in 0..3 {
                    g[c] += sign * sg[i][c];
                }
            }
        }
    }
    Ok((loss, grad))
}

/// `λ · mean |D_i − D_r|` over pixels valid in `target`, and its gradient
/// w.r.t. the rendered depth.
pub fn depth_loss<T: Scalar>(target: &DepthMap<T>, rendered: &DepthMap<T>, lambda: T) -> Result<(T, Vec<T>)> {
    if rendered.width != target.width || rendered.height != target.height {
        return Err(Error::Shape("depth loss: raster size".into()));
    }
    let n = target.valid_count();
    if n == 0 {
        return Err(Error::DegenerateLoss("no valid depth pixels".into()));
    }
    let nt = T::from_usize_lossy(n);
    let mut sum = T::zero();
    let mut grad = vec![T::zero(); target.data.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        if target.valid[i] {
            let d = rendered.data[i] - target.data[i];
            sum += d.abs();
            *g = lambda * d.signum_or_zero() / nt;
        }
    }
    Ok((lambda * sum / nt, grad))
}

/// `λ · metric(Box(I_i), Box(I_r))` over the bounding box of the mask, with
/// the gradient scattered back to full resolution.
pub fn inside_mask_color_loss<T: Scalar>(
    target: &Image2D<T>,
    mask: &Mask2D,
    rendered: &Image2D<T>,
    metric: &dyn PerceptualMetric<T>,
    lambda: T,
) -> Result<(T, Vec<[T; 3]>)> {
    rendered.check_size(target.width, target.height, "inside-mask loss")?;
    let r = mask_bbox(mask)?;
    let mut grad = vec![[T::zero(); 3]; target.data.len()];
    if lambda == T::zero() {
        return Ok((T::zero(), grad));
    }
    let (d, g) = metric.distance_with_grad(&target.crop(r), &rendered.crop(r))?;
    let bw = r.width();
    for (k, gp) in g.iter().enumerate() {
        let (x, y) = (r.x0 + k % bw, r.y0 + k / bw);
        grad[y * target.width + x] = gp.map(|v| lambda * v);
    }
    Ok((lambda * d, grad))
}

/// Value-only SSIM summand, for reporting.
pub fn masked_ssim<T: Scalar>(a: &Image2D<T>, b: &Image2D<T>, mask: &Mask2D) -> Result<T> {
    ssim(&a.zero_masked(mask), &b.zero_masked(mask))
}

trait SignumOrZero {
    fn signum_or_zero(self) -> Self;
}

impl<T: Scalar> SignumOrZero for T {
    fn signum_or_zero(self) -> T {
        if self > T::zero() {
            T::one()
        } else if self < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    }
}
