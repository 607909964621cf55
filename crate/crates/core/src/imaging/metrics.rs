use serde::{Deserialize, Serialize};

use super::{Image2D, Mask2D};
use crate::{Error, Result, Scalar};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub accuracy: f64,
    pub iou: f64,
}

/// Pixel accuracy and intersection-over-union (1.0 when both are empty).
pub fn mask_metrics(pred: &Mask2D, gt: &Mask2D) -> Result<MaskMetrics> {
    pred.same_shape(gt)?;
    let (mut agree, mut inter, mut union) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let (p, g) = (p != 0, g != 0);
        agree += (p == g) as usize;
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    let total = pred.data.len().max(1);
    Ok(MaskMetrics {
        accuracy: agree as f64 / total as f64,
        iou: if union == 0 { 1.0 } else { inter as f64 / union as f64 },
    })
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// Peak signal-to-noise ratio on the [0, 1] range over all pixels.
pub fn psnr<T: Scalar>(a: &Image2D<T>, b: &Image2D<T>) -> Result<f64> {
    b.check_size(a.width, a.height, "psnr operands")?;
    let mut acc = 0.0;
    for (p, q) in a.data.iter().zip(&b.data) {
        for c in 0..3 {
            let d = (p[c] - q[c]).to_f64_lossy();
            acc += d * d;
        }
    }
    Ok(psnr_from_mse(acc / (3 * a.data.len().max(1)) as f64))
}

/// PSNR restricted to the pixels set in `mask`.
pub fn psnr_masked<T: Scalar>(a: &Image2D<T>, b: &Image2D<T>, mask: &Mask2D) -> Result<f64> {
    b.check_size(a.width, a.height, "psnr operands")?;
    if mask.width != a.width || mask.height != a.height {
        return Err(Error::Shape("psnr mask".into()));
    }
    let (mut acc, mut n) = (0.0, 0usize);
    for ((p, q), &m) in a.data.iter().zip(&b.data).zip(&mask.data) {
        if m == 0 {
            continue;
        }
        n += 1;
        for c in 0..3 {
            let d = (p[c] - q[c]).to_f64_lossy();
            acc += d * d;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(psnr_from_mse(acc / (3 * n) as f64))
}
