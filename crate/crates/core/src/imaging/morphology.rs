use super::Mask2D;
use crate::{Error, Result};

/// Dilation by a `kernel_size`×`kernel_size` square, repeated `iterations`
/// times. Pixels outside the image count as unset.
pub fn dilate(mask: &Mask2D, kernel_size: usize, iterations: usize) -> Result<Mask2D> {
    if kernel_size == 0 || kernel_size % 2 == 0 {
        return Err(Error::InvalidParameter(format!("kernel size must be odd and ≥ 1, got {kernel_size}")));
    }
    let r = kernel_size / 2;
    let (w, h) = (mask.width, mask.height);
    let mut cur = mask.clone();
    if r == 0 {
        return Ok(cur);
    }
    let mut tmp = Mask2D::new(w, h);
    for _ in 0..iterations {
        // separable: horizontal then vertical max
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(r);
                let hi = (x + r).min(w - 1);
                tmp.data[y * w + x] = cur.data[y * w + lo..=y * w + hi].iter().copied().max().unwrap_or(0);
            }
        }
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            for x in 0..w {
                cur.data[y * w + x] = (lo..=hi).map(|yy| tmp.data[yy * w + x]).max().unwrap_or(0);
            }
        }
    }
    Ok(cur)
}
