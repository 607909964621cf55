use crate::imaging::{DepthMap, Image2D, Mask2D};
use crate::{Error, Result, Scalar};

/// 2D inpainting backend. Pixels outside the mask must come back unchanged.
pub trait Inpainter2D<T: Scalar>: Send + Sync {
    fn inpaint_rgb(&self, image: &Image2D<T>, mask: &Mask2D) -> Result<Image2D<T>>;
    fn inpaint_depth(&self, depth: &DepthMap<T>, mask: &Mask2D) -> Result<DepthMap<T>>;
}

/// Harmonic fill: masked pixels are seeded by onion-peeling from the mask
/// boundary, then relaxed with Gauss-Seidel sweeps of the 4-neighbour mean
/// until the largest update drops below `tolerance` or `max_sweeps` is hit.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionInpainter {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for DiffusionInpainter {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_sweeps: 2000,
        }
    }
}

const N4: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

impl DiffusionInpainter {
    /// Fills `unknown` pixels of each channel plane. `source` marks pixels
    /// usable as boundary values; pixels that are neither are left alone
    /// and never read.
    fn fill(&self, planes: &mut [Vec<f64>], w: usize, h: usize, unknown: &[bool], source: &[bool]) -> Result<()> {
        if !unknown.iter().any(|&u| u) {
            return Ok(());
        }
        if !source.iter().zip(unknown).any(|(&s, &u)| s && !u) {
            return Err(Error::Uninpaintable("no unmasked pixel to diffuse from".into()));
        }
        let nb = |i: usize| {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            N4.iter().filter_map(move |&(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                (nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize).then(|| ny as usize * w + nx as usize)
            })
        };
        let mut known: Vec<bool> = source.iter().zip(unknown).map(|(&s, &u)| s && !u).collect();
        let mut pending: Vec<usize> = (0..w * h).filter(|&i| unknown[i]).collect();
        while !pending.is_empty() {
            let layer: Vec<usize> = pending.iter().copied().filter(|&i| nb(i).any(|j| known[j])).collect();
            if layer.is_empty() {
                break;
            }
            let values: Vec<Vec<f64>> = layer
                .iter()
                .map(|&i| {
                    let ks: Vec<usize> = nb(i).filter(|&j| known[j]).collect();
                    planes.iter().map(|p| ks.iter().map(|&j| p[j]).sum::<f64>() / ks.len() as f64).collect()
                })
                .collect();
            for (&i, v) in layer.iter().zip(values) {
                for (p, x) in planes.iter_mut().zip(v) {
                    p[i] = x;
                }
                known[i] = true;
            }
            pending.retain(|&i| !known[i]);
        }
        if !pending.is_empty() {
            // regions cut off from every source take the global source mean
            let srcs: Vec<usize> = (0..w * h).filter(|&i| source[i] && !unknown[i]).collect();
            for p in planes.iter_mut() {
                let mean = srcs.iter().map(|&j| p[j]).sum::<f64>() / srcs.len() as f64;
                for &i in &pending {
                    p[i] = mean;
                }
            }
            for &i in &pending {
                known[i] = true;
            }
        }
        let cells: Vec<(usize, Vec<usize>)> = (0..w * h)
            .filter(|&i| unknown[i])
            .map(|i| (i, nb(i).filter(|&j| known[j]).collect()))
            .collect();
        for _ in 0..self.max_sweeps {
            let mut change = 0.0f64;
            for (i, ks) in &cells {
                for p in planes.iter_mut() {
                    let v = ks.iter().map(|&j| p[j]).sum::<f64>() / ks.len() as f64;
                    change = change.max((v - p[*i]).abs());
                    p[*i] = v;
                }
            }
            if change < self.tolerance {
                break;
            }
        }
        Ok(())
    }
}

fn check_mask(w: usize, h: usize, mask: &Mask2D) -> Result<()> {
    if mask.width != w || mask.height != h {
        return Err(Error::Shape(format!("inpaint mask {}×{} for a {w}×{h} raster", mask.width, mask.height)));
    }
    if mask.count() == w * h {
        return Err(Error::Uninpaintable("mask covers the whole image".into()));
    }
    Ok(())
}

impl<T: Scalar> Inpainter2D<T> for DiffusionInpainter {
    fn inpaint_rgb(&self, image: &Image2D<T>, mask: &Mask2D) -> Result<Image2D<T>> {
        let (w, h) = (image.width, image.height);
        check_mask(w, h, mask)?;
        let unknown: Vec<bool> = mask.data.iter().map(|&m| m != 0).collect();
        let mut planes: Vec<Vec<f64>> = (0..3).map(|c| image.data.iter().map(|p| p[c].to_f64_lossy()).collect()).collect();
        self.fill(&mut planes, w, h, &unknown, &vec![true; w * h])?;
        let mut out = image.clone();
        for (i, px) in out.data.iter_mut().enumerate() {
            if unknown[i] {
                *px = std::array::from_fn(|c| T::lit(planes[c][i]));
            }
        }
        Ok(out)
    }

    fn inpaint_depth(&self, depth: &DepthMap<T>, mask: &Mask2D) -> Result<DepthMap<T>> {
        let (w, h) = (depth.width, depth.height);
        check_mask(w, h, mask)?;
        let unknown: Vec<bool> = mask.data.iter().map(|&m| m != 0).collect();
        let mut planes = vec![depth.data.iter().map(|v| v.to_f64_lossy()).collect::<Vec<f64>>()];
        self.fill(&mut planes, w, h, &unknown, &depth.valid)?;
        let mut out = depth.clone();
        for i in 0..w * h {
            if unknown[i] {
                out.data[i] = T::lit(planes[0][i]);
                out.valid[i] = true;
            }
        }
        Ok(out)
    }
}

/// Applies a depth inpainter on depth rescaled to [0, 1] by the range of
/// valid unmasked pixels, then maps back.
pub fn inpaint_depth_normalized<T: Scalar>(inpainter: &dyn Inpainter2D<T>, depth: &DepthMap<T>, mask: &Mask2D) -> Result<DepthMap<T>> {
    let vals = depth
        .data
        .iter()
        .zip(&depth.valid)
        .zip(&mask.data)
        .filter(|((_, &ok), &m)| ok && m == 0)
        .map(|((&d, _), _)| d);
    let (lo, hi) = vals.fold((T::infinity(), T::neg_infinity()), |(lo, hi), d| (lo.min(d), hi.max(d)));
    if !(lo <= hi) {
        return Err(Error::Uninpaintable("no valid depth outside the mask".into()));
    }
    let span = if hi > lo { hi - lo } else { T::one() };
    let mut norm = depth.clone();
    for (v, &ok) in norm.data.iter_mut().zip(&depth.valid) {
        if ok {
            *v = (*v - lo) / span;
        }
    }
    let mut out = inpainter.inpaint_depth(&norm, mask)?;
    for (i, v) in out.data.iter_mut().enumerate() {
        *v = if mask.data[i] != 0 { *v * span + lo } else { depth.data[i] };
    }
    Ok(out)
}
