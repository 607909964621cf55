//! 2D raster utilities: masks, images, morphology, contour-based mask
//! refinement, SSIM and segmentation / image quality metrics.

mod contour;
mod io;
mod metrics;
mod morphology;
mod ssim;

pub use contour::{fill_holes, find_contours, label_components, refine_mask, Contour};
pub use io::{
    decode_depth_pfm, decode_image_png, decode_mask_png, encode_depth_npy, encode_depth_pfm, encode_image_png,
    encode_mask_png, read_depth_pfm, read_image_png, read_mask_png, write_depth_npy, write_depth_pfm, write_image_png,
    write_mask_png,
};
pub use metrics::{mask_metrics, psnr, psnr_masked, MaskMetrics, PSNR_CAP};
pub use morphology::dilate;
pub use ssim::{ssim, ssim_with_grad, SSIM_C1, SSIM_C2};

use crate::{Error, Result, Scalar};

/// Binary mask, row-major, values 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask2D {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask2D {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y) as u8;
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn same_shape(&self, o: &Self) -> Result<()> {
        if self.width != o.width || self.height != o.height {
            return Err(Error::Shape(format!(
                "mask {}×{} vs {}×{}",
                self.width, self.height, o.width, o.height
            )));
        }
        Ok(())
    }

    pub fn union(&self, o: &Self) -> Result<Self> {
        self.same_shape(o)?;
        let mut r = self.clone();
        r.data.iter_mut().zip(&o.data).for_each(|(a, b)| *a |= *b);
        Ok(r)
    }

    pub fn intersection(&self, o: &Self) -> Result<Self> {
        self.same_shape(o)?;
        let mut r = self.clone();
        r.data.iter_mut().zip(&o.data).for_each(|(a, b)| *a &= *b);
        Ok(r)
    }

    pub fn invert(&self) -> Self {
        let mut r = self.clone();
        r.data.iter_mut().for_each(|v| *v = (*v == 0) as u8);
        r
    }

    /// `true` when every set pixel of `self` is also set in `o`.
    pub fn is_subset_of(&self, o: &Self) -> bool {
        self.data.iter().zip(&o.data).all(|(a, b)| *a == 0 || *b != 0)
    }

    pub fn to_soft<T: Scalar>(&self) -> SoftMask<T> {
        SoftMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| if v != 0 { T::one() } else { T::zero() }).collect(),
        }
    }

    /// Tight inclusive bounding rectangle of the set pixels.
    pub fn bbox(&self) -> Result<Rect> {
        let mut r: Option<Rect> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    r = Some(match r {
                        None => Rect { x0: x, y0: y, x1: x, y1: y },
                        Some(b) => Rect {
                            x0: b.x0.min(x),
                            y0: b.y0.min(y),
                            x1: b.x1.max(x),
                            y1: b.y1.max(y),
                        },
                    });
                }
            }
        }
        r.ok_or(Error::EmptyMask)
    }
}

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

/// Tight bounding box of a mask's set pixels.
pub fn mask_bbox(mask: &Mask2D) -> Result<Rect> {
    mask.bbox()
}

/// Mask with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> SoftMask<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!("{} values for a {width}×{height} mask", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::zero(); width * height],
        }
    }

    /// Pixels strictly above `threshold`.
    pub fn binarize(&self, threshold: T) -> Mask2D {
        Mask2D {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| (v > threshold) as u8).collect(),
        }
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::zero(), T::max)
    }
}

/// RGB image, row-major, channel values nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[T; 3]>,
}

impl<T: Scalar> Image2D<T> {
    pub fn new(width: usize, height: usize, data: Vec<[T; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!("{} pixels for a {width}×{height} image", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, v: [T; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [T; 3] {
        self.data[y * self.width + x]
    }

    pub fn check_size(&self, width: usize, height: usize, what: &str) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::Shape(format!(
                "{what}: {}×{} vs {width}×{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn crop(&self, r: Rect) -> Self {
        let mut data = Vec::with_capacity(r.width() * r.height());
        for y in r.y0..=r.y1 {
            data.extend_from_slice(&self.data[y * self.width + r.x0..=y * self.width + r.x1]);
        }
        Self {
            width: r.width(),
            height: r.height(),
            data,
        }
    }

    /// Zeroes every pixel set in `mask`.
    pub fn zero_masked(&self, mask: &Mask2D) -> Self {
        let mut r = self.clone();
        for (p, &m) in r.data.iter_mut().zip(&mask.data) {
            if m != 0 {
                *p = [T::zero(); 3];
            }
        }
        r
    }

    pub fn cast<U: Scalar>(&self) -> Image2D<U> {
        Image2D {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| p.map(|v| U::lit(v.to_f64_lossy()))).collect(),
        }
    }
}

/// Depth raster with a per-pixel validity flag.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
    pub valid: Vec<bool>,
}

impl<T: Scalar> DepthMap<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>, valid: Vec<bool>) -> Result<Self> {
        if data.len() != width * height || valid.len() != width * height {
            return Err(Error::Shape(format!("depth buffers do not match {width}×{height}")));
        }
        Ok(Self {
            width,
            height,
            data,
            valid,
        })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}
