//! Tile-based splat rasterizer.
//!
//! Splats are projected, binned into 16×16 tiles by their 3σ footprint and
//! sorted front-to-back by camera-space depth (ties broken by splat index).
//! Every pixel then alpha-composites the splats of its tile:
//!
//! ```text
//! α_i = min(0.99, o_i · exp(-½ Δᵀ Σ₂⁻¹ Δ))      (skipped when α_i < 1/255)
//! C   = Σ_i c_i α_i Π_{j<i} (1 - α_j) + T_final · background
//! ```
//!
//! Depth, mask and dual mask are composited the same way with camera
//! depth and `sigmoid(score)` as the per-splat value. Depth is divided by
//! the accumulated alpha wherever that exceeds 0.5.

mod backward;
mod project;

pub use backward::{render_backward, GradientBuffer, ParamSet};
pub use project::{project_splat, ProjectedSplat};

use bitflags::bitflags;
use rayon::prelude::*;

use crate::imaging::{DepthMap, Image2D};
use crate::scene::{Camera, SplatScene};
use crate::{Error, Result, Scalar};

pub const TILE_SIZE: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderSettings<T> {
    pub near: T,
    pub tile_size: usize,
    /// Added to the diagonal of every projected covariance.
    pub lowpass: T,
    pub alpha_max: T,
    pub alpha_min: T,
    /// Compositing of a pixel stops once transmittance drops below this.
    pub transmittance_min: T,
}

impl<T: Scalar> Default for RenderSettings<T> {
    fn default() -> Self {
        Self {
            near: T::lit(0.01),
            tile_size: TILE_SIZE,
            lowpass: T::lit(0.3),
            alpha_max: T::lit(0.99),
            alpha_min: T::lit(1.0 / 255.0),
            transmittance_min: T::lit(1e-4),
        }
    }
}

bitflags! {
    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub struct Channels: u8 {
        const COLOR = 1;
        const DEPTH = 1 << 1;
        const MASK = 1 << 2;
        const DUAL_MASK = 1 << 3;
    }
}

/// Rendered channels; unrequested channels are left at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBuffer<T> {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[T; 3]>,
    pub depth: Vec<T>,
    pub mask: Vec<T>,
    pub dual_mask: Vec<T>,
    pub acc_alpha: Vec<T>,
}

impl<T: Scalar> FrameBuffer<T> {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![[T::zero(); 3]; n],
            depth: vec![T::zero(); n],
            mask: vec![T::zero(); n],
            dual_mask: vec![T::zero(); n],
            acc_alpha: vec![T::zero(); n],
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn color_image(&self) -> Image2D<T> {
        Image2D {
            width: self.width,
            height: self.height,
            data: self.color.clone(),
        }
    }

    /// Depth map, valid where accumulated alpha exceeds 0.5.
    pub fn depth_map(&self) -> DepthMap<T> {
        DepthMap {
            width: self.width,
            height: self.height,
            data: self.depth.clone(),
            valid: self.acc_alpha.iter().map(|&a| a > T::lit(0.5)).collect(),
        }
    }
}

/// Upstream gradient `∂L/∂frame`; absent channels contribute nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameGrad<T> {
    pub width: usize,
    pub height: usize,
    pub color: Option<Vec<[T; 3]>>,
    pub depth: Option<Vec<T>>,
    pub mask: Option<Vec<T>>,
    pub dual_mask: Option<Vec<T>>,
    pub acc_alpha: Option<Vec<T>>,
}

impl<T: Scalar> FrameGrad<T> {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            color: None,
            depth: None,
            mask: None,
            dual_mask: None,
            acc_alpha: None,
        }
    }
}

/// Everything the backward pass needs to replay compositing.
#[derive(Clone, Debug)]
pub struct RenderTrace<T> {
    pub(crate) scene_len: usize,
    pub(crate) width: usize,
    pub(crate) height: usize,
    pub(crate) background: [T; 3],
    pub(crate) channels: Channels,
    pub(crate) settings: RenderSettings<T>,
    pub(crate) projected: Vec<ProjectedSplat<T>>,
    /// Per tile, offsets into `tile_list`.
    pub(crate) tile_ranges: Vec<(usize, usize)>,
    /// Indices into `projected`, grouped by tile and depth-sorted.
    pub(crate) tile_list: Vec<u32>,
    pub(crate) final_t: Vec<T>,
    /// Number of tile-list entries processed per pixel.
    pub(crate) n_processed: Vec<u32>,
    pub(crate) depth_raw: Vec<T>,
}

impl<T: Scalar> RenderTrace<T> {
    pub fn projected(&self) -> &[ProjectedSplat<T>] {
        &self.projected
    }

    pub fn tiles_x(&self) -> usize {
        self.width.div_ceil(self.settings.tile_size)
    }
}

/// Renders with default settings.
pub fn render<T: Scalar>(
    scene: &SplatScene<T>,
    camera: &Camera<T>,
    background: [T; 3],
    channels: Channels,
) -> Result<FrameBuffer<T>> {
    Ok(render_traced(scene, camera, background, channels, &RenderSettings::default())?.0)
}

pub fn render_traced<T: Scalar>(
    scene: &SplatScene<T>,
    camera: &Camera<T>,
    background: [T; 3],
    channels: Channels,
    settings: &RenderSettings<T>,
) -> Result<(FrameBuffer<T>, RenderTrace<T>)> {
    scene.validate()?;
    if let Some(i) = scene.splats.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteSplat { index: i });
    }
    let seg = scene.seg.as_ref();
    let projected: Vec<ProjectedSplat<T>> = scene
        .splats
        .par_iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let score = seg.map(|g| g.score[i]);
            let dual = seg.and_then(|g| g.dual_score.as_ref()).map(|d| d[i]);
            project_splat(i, s, scene.sh_degree, camera, score, dual, settings)
        })
        .collect();

    let (tile_ranges, tile_list) = bin_tiles(&projected, camera, settings.tile_size);
    let ts = settings.tile_size;
    let tiles_x = camera.width.div_ceil(ts);

    let tiles: Vec<TileOut<T>> = (0..tile_ranges.len())
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            let (s, e) = tile_ranges[t];
            rasterize_tile(
                &projected,
                &tile_list[s..e],
                (tx * ts, ty * ts),
                (ts.min(camera.width - tx * ts), ts.min(camera.height - ty * ts)),
                background,
                channels,
                settings,
            )
        })
        .collect();

    let mut frame = FrameBuffer::new(camera.width, camera.height);
    let n = camera.pixel_count();
    let mut final_t = vec![T::one(); n];
    let mut n_processed = vec![0u32; n];
    let mut depth_raw = vec![T::zero(); n];
    for tile in tiles {
        let (x0, y0) = tile.origin;
        for ly in 0..tile.size.1 {
            for lx in 0..tile.size.0 {
                let l = ly * tile.size.0 + lx;
                let p = frame.idx(x0 + lx, y0 + ly);
                let px = &tile.pixels[l];
                frame.color[p] = px.color;
                frame.depth[p] = px.depth;
                frame.mask[p] = px.mask;
                frame.dual_mask[p] = px.dual;
                frame.acc_alpha[p] = T::one() - px.t;
                final_t[p] = px.t;
                n_processed[p] = px.n;
                depth_raw[p] = px.depth_raw;
            }
        }
    }
    let trace = RenderTrace {
        scene_len: scene.len(),
        width: camera.width,
        height: camera.height,
        background,
        channels,
        settings: settings.clone(),
        projected,
        tile_ranges,
        tile_list,
        final_t,
        n_processed,
        depth_raw,
    };
    Ok((frame, trace))
}

fn bin_tiles<T: Scalar>(projected: &[ProjectedSplat<T>], camera: &Camera<T>, ts: usize) -> (Vec<(usize, usize)>, Vec<u32>) {
    let tiles_x = camera.width.div_ceil(ts);
    let tiles_y = camera.height.div_ceil(ts);
    let mut counts = vec![0usize; tiles_x * tiles_y];
    for p in projected {
        let [x0, y0, x1, y1] = p.tiles;
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                counts[ty * tiles_x + tx] += 1;
            }
        }
    }
    let mut ranges = Vec::with_capacity(counts.len());
    let mut acc = 0;
    for &c in &counts {
        ranges.push((acc, acc + c));
        acc += c;
    }
    // global depth order, then scatter into tiles keeps each tile sorted
    let mut order: Vec<u32> = (0..projected.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&projected[a as usize], &projected[b as usize]);
        pa.depth.partial_cmp(&pb.depth).unwrap_or(std::cmp::Ordering::Equal).then(pa.index.cmp(&pb.index))
    });
    let mut list = vec![0u32; acc];
    let mut cursor: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    for &id in &order {
        let [x0, y0, x1, y1] = projected[id as usize].tiles;
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                let t = ty * tiles_x + tx;
                list[cursor[t]] = id;
                cursor[t] += 1;
            }
        }
    }
    (ranges, list)
}

struct PixelOut<T> {
    color: [T; 3],
    depth: T,
    depth_raw: T,
    mask: T,
    dual: T,
    t: T,
    n: u32,
}

struct TileOut<T> {
    origin: (usize, usize),
    size: (usize, usize),
    pixels: Vec<PixelOut<T>>,
}

/// Gaussian falloff and clamped alpha of a projected splat at a pixel
/// centre; `None` when the splat is skipped there.
#[inline]
pub(crate) fn splat_alpha<T: Scalar>(p: &ProjectedSplat<T>, px: T, py: T, settings: &RenderSettings<T>) -> Option<(T, T, T, T)> {
    let dx = px - p.mean2d[0];
    let dy = py - p.mean2d[1];
    if dx.abs() > p.radius || dy.abs() > p.radius {
        return None;
    }
    let [a, b, c] = p.conic;
    let power = T::lit(-0.5) * (a * dx * dx + c * dy * dy) - b * dx * dy;
    if power > T::zero() {
        return None;
    }
    let g = power.exp();
    let raw = p.alpha_base * g;
    let alpha = raw.min(settings.alpha_max);
    if alpha < settings.alpha_min {
        return None;
    }
    Some((alpha, g, dx, dy))
}

fn rasterize_tile<T: Scalar>(
    projected: &[ProjectedSplat<T>],
    list: &[u32],
    origin: (usize, usize),
    size: (usize, usize),
    background: [T; 3],
    channels: Channels,
    settings: &RenderSettings<T>,
) -> TileOut<T> {
    let half = T::lit(0.5);
    let want_color = channels.contains(Channels::COLOR);
    let want_depth = channels.contains(Channels::DEPTH);
    let want_mask = channels.contains(Channels::MASK);
    let want_dual = channels.contains(Channels::DUAL_MASK);
    let mut pixels: Vec<PixelOut<T>> = (0..size.0 * size.1)
        .map(|_| PixelOut {
            color: [T::zero(); 3],
            depth: T::zero(),
            depth_raw: T::zero(),
            mask: T::zero(),
            dual: T::zero(),
            t: T::one(),
            n: 0,
        })
        .collect();
    let mut done = vec![false; pixels.len()];
    let mut remaining = pixels.len();
    // splats in depth order, each visiting only the pixels its footprint
    // box covers; per pixel this is the same sequence a pixel-major loop sees
    let (tx1, ty1) = ((origin.0 + size.0) as f64 - 1.0, (origin.1 + size.1) as f64 - 1.0);
    for (k, &id) in list.iter().enumerate() {
        let p = &projected[id as usize];
        let (mx, my, r) = (p.mean2d[0].to_f64_lossy(), p.mean2d[1].to_f64_lossy(), p.radius.to_f64_lossy());
        let x0 = (mx - r - 1.5).floor().max(origin.0 as f64);
        let x1 = (mx + r + 0.5).ceil().min(tx1);
        let y0 = (my - r - 1.5).floor().max(origin.1 as f64);
        let y1 = (my + r + 0.5).ceil().min(ty1);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            let py = T::from_usize_lossy(y) + half;
            let row = (y - origin.1) * size.0;
            for x in x0 as usize..=x1 as usize {
                let l = row + x - origin.0;
                if done[l] {
                    continue;
                }
                let px = T::from_usize_lossy(x) + half;
                let Some((alpha, ..)) = splat_alpha(p, px, py, settings) else {
                    continue;
                };
                let o = &mut pixels[l];
                let w = alpha * o.t;
                if want_color {
                    for ch in 0..3 {
                        o.color[ch] += w * p.color[ch];
                    }
                }
                if want_depth {
                    o.depth_raw += w * p.depth;
                }
                if want_mask {
                    o.mask += w * p.mask;
                }
                if want_dual {
                    o.dual += w * p.dual_mask;
                }
                o.t = o.t * (T::one() - alpha);
                o.n = k as u32 + 1;
                if o.t < settings.transmittance_min {
                    done[l] = true;
                    remaining -= 1;
                }
            }
        }
        if remaining == 0 {
            break;
        }
    }
    for o in &mut pixels {
        if want_color {
            for ch in 0..3 {
                o.color[ch] += o.t * background[ch];
            }
        }
        let acc = T::one() - o.t;
        o.depth = if acc > half { o.depth_raw / acc } else { o.depth_raw };
    }
    TileOut { origin, size, pixels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Mat3, Vec3};
    use crate::scene::Splat;

    fn axis_camera(w: usize, h: usize) -> Camera<f64> {
        Camera::new(100.0, 100.0, w as f64 / 2.0, h as f64 / 2.0, w, h, Mat3::identity(), Vec3::zero()).unwrap()
    }

    #[test]
    fn empty_scene_shows_background() {
        let scene = SplatScene::<f64>::new(0);
        let f = render(&scene, &axis_camera(20, 10), [1.0; 3], Channels::all()).unwrap();
        assert!(f.color.iter().all(|c| *c == [1.0; 3]));
        assert!(f.acc_alpha.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn opaque_splat_is_clamped_to_099() {
        // 1×1 image, splat on the optical axis lands on the pixel centre
        let cam = Camera::<f64>::new(100.0, 100.0, 0.5, 0.5, 1, 1, Mat3::identity(), Vec3::zero()).unwrap();
        let mut s = Splat::isotropic(Vec3::new(0.0, 0.0, 2.0), 0.01, 0.5, [1.0, 0.0, 0.0]);
        s.opacity_logit = 40.0;
        let scene = SplatScene::from_splats(vec![s], 0).unwrap();
        let f = render(&scene, &cam, [0.0; 3], Channels::COLOR).unwrap();
        assert!((f.color[0][0] - 0.99).abs() < 1e-12);
        assert!(f.color[0][1].abs() < 1e-12);
    }

    #[test]
    fn two_layer_composite() {
        let cam = Camera::<f64>::new(100.0, 100.0, 0.5, 0.5, 1, 1, Mat3::identity(), Vec3::zero()).unwrap();
        let red = Splat::isotropic(Vec3::new(0.0, 0.0, 1.0), 0.01f64, 0.5, [1.0, 0.0, 0.0]);
        let blue = Splat::isotropic(Vec3::new(0.0, 0.0, 2.0), 0.01, 0.5, [0.0, 0.0, 1.0]);
        // list order must not matter
        let scene = SplatScene::from_splats(vec![blue, red], 0).unwrap();
        let f = render(&scene, &cam, [0.0; 3], Channels::all()).unwrap();
        assert!((f.color[0][0] - 0.5).abs() < 1e-12);
        assert!((f.color[0][2] - 0.25).abs() < 1e-12);
        assert!((f.acc_alpha[0] - 0.75).abs() < 1e-12);
        // expected depth renormalized by acc: (0.5·1 + 0.25·2) / 0.75
        assert!((f.depth[0] - 1.0 / 0.75).abs() < 1e-12);
    }

    #[test]
    fn non_finite_splat_is_reported() {
        let mut s = Splat::isotropic(Vec3::new(0.0, 0.0, 1.0), 0.1f64, 0.5, [0.5; 3]);
        s.mean.x = f64::NAN;
        let ok = Splat::isotropic(Vec3::new(0.0, 0.0, 1.0), 0.1f64, 0.5, [0.5; 3]);
        let scene = SplatScene::from_splats(vec![ok, s], 0).unwrap();
        let err = render(&scene, &axis_camera(8, 8), [0.0; 3], Channels::COLOR).unwrap_err();
        assert!(matches!(err, Error::NonFiniteSplat { index: 1 }));
    }

    #[test]
    fn projection_of_axis_and_offset_points() {
        let cam = Camera::<f64>::new(100.0f64, 100.0, 64.0, 48.0, 128, 96, Mat3::identity(), Vec3::zero()).unwrap();
        let st = RenderSettings::default();
        let on_axis = Splat::isotropic(Vec3::new(0.0, 0.0, 3.0), 0.05, 0.5, [0.5; 3]);
        let p = project_splat(0, &on_axis, 0, &cam, None, None, &st).unwrap();
        assert_eq!(p.mean2d, [64.0, 48.0]);
        let off = Splat::isotropic(Vec3::new(0.1, 0.0, 1.0), 0.05, 0.5, [0.5; 3]);
        let p = project_splat(0, &off, 0, &cam, None, None, &st).unwrap();
        assert!((p.mean2d[0] - 74.0).abs() < 1e-12);
        let behind = Splat::isotropic(Vec3::new(0.0, 0.0, -1.0), 0.05, 0.5, [0.5; 3]);
        assert!(project_splat(0, &behind, 0, &cam, None, None, &st).is_none());
    }

    #[test]
    fn splat_far_outside_frame_is_culled() {
        let cam = Camera::<f64>::new(100.0f64, 100.0, 16.0, 16.0, 32, 32, Mat3::identity(), Vec3::zero()).unwrap();
        let s = Splat::isotropic(Vec3::new(50.0, 0.0, 1.0), 0.01, 0.5, [0.5; 3]);
        assert!(project_splat(0, &s, 0, &cam, None, None, &RenderSettings::default()).is_none());
    }
}
