//! Adjoint of the rasterizer. Each pixel replays its tile list back to
//! front, accumulating gradients on projected quantities per tile; a
//! second per-splat pass chains them through the projection, the
//! covariance factorisation and the SH colour evaluation.

use bitflags::bitflags;
use rayon::prelude::*;

use super::project::geometry;
use super::{splat_alpha, Channels, FrameGrad, RenderTrace};
use crate::math::{normalize_quat_grad, rotation_from_unit, rotation_grad_to_unit_quat, Mat3, Vec3};
use crate::scene::{sh, Camera, SplatScene};
use crate::{Error, Result, Scalar};

bitflags! {
    /// Parameter groups the backward pass should differentiate.
    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub struct ParamSet: u8 {
        /// Means, rotations and log-scales.
        const GEOMETRY = 1;
        const OPACITY = 1 << 1;
        /// DC colour coefficients.
        const COLOR = 1 << 2;
        /// Segmentation score and dual-score logits.
        const SCORES = 1 << 3;
    }
}

/// Per-splat gradients, aligned with the scene. Scale and opacity
/// gradients are w.r.t. the stored log-scale and opacity logit; rotation
/// gradients are w.r.t. the stored (raw) quaternion components `w,x,y,z`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer<T> {
    pub means: Vec<[T; 3]>,
    pub rotations: Vec<[T; 4]>,
    pub log_scales: Vec<[T; 3]>,
    pub opacity_logits: Vec<T>,
    pub dc: Vec<[T; 3]>,
    pub scores: Vec<T>,
    pub dual_scores: Vec<T>,
}

impl<T: Scalar> GradientBuffer<T> {
    pub fn zeros(n: usize) -> Self {
        let z = T::zero();
        Self {
            means: vec![[z; 3]; n],
            rotations: vec![[z; 4]; n],
            log_scales: vec![[z; 3]; n],
            opacity_logits: vec![z; n],
            dc: vec![[z; 3]; n],
            scores: vec![z; n],
            dual_scores: vec![z; n],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.means.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().flatten().all(|v| v.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| v.is_finite())
            && self.dc.iter().flatten().all(|v| v.is_finite())
            && self.scores.iter().all(|v| v.is_finite())
            && self.dual_scores.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Default)]
struct ProjGrad<T> {
    mean2d: [T; 2],
    conic: [T; 3],
    opacity: T,
    color: [T; 3],
    depth: T,
    mask: T,
    dual: T,
}

impl<T: Scalar> ProjGrad<T> {
    fn add(&mut self, o: &Self) {
        for i in 0..2 {
            self.mean2d[i] += o.mean2d[i];
        }
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
        self.mask += o.mask;
        self.dual += o.dual;
    }
}

/// Gradients of a loss w.r.t. the scene parameters, given `∂L/∂frame` and
/// the trace of the forward pass that produced the frame.
pub fn render_backward<T: Scalar>(
    scene: &SplatScene<T>,
    camera: &Camera<T>,
    trace: &RenderTrace<T>,
    grad: &FrameGrad<T>,
    params: ParamSet,
) -> Result<GradientBuffer<T>> {
    if trace.scene_len != scene.len() {
        return Err(Error::Contract(format!(
            "trace recorded {} splats, scene has {}",
            trace.scene_len,
            scene.len()
        )));
    }
    if trace.width != camera.width || trace.height != camera.height || grad.width != trace.width || grad.height != trace.height {
        return Err(Error::Contract("frame, gradient and camera dimensions differ".into()));
    }
    let n_pix = trace.width * trace.height;
    let checks = [
        (grad.color.as_ref().map(Vec::len), Channels::COLOR, "color"),
        (grad.depth.as_ref().map(Vec::len), Channels::DEPTH, "depth"),
        (grad.mask.as_ref().map(Vec::len), Channels::MASK, "mask"),
        (grad.dual_mask.as_ref().map(Vec::len), Channels::DUAL_MASK, "dual_mask"),
    ];
    for (len, ch, name) in checks {
        if let Some(len) = len {
            if len != n_pix {
                return Err(Error::Contract(format!("{name} gradient has {len} pixels, expected {n_pix}")));
            }
            if !trace.channels.contains(ch) {
                return Err(Error::Contract(format!("{name} gradient given but channel was not rendered")));
            }
        }
    }
    if grad.acc_alpha.as_ref().is_some_and(|a| a.len() != n_pix) {
        return Err(Error::Contract("acc_alpha gradient has the wrong size".into()));
    }

    let need_alpha = params.intersects(ParamSet::GEOMETRY | ParamSet::OPACITY);
    let n_proj = trace.projected.len();
    let tiles_x = trace.tiles_x();
    let ts = trace.settings.tile_size;

    let proj_grads: Vec<ProjGrad<T>> = (0..trace.tile_ranges.len())
        .into_par_iter()
        .fold(
            || vec![ProjGrad::default(); n_proj],
            |mut acc, t| {
                backward_tile(trace, grad, t, tiles_x, ts, need_alpha, &mut acc);
                acc
            },
        )
        .reduce(
            || vec![ProjGrad::default(); n_proj],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    x.add(y);
                }
                a
            },
        );

    let per_splat: Vec<(usize, SplatGrad<T>)> = trace
        .projected
        .par_iter()
        .zip(proj_grads.par_iter())
        .map(|(p, g)| (p.index, splat_grad(scene, camera, p, g, params)))
        .collect();

    let mut out = GradientBuffer::zeros(scene.len());
    for (i, g) in per_splat {
        out.means[i] = g.mean;
        out.rotations[i] = g.rotation;
        out.log_scales[i] = g.log_scale;
        out.opacity_logits[i] = g.opacity_logit;
        out.dc[i] = g.dc;
        out.scores[i] = g.score;
        out.dual_scores[i] = g.dual;
    }
    Ok(out)
}

fn backward_tile<T: Scalar>(
    trace: &RenderTrace<T>,
    grad: &FrameGrad<T>,
    tile: usize,
    tiles_x: usize,
    ts: usize,
    need_alpha: bool,
    acc: &mut [ProjGrad<T>],
) {
    let (s, e) = trace.tile_ranges[tile];
    if s == e {
        return;
    }
    let list = &trace.tile_list[s..e];
    let (x0, y0) = ((tile % tiles_x) * ts, (tile / tiles_x) * ts);
    let (x1, y1) = ((x0 + ts).min(trace.width), (y0 + ts).min(trace.height));
    let half = T::lit(0.5);
    let z = T::zero();
    let settings = &trace.settings;
    let bg = trace.background;

    for y in y0..y1 {
        for x in x0..x1 {
            let p = y * trace.width + x;
            let gc = grad.color.as_ref().map_or([z; 3], |g| g[p]);
            let gd = grad.depth.as_ref().map_or(z, |g| g[p]);
            let gm = grad.mask.as_ref().map_or(z, |g| g[p]);
            let gmd = grad.dual_mask.as_ref().map_or(z, |g| g[p]);
            let mut ga = grad.acc_alpha.as_ref().map_or(z, |g| g[p]);
            let t_final = trace.final_t[p];
            let acc_alpha = T::one() - t_final;
            let g_draw = if acc_alpha > half {
                ga -= gd * trace.depth_raw[p] / (acc_alpha * acc_alpha);
                gd / acc_alpha
            } else {
                gd
            };
            let gf = [gc[0], gc[1], gc[2], g_draw, gm, gmd, ga];
            if gf.iter().all(|v| *v == z) {
                continue;
            }
            let (px, py) = (T::from_usize_lossy(x) + half, T::from_usize_lossy(y) + half);
            let mut t = t_final;
            let mut after = [bg[0], bg[1], bg[2], z, z, z, z];
            let n = trace.n_processed[p] as usize;
            for k in (0..n).rev() {
                let id = list[k] as usize;
                let ps = &trace.projected[id];
                let Some((alpha, g, dx, dy)) = splat_alpha(ps, px, py, settings) else {
                    continue;
                };
                let one_minus = T::one() - alpha;
                let t_before = t / one_minus;
                let w = alpha * t_before;
                let pg = &mut acc[id];
                for ch in 0..3 {
                    pg.color[ch] += w * gc[ch];
                }
                pg.depth += w * g_draw;
                pg.mask += w * gm;
                pg.dual += w * gmd;
                if need_alpha {
                    let f = [ps.color[0], ps.color[1], ps.color[2], ps.depth, ps.mask, ps.dual_mask, T::one()];
                    let mut d_alpha = z;
                    for c in 0..7 {
                        d_alpha += gf[c] * (f[c] - after[c]);
                    }
                    d_alpha *= t_before;
                    if ps.alpha_base * g < settings.alpha_max {
                        pg.opacity += d_alpha * g;
                        let d_g = d_alpha * ps.alpha_base * g;
                        let [a, b, c] = ps.conic;
                        pg.mean2d[0] += d_g * (a * dx + b * dy);
                        pg.mean2d[1] += d_g * (b * dx + c * dy);
                        pg.conic[0] += d_g * (-half * dx * dx);
                        pg.conic[1] += d_g * (-dx * dy);
                        pg.conic[2] += d_g * (-half * dy * dy);
                    }
                    for c in 0..7 {
                        after[c] = alpha * f[c] + one_minus * after[c];
                    }
                }
                t = t_before;
            }
        }
    }
}

struct SplatGrad<T> {
    mean: [T; 3],
    rotation: [T; 4],
    log_scale: [T; 3],
    opacity_logit: T,
    dc: [T; 3],
    score: T,
    dual: T,
}

fn splat_grad<T: Scalar>(
    scene: &SplatScene<T>,
    camera: &Camera<T>,
    ps: &super::ProjectedSplat<T>,
    g: &ProjGrad<T>,
    params: ParamSet,
) -> SplatGrad<T> {
    let z0 = T::zero();
    let splat = &scene.splats[ps.index];
    let mut out = SplatGrad {
        mean: [z0; 3],
        rotation: [z0; 4],
        log_scale: [z0; 3],
        opacity_logit: z0,
        dc: [z0; 3],
        score: z0,
        dual: z0,
    };
    let sig_grad = |logit: T| {
        let s = logit.sigmoid();
        s * (T::one() - s)
    };
    if params.contains(ParamSet::SCORES) {
        if let Some(seg) = &scene.seg {
            out.score = g.mask * sig_grad(seg.score[ps.index]);
            if let Some(d) = &seg.dual_score {
                out.dual = g.dual * sig_grad(d[ps.index]);
            }
        }
    }
    // colour gradient with the clamp applied
    let mut g_rgb = g.color;
    for ch in 0..3 {
        if ps.color_clamped[ch] {
            g_rgb[ch] = z0;
        }
    }
    if params.contains(ParamSet::COLOR) {
        let c0 = T::lit(sh::SH_C0);
        out.dc = g_rgb.map(|v| v * c0);
    }
    if params.contains(ParamSet::OPACITY) {
        out.opacity_logit = g.opacity * sig_grad(splat.opacity_logit);
    }
    if !params.contains(ParamSet::GEOMETRY) {
        return out;
    }

    let geo = geometry(splat, camera);
    let (x, y, z) = (geo.p_cam.x, geo.p_cam.y, geo.p_cam.z);
    let (fx, fy) = (camera.fx, camera.fy);
    let iz = T::one() / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let two = T::lit(2.0);

    // conic -> 2D covariance: dL/dΣ₂ = -Q H_Q Q with symmetric full-matrix H_Q
    let [qa, qb, qc] = ps.conic;
    let hq = [[g.conic[0], g.conic[1] / two], [g.conic[1] / two, g.conic[2]]];
    let q = [[qa, qb], [qb, qc]];
    let mut qh = [[z0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            qh[i][j] = q[i][0] * hq[0][j] + q[i][1] * hq[1][j];
        }
    }
    let mut h2 = [[z0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            h2[i][j] = -(qh[i][0] * q[0][j] + qh[i][1] * q[1][j]);
        }
    }
    // Σ₂ = M Σ Mᵀ with M = J W
    let m = &geo.jw;
    let sigma = &geo.cov3d;
    // H_Σ3 = Mᵀ H2 M
    let mut h3 = Mat3::zero();
    for i in 0..3 {
        for j in 0..3 {
            let mut v = z0;
            for a in 0..2 {
                for b in 0..2 {
                    v += m[a][i] * h2[a][b] * m[b][j];
                }
            }
            h3.0[i][j] = v;
        }
    }
    // H_M = 2 H2 M Σ
    let mut ms = [[z0; 3]; 2];
    for a in 0..2 {
        for j in 0..3 {
            ms[a][j] = m[a][0] * sigma.0[0][j] + m[a][1] * sigma.0[1][j] + m[a][2] * sigma.0[2][j];
        }
    }
    let mut hm = [[z0; 3]; 2];
    for a in 0..2 {
        for j in 0..3 {
            hm[a][j] = two * (h2[a][0] * ms[0][j] + h2[a][1] * ms[1][j]);
        }
    }
    // H_J = H_M Wᵀ
    let w = &camera.rotation.0;
    let mut hj = [[z0; 3]; 2];
    for a in 0..2 {
        for k in 0..3 {
            hj[a][k] = hm[a][0] * w[k][0] + hm[a][1] * w[k][1] + hm[a][2] * w[k][2];
        }
    }
    let mut gp = Vec3::new(z0, z0, g.depth);
    gp.x += hj[0][2] * (-fx * iz2);
    gp.y += hj[1][2] * (-fy * iz2);
    gp.z += hj[0][0] * (-fx * iz2) + hj[0][2] * (two * fx * x * iz3) + hj[1][1] * (-fy * iz2) + hj[1][2] * (two * fy * y * iz3);
    // mean2d
    gp.x += g.mean2d[0] * fx * iz;
    gp.y += g.mean2d[1] * fy * iz;
    gp.z += -g.mean2d[0] * fx * x * iz2 - g.mean2d[1] * fy * y * iz2;

    let mut g_mean = camera.rotation.transpose().mul_vec(gp);

    // view-dependent colour through the direction
    if scene.sh_degree > 0 {
        let v = splat.mean - camera.center();
        let len = v.norm();
        let dir = v * (T::one() / len);
        let bg = sh::basis_gradient(dir);
        let mut g_dir = Vec3::zero();
        for (k, coeff) in splat.sh.iter().enumerate().skip(1) {
            let s = g_rgb[0] * coeff[0] + g_rgb[1] * coeff[1] + g_rgb[2] * coeff[2];
            g_dir += Vec3::from_array(bg[k]) * s;
        }
        g_mean += (g_dir - dir * dir.dot(g_dir)) * (T::one() / len);
    }
    out.mean = g_mean.to_array();

    // Σ = M' M'ᵀ, M' = R S
    let unit = splat.rotation.normalized();
    let r = rotation_from_unit(unit);
    let s = splat.scale();
    let mp = r.mul_mat(&Mat3::diag(s));
    let hmp = h3.mul_mat(&mp).scale(two);
    let mut g_s = [z0; 3];
    let mut h_r = Mat3::zero();
    for a in 0..3 {
        for k in 0..3 {
            g_s[k] += hmp.0[a][k] * r.0[a][k];
            h_r.0[a][k] = hmp.0[a][k] * s[k];
        }
    }
    out.log_scale = [g_s[0] * s.x, g_s[1] * s.y, g_s[2] * s.z];
    out.rotation = normalize_quat_grad(splat.rotation, rotation_grad_to_unit_quat(unit, &h_r));
    out
}
