//! Image and mask metrics over aligned directories.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use splatedit_core::imaging::{mask_metrics, psnr, psnr_masked, read_image_png, read_mask_png, Image2D};
use splatedit_core::inpainting::{MsSsimProxy, PerceptualMetric};

pub const METRICS_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub iou: Option<f64>,
    pub psnr: Option<f64>,
    pub masked_psnr: Option<f64>,
    /// Multi-scale SSIM distance, not LPIPS.
    pub perceptual_proxy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub name: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub v: u32,
    pub views: Vec<ViewMetrics>,
    pub mean: Metrics,
}

#[derive(Clone, Debug, Default)]
pub struct EvalInputs {
    pub rendered: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    /// Region masks for `masked_psnr`.
    pub masks: Option<PathBuf>,
    pub pred_masks: Option<PathBuf>,
    pub gt_masks: Option<PathBuf>,
}

/// PNG files of `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

fn paired(a: &Path, b: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let (la, lb) = (list_pngs(a)?, list_pngs(b)?);
    if la.len() != lb.len() {
        bail!("{} has {} images but {} has {}", a.display(), la.len(), b.display(), lb.len());
    }
    Ok(la.into_iter().zip(lb).collect())
}

fn name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn evaluate(inputs: &EvalInputs) -> Result<Report> {
    let images = match (&inputs.rendered, &inputs.gt) {
        (Some(r), Some(g)) => Some(paired(r, g)?),
        (None, None) => None,
        _ => bail!("--rendered and --gt go together"),
    };
    let masks = match (&inputs.pred_masks, &inputs.gt_masks) {
        (Some(p), Some(g)) => Some(paired(p, g)?),
        (None, None) => None,
        _ => bail!("--pred-masks and --gt-masks go together"),
    };
    let regions = inputs.masks.as_deref().map(list_pngs).transpose()?;
    let count = match (&images, &masks) {
        (Some(i), Some(m)) if i.len() != m.len() => bail!("{} image pairs but {} mask pairs", i.len(), m.len()),
        (Some(i), _) => i.len(),
        (None, Some(m)) => m.len(),
        (None, None) => bail!("nothing to evaluate"),
    };
    if let Some(r) = &regions {
        if images.is_none() || r.len() != count {
            bail!("--masks needs --rendered/--gt with one region mask per image");
        }
    }
    let proxy = MsSsimProxy::default();
    let views = (0..count)
        .into_par_iter()
        .map(|k| -> Result<ViewMetrics> {
            let mut m = Metrics::default();
            let mut view_name = String::new();
            if let Some(pairs) = &images {
                let (r, g) = &pairs[k];
                view_name = name(r);
                let a: Image2D<f64> = read_image_png(r)?;
                let b: Image2D<f64> = read_image_png(g)?;
                m.psnr = Some(psnr(&a, &b)?);
                m.perceptual_proxy = Some(proxy.distance(&b, &a)?);
                if let Some(regions) = &regions {
                    m.masked_psnr = Some(psnr_masked(&a, &b, &read_mask_png(&regions[k])?)?);
                }
            }
            if let Some(pairs) = &masks {
                let (p, g) = &pairs[k];
                if view_name.is_empty() {
                    view_name = name(p);
                }
                let mm = mask_metrics(&read_mask_png(p)?, &read_mask_png(g)?)?;
                m.accuracy = Some(mm.accuracy);
                m.iou = Some(mm.iou);
            }
            Ok(ViewMetrics { name: view_name, metrics: m })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = Metrics {
        accuracy: mean(views.iter().map(|v| v.metrics.accuracy)),
        iou: mean(views.iter().map(|v| v.metrics.iou)),
        psnr: mean(views.iter().map(|v| v.metrics.psnr)),
        masked_psnr: mean(views.iter().map(|v| v.metrics.masked_psnr)),
        perceptual_proxy: mean(views.iter().map(|v| v.metrics.perceptual_proxy)),
    };
    Ok(Report {
        v: METRICS_VERSION,
        views,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use splatedit_core::imaging::{write_image_png, write_mask_png, Mask2D};

    fn write_set(dir: &Path, imgs: &[Image2D<f64>]) {
        std::fs::create_dir_all(dir).unwrap();
        for (k, im) in imgs.iter().enumerate() {
            write_image_png(im, dir.join(format!("view_{k:03}.png"))).unwrap();
        }
    }

    fn flat(v: f64) -> Image2D<f64> {
        Image2D::new(8, 8, vec![[v; 3]; 64]).unwrap()
    }

    #[test]
    fn identical_sets_hit_the_cap() {
        let t = tempfile::tempdir().unwrap();
        let imgs: Vec<_> = (0..3).map(|k| Image2D::new(8, 8, (0..64).map(|i| [(i * 3 + k) as f64 / 255.0, 0.5, 0.2]).collect()).unwrap()).collect();
        write_set(&t.path().join("a"), &imgs);
        write_set(&t.path().join("b"), &imgs);
        let r = evaluate(&EvalInputs {
            rendered: Some(t.path().join("a")),
            gt: Some(t.path().join("b")),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(r.views.len(), 3);
        assert_eq!(r.mean.psnr, Some(99.0));
        assert!(r.mean.perceptual_proxy.unwrap().abs() < 1e-9);
        assert_eq!(r.mean.iou, None);
    }

    #[test]
    fn uniform_error_of_a_tenth_is_20db() {
        assert!((psnr(&flat(0.3), &flat(0.4)).unwrap() - 20.0).abs() < 1e-9);
        // 0.1 is not an 8-bit level; through files use 0.2 = 51/255
        let t = tempfile::tempdir().unwrap();
        write_set(&t.path().join("a"), &[flat(0.0)]);
        write_set(&t.path().join("b"), &[flat(0.2)]);
        let r = evaluate(&EvalInputs {
            rendered: Some(t.path().join("a")),
            gt: Some(t.path().join("b")),
            ..Default::default()
        })
        .unwrap();
        assert!((r.mean.psnr.unwrap() - 10.0 * 25f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn mask_sets_and_regions() {
        let t = tempfile::tempdir().unwrap();
        for d in ["p", "g", "m"] {
            std::fs::create_dir_all(t.path().join(d)).unwrap();
        }
        let m = Mask2D::from_fn(8, 8, |x, _| x < 4);
        let half = Mask2D::from_fn(8, 8, |x, _| x < 2);
        write_mask_png(&m, t.path().join("p/a.png")).unwrap();
        write_mask_png(&m, t.path().join("g/a.png")).unwrap();
        write_mask_png(&half, t.path().join("p/b.png")).unwrap();
        write_mask_png(&m, t.path().join("g/b.png")).unwrap();
        let r = evaluate(&EvalInputs {
            pred_masks: Some(t.path().join("p")),
            gt_masks: Some(t.path().join("g")),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(r.views[0].metrics.iou, Some(1.0));
        assert_eq!(r.views[1].metrics.iou, Some(0.5));
        assert_eq!(r.views[1].metrics.accuracy, Some(0.75));
        assert_eq!(r.mean.iou, Some(0.75));

        std::fs::remove_file(t.path().join("g/b.png")).unwrap();
        let err = evaluate(&EvalInputs {
            pred_masks: Some(t.path().join("p")),
            gt_masks: Some(t.path().join("g")),
            ..Default::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("has 2 images but"), "{err}");
    }
}
