use splatedit_core::imaging::psnr_masked;
use splatedit_core::inpainting::{
    finetune, initial_splats, inpaint_scene, prepare_views, prune_with_config, reproject_init, DiffusionInpainter, FinetuneConfig, MsSsimProxy,
    ReprojectionMode,
};
use splatedit_core::renderer::{render, Channels};
use splatedit_core::scene::SplatScene;
use splatedit_core::synth::{generate, SynthScene, SynthSpec};

fn fixture() -> SynthScene<f32> {
    generate::<f32>(&SynthSpec::box_on_holed_plane(3, 8, 80)).unwrap()
}

#[test]
fn masked_psnr_against_empty_scene() {
    let syn = fixture();
    let cfg = FinetuneConfig {
        iterations: 400,
        ..Default::default()
    };
    let out = inpaint_scene(&syn.scene, &syn.target_indices(), &syn.cameras, &DiffusionInpainter::default(), &MsSsimProxy::default(), &cfg, |_, _| {})
        .unwrap();
    assert_eq!(out.views.len(), 8);
    assert_eq!(out.result.scene.len(), out.prune.scene.len() + out.init_count);
    let mut total = 0.0;
    for (_, v) in &out.views {
        let gt = render(&syn.empty_scene, &v.camera, [0.0; 3], Channels::COLOR).unwrap().color_image();
        let r = render(&out.result.scene, &v.camera, [0.0; 3], Channels::COLOR).unwrap().color_image();
        total += psnr_masked(&r, &gt, &v.mask).unwrap();
    }
    let mean = total / out.views.len() as f64;
    assert!(mean >= 25.0, "masked PSNR {mean:.2}");
    // optimization sanity: moving average over 50 steps does not rise
    let l = &out.result.losses;
    let ma: Vec<f64> = l.windows(50).map(|w| w.iter().sum::<f64>() / 50.0).collect();
    assert!(ma.last().unwrap() < &ma[0]);
}

#[test]
fn reprojection_round_trip() {
    let syn = fixture();
    let cfg = FinetuneConfig::default();
    let prune = prune_with_config(&syn.scene, &syn.target_indices(), &cfg).unwrap();
    let views = prepare_views(&syn.scene, &prune, &syn.cameras, &DiffusionInpainter::default(), &cfg).unwrap();
    let (_, v) = &views[0];
    let only_new = SplatScene::from_splats(reproject_init(v, 0, &cfg.reproject_params()), 0).unwrap();
    let f = render(&only_new, &v.camera, [0.0; 3], Channels::DEPTH).unwrap();
    let inside: Vec<usize> = (0..f.depth.len()).filter(|&i| v.mask.data[i] != 0).collect();
    let good = inside
        .iter()
        .filter(|&&i| f.acc_alpha[i] > 0.5 && (f.depth[i] - v.depth.data[i]).abs() <= 0.02 * v.depth.data[i])
        .count();
    assert!(good as f64 >= 0.9 * inside.len() as f64, "{good}/{}", inside.len());
}

#[test]
fn pruning_shrinks_inpainted_area() {
    let syn = fixture();
    let sel = syn.target_indices();
    let area = |prune: bool| {
        let cfg = FinetuneConfig { prune, ..Default::default() };
        let p = prune_with_config(&syn.scene, &sel, &cfg).unwrap();
        let views = prepare_views(&syn.scene, &p, &syn.cameras, &DiffusionInpainter::default(), &cfg).unwrap();
        views.iter().map(|(_, v)| v.mask.count()).sum::<usize>()
    };
    let (with, without) = (area(true), area(false));
    assert!(without > with, "{without} vs {with}");
}

#[test]
fn reprojection_lowers_final_loss() {
    let syn = fixture();
    let cfg = FinetuneConfig {
        iterations: 160,
        ..Default::default()
    };
    let prune = prune_with_config(&syn.scene, &syn.target_indices(), &cfg).unwrap();
    let views = prepare_views(&syn.scene, &prune, &syn.cameras, &DiffusionInpainter::default(), &cfg).unwrap();
    let plain: Vec<_> = views.iter().map(|(_, v)| v.clone()).collect();
    let run = |mode| {
        let c = FinetuneConfig { reprojection: mode, ..cfg.clone() };
        let mut start = prune.scene.clone();
        start.seg = None;
        start.splats.extend(initial_splats(&views, &prune.scene, &c));
        finetune(&start, &plain, &c, &MsSsimProxy::default(), |_, _| {}).unwrap().tail_loss(plain.len())
    };
    let (with, without) = (run(ReprojectionMode::Reference), run(ReprojectionMode::None));
    assert!(without > with, "{without} vs {with}");
}
