mod common;

use fogroute::fogsim::{invert_haze, synthesize_haze, AtmosphericLight};
use fogroute::hden::{classify_level, estimate_density, fit_head, extract_features, FogLevel, HazeDensityScore, HdenParams, RoutingThresholds};
use fogroute::image::{RgbImage, TransmissionMap, T_FLOOR};
use fogroute::losses::{adaptive_loss, GammaSchedule, PerceptualWeights};
use proptest::prelude::*;

fn image(side: usize) -> impl Strategy<Value = RgbImage> {
    prop::collection::vec(0.0f64..=1.0, side * side * 3).prop_map(move |d| RgbImage::new(side, side, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn haze_round_trip(j in image(16), t in prop::collection::vec(T_FLOOR..=1.0, 256), a in 0.5f64..=1.0) {
        let t = TransmissionMap::new(16, 16, t).unwrap();
        let a = AtmosphericLight::gray(a).unwrap();
        let p = synthesize_haze(&j, &t, a).unwrap();
        let back = invert_haze(&p, &t, a).unwrap();
        for (x, y) in back.data().iter().zip(j.data()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn density_stays_in_unit_interval(img in image(16), params in prop::collection::vec(-20.0f64..20.0, HdenParams::N_PARAMS)) {
        let d = estimate_density(&img, &HdenParams::from_flat(&params)).unwrap().value();
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn levels_are_monotone_in_density(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let thr = RoutingThresholds::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let l = classify_level(HazeDensityScore::new(lo).unwrap(), &thr).index();
        let h = classify_level(HazeDensityScore::new(hi).unwrap(), &thr).index();
        prop_assert!(l <= h);
    }

    #[test]
    fn loss_total_is_the_weighted_sum(j in image(16), gt in image(16), p in image(16), d in 0.0f64..=1.0) {
        let t = TransmissionMap::filled(16, 16, 0.6).unwrap();
        let r = adaptive_loss(
            &j, &t, &gt, &p, HazeDensityScore::new(d).unwrap(),
            &GammaSchedule::default(), &PerceptualWeights::default(), &HdenParams::zeros(),
        ).unwrap();
        prop_assert!(r.coh >= 0.0 && r.contra_rec >= 0.0 && (0.0..=1.0).contains(&r.dens));
        prop_assert!((r.total - (r.gamma * r.coh + (1.0 - r.gamma) * r.contra_rec + r.dens)).abs() <= 1e-12);
    }

    #[test]
    fn features_ignore_mirroring_of_global_stats(img in image(16)) {
        let a = extract_features(&img).unwrap();
        let b = extract_features(&img.flip_horizontal()).unwrap();
        prop_assert!((a.mean_saturation - b.mean_saturation).abs() < 1e-12);
        prop_assert!((a.rms_contrast - b.rms_contrast).abs() < 1e-12);
        prop_assert!((a.airlight_proximity - b.airlight_proximity).abs() < 1e-12);
    }
}

#[test]
fn trained_head_orders_fog_levels_on_one_scene() {
    let tmp = tempfile::TempDir::new().unwrap();
    let m = common::dataset(&tmp.path().join("d"), 30, 64, 41);
    let feats = fogroute::hden::manifest_features(&m).unwrap();
    let (hden, report) = fit_head(&feats, &feats, 200, 2.0, 0).unwrap();
    assert!(report.epochs.windows(2).all(|w| w[1].train_loss <= w[0].train_loss));
    assert!(report.epochs.last().unwrap().val_accuracy >= 0.95);
    for seed in 0..5 {
        let light = common::fogged(64, 900 + seed, 0.03);
        let heavy = common::fogged(64, 900 + seed, 0.09);
        let dl = estimate_density(&light.hazy, &hden).unwrap();
        let dh = estimate_density(&heavy.hazy, &hden).unwrap();
        assert!(dl.value() < dh.value());
        assert_eq!(classify_level(dl, &RoutingThresholds::default()), FogLevel::Light);
    }
}
