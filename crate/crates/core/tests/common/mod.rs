#![allow(dead_code)]

use std::path::Path;

use fogroute::fogsim::{
    compute_transmission, generate_dataset, read_pair_list, synthesize_haze, AirlightMode, AtmosphericLight,
    DatasetManifest, ScatterCoefficient, SynthOptions,
};
use fogroute::image::{RgbImage, TransmissionMap};
use fogroute::scenes::{generate_scene, write_scene_set};

/// Scene set plus hazy dataset (unit airlight, three canonical betas) under `dir`.
pub fn dataset(dir: &Path, scenes: usize, side: usize, seed: u64) -> DatasetManifest {
    let pairs = write_scene_set(dir.join("clear"), scenes, side, side, seed).unwrap();
    let opts = SynthOptions {
        seed,
        meters_per_unit: 1.0,
        airlight: AirlightMode::Fixed(AtmosphericLight::gray(1.0).unwrap()),
        ..Default::default()
    };
    generate_dataset(&read_pair_list(&pairs).unwrap(), dir.join("hazy"), &opts).unwrap()
}

pub struct Fixture {
    pub clear: RgbImage,
    pub t: TransmissionMap,
    pub hazy: RgbImage,
}

/// In-memory scene fogged with unit airlight.
pub fn fogged(side: usize, seed: u64, beta: f64) -> Fixture {
    let s = generate_scene(side, side, seed);
    let t = compute_transmission(&s.depth, ScatterCoefficient::new(beta).unwrap()).unwrap();
    let hazy = synthesize_haze(&s.clear, &t, AtmosphericLight::gray(1.0).unwrap()).unwrap();
    Fixture { clear: s.clear, t, hazy }
}
