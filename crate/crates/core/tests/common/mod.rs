#![allow(dead_code)]

use std::path::Path;

use dxprompt_core::dataset::synth::{synth_generate, write_synth, SynthConfig, SynthData};
use dxprompt_core::dataset::{build_dataset, read_chartevents_file, read_image_index, read_labels, BuildConfig, VqaDataset};

/// Generate, write and build a synthetic dataset under `dir`.
pub fn fixture(dir: &Path, synth: &SynthConfig, build: &BuildConfig) -> (SynthData, VqaDataset) {
    let data = synth_generate(synth).unwrap();
    let paths = write_synth(&data, dir).unwrap();
    let ingested = read_chartevents_file(&paths.chartevents).unwrap();
    assert!(ingested.malformed.is_empty());
    let labels = read_labels(&paths.labels).unwrap();
    let images = read_image_index(&paths.images).unwrap();
    let ds = build_dataset(&ingested.matrix, &labels, &images, build).unwrap();
    (data, ds)
}

pub fn default_fixture(dir: &Path) -> (SynthData, VqaDataset) {
    fixture(dir, &SynthConfig { seed: 7, ..Default::default() }, &BuildConfig::default())
}
