//! Scene parsing (KITTI formats), synthetic scene generation with the same
//! schema, and per-object preprocessing.

mod kitti;
pub mod ppm;
mod samples;
pub mod synth;

pub use kitti::{
    box3d_to_cam, format_label_line, label_to_box3d, labeled_box_to_label, list_scene_ids,
    load_kitti_scene, load_velodyne, parse_calib, parse_label_line, parse_labels, parse_velodyne,
    save_calib, save_kitti_label, save_scene, save_velodyne, KittiLabel, LabelMeta, LabeledBox,
    Scene,
};
pub use samples::{
    assign_difficulty, build_object_samples, crop_to_image, image_to_crop, Difficulty,
    ObjectSample, SampleConfig, SkipRecord,
};
pub use synth::{generate_dataset, generate_synthetic_scene, SynthConfig, SynthScene};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dataset manifest: split ids, seed, and (after prepare) filter counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub scene_ids: Vec<String>,
    pub train_ids: Vec<String>,
    pub eval_ids: Vec<String>,
    /// Seed-shuffled labeled-training subset (at most 500 ids).
    pub train_subset: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_counts: Option<FilterCounts>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FilterCounts {
    pub total_objects: usize,
    pub kept: usize,
    pub skipped: usize,
    /// Reason -> count.
    pub reasons: BTreeMap<String, usize>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(Error::io_at(path))
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(Error::io_at(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}
