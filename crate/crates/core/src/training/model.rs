//! Full-pipeline model assembly with per-stage freezing and partial
//! checkpoint loading.

use std::cell::RefCell;
use std::path::Path;
use std::rc::Rc;
use std::str::FromStr;

use crate::autodiff::{load_entries, save_entries, CkptEntry, ParamBuilder, ParamSet};
use crate::boxreg::BoxRegressor;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::pointgen::PointGenNet;
use crate::segmentation::{ImageSegNet, PointSegNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Seg,
    Gen,
    Box,
}

impl Stage {
    pub fn prefix(self) -> &'static str {
        match self {
            Stage::Seg => "seg.",
            Stage::Gen => "gen.",
            Stage::Box => "box.",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Seg => "seg",
            Stage::Gen => "gen",
            Stage::Box => "box",
        }
    }

    /// Stages whose parameters must exist in the input checkpoint.
    pub fn prerequisites(self, generation: bool) -> Vec<Stage> {
        match self {
            Stage::Seg => vec![],
            Stage::Gen => vec![Stage::Seg],
            Stage::Box => {
                if generation {
                    vec![Stage::Seg, Stage::Gen]
                } else {
                    vec![Stage::Seg]
                }
            }
        }
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Stage> {
        match s {
            "seg" => Ok(Stage::Seg),
            "gen" => Ok(Stage::Gen),
            "box" => Ok(Stage::Box),
            other => Err(Error::Config(format!(
                "unknown stage {other:?} (expected seg|gen|box)"
            ))),
        }
    }
}

/// All networks sharing one parameter registry. The generator is absent
/// under the no-generation ablation.
pub struct Model {
    pub cfg: PipelineConfig,
    pub params: Rc<RefCell<ParamSet>>,
    pub point_seg: PointSegNet,
    pub image_seg: ImageSegNet,
    pub gen: Option<PointGenNet>,
    pub boxreg: BoxRegressor,
}

impl Model {
    /// Build with only `trainable`'s parameters taking gradients (None =
    /// everything frozen, for inference).
    pub fn new(cfg: &PipelineConfig, trainable: Option<Stage>) -> Result<Model> {
        cfg.validate()?;
        let params = ParamSet::shared();
        let builder = match trainable {
            Some(stage) => ParamBuilder::with_trainable(&params, cfg.seed, &[stage.prefix()]),
            None => ParamBuilder::with_trainable(&params, cfg.seed, &[]),
        };
        let point_seg = PointSegNet::new(&builder, cfg);
        let image_seg = ImageSegNet::new(&builder, cfg);
        let gen = cfg.generation.then(|| PointGenNet::new(&builder, cfg));
        let boxreg = BoxRegressor::new(&builder, cfg);
        // normalization scale declared in every checkpoint so downstream
        // labels stay frame-consistent
        builder.full("meta.coord_scale", &[], cfg.coord_scale);
        Ok(Model {
            cfg: cfg.clone(),
            params,
            point_seg,
            image_seg,
            gen,
            boxreg,
        })
    }

    /// Save the parameters belonging to the given prefixes (plus meta).
    pub fn save_prefixes(&self, path: &Path, prefixes: &[&str]) -> Result<()> {
        let set = self.params.borrow();
        let entries: Vec<CkptEntry> = set
            .iter()
            .filter(|p| {
                p.name.starts_with("meta.") || prefixes.iter().any(|pre| p.name.starts_with(pre))
            })
            .map(|p| CkptEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                data: p.tensor.to_vec(),
            })
            .collect();
        save_entries(path, &entries)
    }

    /// Copy matching values from a checkpoint. Every file entry must exist
    /// in the model (same shape); model parameters absent from the file
    /// keep their seed-keyed initialization.
    pub fn load_partial(&self, path: &Path) -> Result<Vec<String>> {
        let entries = load_entries(path)?;
        let set = self.params.borrow();
        let mut loaded = Vec::new();
        for e in &entries {
            let Some(t) = set.get(&e.name) else {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    msg: format!("unexpected parameter {:?} (config mismatch?)", e.name),
                });
            };
            if t.shape() != e.shape.as_slice() {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    msg: format!(
                        "{}: shape {:?} in file vs {:?} in model",
                        e.name,
                        e.shape,
                        t.shape()
                    ),
                });
            }
            t.set_data(&e.data);
            loaded.push(e.name.clone());
        }
        Ok(loaded)
    }

    /// Check that a checkpoint carries every prerequisite stage for
    /// `stage`, then load it.
    pub fn load_for_stage(&self, path: &Path, stage: Stage) -> Result<()> {
        let required = stage.prerequisites(self.cfg.generation);
        if required.is_empty() {
            return Ok(());
        }
        let entries = load_entries(path)?;
        for pre in &required {
            if !entries.iter().any(|e| e.name.starts_with(pre.prefix())) {
                return Err(Error::StageDependency {
                    stage: stage.name().into(),
                    missing: pre.name().into(),
                });
            }
        }
        self.load_partial(path)?;
        Ok(())
    }

    /// Checkpoint prefixes produced by running `stage` (cumulative).
    pub fn output_prefixes(&self, stage: Stage) -> Vec<&'static str> {
        match stage {
            Stage::Seg => vec!["seg."],
            Stage::Gen => vec!["seg.", "gen."],
            Stage::Box => {
                if self.cfg.generation {
                    vec!["seg.", "gen.", "box."]
                } else {
                    vec!["seg.", "box."]
                }
            }
        }
    }
}
