//! Config-driven stage runner: register → mesh → features → scene.
//!
//! Every stage writes a stamp under `<output>/.histo3d/` when it finishes.
//! A stage is skipped when its stamp is at least as new as every input file
//! and its outputs are still present.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::features::{compute_level, read_table, table_path, write_level, FeatureParams, Level};
use crate::meshgen::{build_models, load_geometry, write_models, MeshParams};
use crate::registration::{register_stack_detailed, write_registration, RegistrationParams};
use crate::scene::{
    colormaps, colormaps_path, crop_tumor_patches, export_feature_patch_images, feature_patch_dir,
    save_tumor_patches, tumor_entry, tumor_patch_dir, write_bundle, write_colormaps,
};
use crate::stack_io::{load_stack, load_stack_dir, StackMetadata, TumorId};

pub const THREADS_ENV: &str = "HISTO3D_THREADS";

/// One sample's pipeline. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub sample_id: String,
    /// Input stack root.
    pub stack: PathBuf,
    /// Bundle root; intermediate results live here too.
    pub output: PathBuf,
    /// Overrides `<stack>/stack.json` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<StackMetadata>,
    #[serde(default)]
    pub registration: RegistrationParams,
    #[serde(default)]
    pub mesh: MeshParams,
    #[serde(default)]
    pub features: FeatureParams,
}

impl PipelineConfig {
    /// Parses and validates; every problem is reported as [`Error::Config`].
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let config_err = |reason: String| Error::Config {
            path: path.to_path_buf(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| config_err(e.to_string()))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut config: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let at = e.path().to_string();
            let inner = e.into_inner();
            if at == "." {
                config_err(inner.to_string())
            } else {
                config_err(format!("{at}: {inner}"))
            }
        })?;
        config.validate().map_err(|e| config_err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.stack = base.join(&config.stack);
        config.output = base.join(&config.output);
        Ok(config)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.sample_id.trim().is_empty() {
            return Err("sample_id: must not be empty".into());
        }
        let section = |name: &str, r: Result<()>| r.map_err(|e| format!("{name}: {e}"));
        if let Some(m) = &self.metadata {
            section("metadata", m.validate())?;
        }
        section("registration", self.registration.validate())?;
        section("mesh", self.mesh.validate())?;
        section("features", self.features.validate())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        crate::stack_io::write_text(path, &(json + "\n"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Register,
    Mesh,
    Features,
    Scene,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Register, Stage::Mesh, Stage::Features, Stage::Scene];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Register => "register",
            Stage::Mesh => "mesh",
            Stage::Features => "features",
            Stage::Scene => "scene",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| format!("unknown stage {s:?} (expected register, mesh, features or scene)"))
    }
}

/// Comma-separated stage list, returned in pipeline order without duplicates.
pub fn parse_stages(list: &str) -> std::result::Result<Vec<Stage>, String> {
    let mut stages = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Stage::from_str)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if stages.is_empty() {
        return Err("no stages given".into());
    }
    stages.sort_unstable();
    stages.dedup();
    Ok(stages)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub ran: bool,
    pub seconds: f64,
}

pub fn registered_dir(output: &Path) -> PathBuf {
    output.join("registered")
}

fn stamp_path(output: &Path, stage: Stage) -> PathBuf {
    output.join(".histo3d").join(format!("{}.stamp", stage.name()))
}

fn mtime(path: &Path) -> Option<SystemTime> {
    std::fs::metadata(path).and_then(|m| m.modified()).ok()
}

/// Newest modification time of any file under the given paths.
fn newest(paths: &[PathBuf]) -> Option<SystemTime> {
    paths
        .iter()
        .flat_map(|p| WalkDir::new(p).into_iter().filter_map(|e| e.ok()))
        .filter(|e| e.file_type().is_file())
        .filter_map(|e| e.metadata().ok()?.modified().ok())
        .max()
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub config_path: PathBuf,
    pub force: bool,
}

impl Pipeline {
    pub fn new(config_path: &Path, force: bool) -> Result<Pipeline> {
        Ok(Pipeline {
            config: PipelineConfig::load(config_path)?,
            config_path: config_path.to_path_buf(),
            force,
        })
    }

    fn out(&self) -> &Path {
        &self.config.output
    }

    fn inputs(&self, stage: Stage) -> Vec<PathBuf> {
        let o = self.out();
        let mut v = vec![self.config_path.clone()];
        match stage {
            Stage::Register => v.push(self.config.stack.clone()),
            Stage::Mesh => v.push(registered_dir(o)),
            Stage::Features => v.extend([registered_dir(o), o.join("models")]),
            Stage::Scene => v.extend([registered_dir(o), o.join("models"), o.join("features")]),
        }
        v
    }

    fn outputs(&self, stage: Stage) -> Vec<PathBuf> {
        let o = self.out();
        match stage {
            Stage::Register => vec![registered_dir(o).join("stack.json")],
            Stage::Mesh => vec![crate::meshgen::organ_mesh_path(o), crate::meshgen::geometry_path(o)],
            Stage::Features => vec![o.join("features").join("organ")],
            Stage::Scene => vec![crate::scene::bundle_path(o), colormaps_path(o), o.join("patches")],
        }
    }

    /// Whether the stage's stamp is current and its outputs exist.
    pub fn is_fresh(&self, stage: Stage) -> bool {
        let Some(stamp) = mtime(&stamp_path(self.out(), stage)) else {
            return false;
        };
        if !self.outputs(stage).iter().all(|p| p.exists()) {
            return false;
        }
        newest(&self.inputs(stage)).is_none_or(|t| t <= stamp)
    }

    /// Runs the requested stages in pipeline order. Stops at the first failure;
    /// outputs of completed stages stay on disk.
    pub fn run(&self, stages: &[Stage]) -> Result<Vec<StageOutcome>> {
        let mut stages = stages.to_vec();
        stages.sort_unstable();
        stages.dedup();
        let mut outcomes = Vec::new();
        for stage in stages {
            if !self.force && self.is_fresh(stage) {
                log::info!("stage={stage} status=skipped reason=up-to-date");
                outcomes.push(StageOutcome {
                    stage,
                    ran: false,
                    seconds: 0.0,
                });
                continue;
            }
            log::info!("stage={stage} status=started");
            let start = Instant::now();
            let result = match stage {
                Stage::Register => self.register(),
                Stage::Mesh => self.mesh(),
                Stage::Features => self.features(),
                Stage::Scene => self.scene(),
            };
            let seconds = start.elapsed().as_secs_f64();
            if let Err(e) = result {
                log::error!("stage={stage} status=failed elapsed_s={seconds:.3} error=\"{e}\"");
                return Err(e);
            }
            crate::stack_io::write_text(&stamp_path(self.out(), stage), &format!("{stage}\n"))?;
            log::info!("stage={stage} status=done elapsed_s={seconds:.3}");
            outcomes.push(StageOutcome {
                stage,
                ran: true,
                seconds,
            });
        }
        Ok(outcomes)
    }

    fn clear(&self, path: &Path) -> Result<()> {
        match std::fs::remove_dir_all(path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    fn registered(&self) -> Result<crate::stack_io::SectionStack> {
        let dir = registered_dir(self.out());
        if !dir.join("stack.json").is_file() {
            return Err(Error::Stage(format!("registration outputs missing under {}", dir.display())));
        }
        load_stack_dir(&dir)
    }

    fn geometry(&self) -> Result<crate::meshgen::GeometryFile> {
        let path = crate::meshgen::geometry_path(self.out());
        if !path.is_file() {
            return Err(Error::Stage(format!("mesh outputs missing: {}", path.display())));
        }
        load_geometry(self.out())
    }

    fn register(&self) -> Result<()> {
        let metadata = match self.config.metadata {
            Some(m) => m,
            None => StackMetadata::load(&self.config.stack.join("stack.json"))?,
        };
        let stack = load_stack(&self.config.stack, metadata)?;
        let reg = register_stack_detailed(&stack, &self.config.registration)?;
        log::info!(
            "stage=register sections={} iterations={} converged={}",
            reg.stack.sections.len(),
            reg.relaxation.iterations,
            reg.relaxation.converged
        );
        self.clear(&registered_dir(self.out()))?;
        write_registration(self.out(), &reg)
    }

    fn mesh(&self) -> Result<()> {
        let stack = self.registered()?;
        let models = build_models(&stack, &self.config.mesh)?;
        self.clear(&self.out().join("models"))?;
        write_models(self.out(), &models)
    }

    fn features(&self) -> Result<()> {
        let stack = self.registered()?;
        let geometry = self.geometry()?;
        let params = &self.config.features;
        let root = self.out();
        self.clear(&root.join("features"))?;
        let levels = std::iter::once(Level::Organ).chain(stack.tumor_ids().into_iter().map(Level::Tumor));
        for level in levels {
            let records = compute_level(&stack, level, params)?;
            if records.is_empty() {
                match level {
                    Level::Organ => return Err(Error::Stage("no organ patch passed the tissue filter".into())),
                    Level::Tumor(id) => {
                        log::warn!("stage=features tumor={id} patches=0 (tumor smaller than tumor_patch); skipped");
                        continue;
                    }
                }
            }
            log::info!("stage=features level={level:?} patches={}", records.len());
            write_level(&level.dir(root), &records, &geometry.mask_space, &geometry.organ.mask_to_model)?;
        }
        Ok(())
    }

    /// Feature levels present on disk, organ first.
    fn feature_levels(&self) -> Result<Vec<Level>> {
        let root = self.out();
        if !Level::Organ.dir(root).is_dir() {
            return Err(Error::Stage("feature outputs missing".into()));
        }
        let mut ids: Vec<TumorId> = Vec::new();
        if let Ok(entries) = std::fs::read_dir(root.join("features").join("tumor")) {
            for e in entries.flatten() {
                if let Some(id) = e.file_name().to_str().and_then(|s| s.parse().ok()) {
                    ids.push(id);
                }
            }
        }
        ids.sort_unstable();
        Ok(std::iter::once(Level::Organ).chain(ids.into_iter().map(Level::Tumor)).collect())
    }

    fn scene(&self) -> Result<()> {
        let stack = self.registered()?;
        let geometry = self.geometry()?;
        let levels = self.feature_levels()?;
        let root = self.out();
        self.clear(&root.join("patches"))?;
        write_colormaps(&colormaps_path(root), &colormaps())?;
        let first = crate::features::feature_names().remove(0);
        for &level in &levels {
            let table = read_table(&table_path(&level.dir(root), &first))?;
            let indices: Vec<u64> = table.instances.iter().map(|i| i.index).collect();
            export_feature_patch_images(
                &stack,
                level.patch_size(&self.config.features),
                &indices,
                &feature_patch_dir(root, level),
            )?;
        }
        let mut tumors = Vec::new();
        for &id in geometry.tumors.keys() {
            let patches = crop_tumor_patches(&stack, id)?;
            save_tumor_patches(&tumor_patch_dir(root, id), &patches)?;
            tumors.push(tumor_entry(root, &patches, &geometry));
        }
        let bundle = write_bundle(root, &self.config.sample_id, tumors, &levels)?;
        log::info!(
            "stage=scene tumors={} feature_tables={}",
            bundle.tumors.len(),
            bundle.features.organ.len() + bundle.features.tumor.len()
        );
        Ok(())
    }
}

/// Caps the global worker pool from `HISTO3D_THREADS`. Returns the cap in effect.
pub fn configure_threads() -> Result<Option<usize>> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::param("HISTO3D_THREADS", format!("{value:?} is not a positive integer")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Stage(format!("thread pool: {e}")))?;
    Ok(Some(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_parse_in_pipeline_order() {
        assert_eq!(
            parse_stages("scene, mesh,register,mesh").unwrap(),
            vec![Stage::Register, Stage::Mesh, Stage::Scene]
        );
        assert!(parse_stages("mesh,paint").is_err());
        assert!(parse_stages(" , ").is_err());
    }

    #[test]
    fn config_errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let cases = [
            (r#"{"sample_id":"a","stack":"s","output":"o","registraton":{}}"#, "registraton"),
            (r#"{"sample_id":"a","stack":"s","output":"o","registration":{"step":0.1}}"#, "step"),
            (r#"{"sample_id":"a","stack":"s","output":"o","registration":{"max_iters":"many"}}"#, "registration.max_iters"),
            (r#"{"sample_id":"a","stack":"s","output":"o","features":{"min_tissue_fraction":2}}"#, "min_tissue_fraction"),
            (r#"{"sample_id":"a","output":"o"}"#, "stack"),
            (r#"{"sample_id":"a","stack":"s","output":"o","mesh":{"organ_fraction":0}}"#, "organ_fraction"),
        ];
        for (text, field) in cases {
            std::fs::write(&path, text).unwrap();
            match PipelineConfig::load(&path) {
                Err(Error::Config { reason, .. }) => assert!(reason.contains(field), "{reason}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"sample_id":"a","stack":"in","output":"out"}"#).unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.stack, dir.path().join("in"));
        assert_eq!(c.registration, RegistrationParams::default());
    }

    #[test]
    fn later_stages_need_registration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"sample_id":"a","stack":"in","output":"out"}"#).unwrap();
        let p = Pipeline::new(&path, false).unwrap();
        let err = p.run(&[Stage::Mesh]).unwrap_err();
        assert!(err.to_string().contains("registration outputs missing"), "{err}");
    }
}
