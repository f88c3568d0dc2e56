use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{load_module, save_module, Extractor, Head, ModuleArch, ModuleId, ModuleSidecar, Stage};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::models::{FrozenExtractor, FrozenProjection, FusedModel, SingleDetector, UpperBoundModel};
use super::ops::{Projection, PROJECTION_KERNEL};
use super::train::{Stage1Output, Stage2Output};

pub const STAGE1_DIR: &str = "stage1";
pub const STAGE2_DIR: &str = "stage2";
pub const STAGE3_DIR: &str = "stage3";
pub const UB_DIR: &str = "upper_bound";

const BUNDLE_FILE: &str = "bundle.json";

/// Digest record written next to the modules of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub stage: Stage,
    /// Module name to parameter digest.
    pub modules: BTreeMap<String, String>,
    /// Digests of frozen inputs from earlier stages.
    pub upstream: BTreeMap<String, String>,
}

impl BundleManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(BUNDLE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(BUNDLE_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn record(modules: &mut BTreeMap<String, String>, side: ModuleSidecar) {
    modules.insert(side.name, side.parameter_digest);
}

fn save_extractor<T: Scalar>(
    dir: &Path,
    name: &str,
    stage: Stage,
    id: ModuleId,
    ex: &Extractor<T>,
) -> Result<ModuleSidecar> {
    save_module(dir, name, stage, id, ModuleArch::Extractor(ex.config().clone()), ex)
}

fn save_head<T: Scalar>(dir: &Path, name: &str, stage: Stage, head: &Head<T>) -> Result<ModuleSidecar> {
    save_module(dir, name, stage, ModuleId::Head, ModuleArch::Head(*head.config()), head)
}

fn save_projection<T: Scalar>(dir: &Path, stage: Stage, p: &Projection<T>) -> Result<ModuleSidecar> {
    let arch = ModuleArch::Projection {
        channels: p.channels(),
        kernel: PROJECTION_KERNEL,
    };
    save_module(dir, "projection", stage, ModuleId::Projection, arch, p)
}

fn load_extractor<T: Scalar>(dir: &Path, name: &str) -> Result<(Extractor<T>, ModuleSidecar)> {
    let side = ModuleSidecar::read(dir, name)?;
    let ModuleArch::Extractor(cfg) = &side.architecture else {
        return Err(Error::Input(format!("{name} is not an extractor checkpoint")));
    };
    let mut ex = Extractor::zeroed(cfg.clone())?;
    let side = load_module(dir, name, &side.architecture, &mut ex)?;
    Ok((ex, side))
}

fn load_head<T: Scalar>(dir: &Path, name: &str) -> Result<(Head<T>, ModuleSidecar)> {
    let side = ModuleSidecar::read(dir, name)?;
    let ModuleArch::Head(cfg) = &side.architecture else {
        return Err(Error::Input(format!("{name} is not a head checkpoint")));
    };
    let mut head = Head::zeroed(*cfg)?;
    let side = load_module(dir, name, &side.architecture, &mut head)?;
    Ok((head, side))
}

fn load_projection<T: Scalar>(dir: &Path) -> Result<(Projection<T>, ModuleSidecar)> {
    let side = ModuleSidecar::read(dir, "projection")?;
    let ModuleArch::Projection { channels, kernel } = side.architecture else {
        return Err(Error::Input("projection checkpoint has the wrong architecture".into()));
    };
    if kernel != PROJECTION_KERNEL {
        return Err(Error::Input(format!("projection kernel {kernel} is unsupported")));
    }
    let mut p = Projection::zeroed(channels);
    let side = load_module(dir, "projection", &side.architecture, &mut p)?;
    Ok((p, side))
}

fn expect_stage(side: &ModuleSidecar, stage: Stage) -> Result<()> {
    if side.stage != stage {
        return Err(Error::Contract(format!(
            "{} is tagged stage {}, expected {stage}",
            side.name, side.stage
        )));
    }
    Ok(())
}

/// Writes A, head_A, C and head_C.
pub fn save_single_pair<T: Scalar>(dir: &Path, out: &Stage1Output<T>) -> Result<BundleManifest> {
    let mut modules = BTreeMap::new();
    record(
        &mut modules,
        save_extractor(dir, "A", Stage::I, ModuleId::A, &out.sm.extractor)?,
    );
    record(&mut modules, save_head(dir, "head_A", Stage::I, &out.sm.head)?);
    record(
        &mut modules,
        save_extractor(dir, "C", Stage::I, ModuleId::C, &out.ffdm.extractor)?,
    );
    record(&mut modules, save_head(dir, "head_C", Stage::I, &out.ffdm.head)?);
    let manifest = BundleManifest {
        stage: Stage::I,
        modules,
        upstream: BTreeMap::new(),
    };
    manifest.save(dir)?;
    Ok(manifest)
}

/// Loads an extractor and its head; the stage tag comes from the sidecar.
pub fn load_single<T: Scalar>(dir: &Path, extractor: &str, head: &str) -> Result<SingleDetector<T>> {
    let (ex, side) = load_extractor(dir, extractor)?;
    let (head, _) = load_head(dir, head)?;
    Ok(SingleDetector {
        stage: side.stage,
        extractor: ex,
        head,
    })
}

pub fn save_stage2<T: Scalar>(dir: &Path, out: &Stage2Output<T>) -> Result<BundleManifest> {
    let mut modules = BTreeMap::new();
    record(
        &mut modules,
        save_extractor(dir, "B", Stage::II, ModuleId::B, out.b.extractor())?,
    );
    record(
        &mut modules,
        save_projection(dir, Stage::II, out.projection.projection())?,
    );
    let manifest = BundleManifest {
        stage: Stage::II,
        modules,
        upstream: BTreeMap::from([("C".to_string(), out.c_digest.clone())]),
    };
    manifest.save(dir)?;
    Ok(manifest)
}

pub fn load_stage2<T: Scalar>(dir: &Path) -> Result<(FrozenExtractor<T>, FrozenProjection<T>)> {
    let (b, side_b) = load_extractor(dir, "B")?;
    expect_stage(&side_b, Stage::II)?;
    let (p, side_p) = load_projection(dir)?;
    expect_stage(&side_p, Stage::II)?;
    Ok((FrozenExtractor::freeze(b), FrozenProjection::freeze(p)))
}

/// Writes A (fine-tuned), B, projection and head_fused. `c_digest` is the
/// teacher digest carried over from stage II.
pub fn save_fused<T: Scalar>(dir: &Path, model: &FusedModel<T>, c_digest: &str) -> Result<BundleManifest> {
    let mut modules = BTreeMap::new();
    record(
        &mut modules,
        save_extractor(dir, "A", Stage::III, ModuleId::A, &model.a)?,
    );
    record(
        &mut modules,
        save_extractor(dir, "B", Stage::III, ModuleId::B, model.b.extractor())?,
    );
    record(
        &mut modules,
        save_projection(dir, Stage::III, model.projection.projection())?,
    );
    record(&mut modules, save_head(dir, "head_fused", Stage::III, &model.head)?);
    let upstream = BTreeMap::from([
        ("B".to_string(), model.b.digest().to_string()),
        ("projection".to_string(), model.projection.digest().to_string()),
        ("C".to_string(), c_digest.to_string()),
    ]);
    let manifest = BundleManifest {
        stage: Stage::III,
        modules,
        upstream,
    };
    manifest.save(dir)?;
    Ok(manifest)
}

/// Loads the fused model. Reads nothing outside `dir`; in particular the
/// F-side extractor is never touched.
pub fn load_fused<T: Scalar>(dir: &Path) -> Result<FusedModel<T>> {
    let manifest = BundleManifest::load(dir)?;
    if manifest.stage != Stage::III {
        return Err(Error::Contract(format!(
            "{} holds a stage {} bundle",
            dir.display(),
            manifest.stage
        )));
    }
    let (a, _) = load_extractor(dir, "A")?;
    let (b, side_b) = load_extractor(dir, "B")?;
    let (p, side_p) = load_projection(dir)?;
    let (head, _) = load_head(dir, "head_fused")?;
    for (side, key) in [(&side_b, "B"), (&side_p, "projection")] {
        if manifest.upstream.get(key) != Some(&side.parameter_digest) {
            return Err(Error::Contract(format!("{key} differs from its stage II digest")));
        }
    }
    Ok(FusedModel {
        a,
        b: FrozenExtractor::freeze(b),
        projection: FrozenProjection::freeze(p),
        head,
    })
}

pub fn save_upper_bound<T: Scalar>(dir: &Path, model: &UpperBoundModel<T>) -> Result<BundleManifest> {
    let mut modules = BTreeMap::new();
    record(
        &mut modules,
        save_extractor(dir, "A", Stage::UB, ModuleId::A, &model.a)?,
    );
    record(
        &mut modules,
        save_extractor(dir, "C", Stage::UB, ModuleId::C, &model.c)?,
    );
    record(&mut modules, save_head(dir, "head_ub", Stage::UB, &model.head)?);
    let manifest = BundleManifest {
        stage: Stage::UB,
        modules,
        upstream: BTreeMap::new(),
    };
    manifest.save(dir)?;
    Ok(manifest)
}

pub fn load_upper_bound<T: Scalar>(dir: &Path) -> Result<UpperBoundModel<T>> {
    let (a, _) = load_extractor(dir, "A")?;
    let (c, _) = load_extractor(dir, "C")?;
    let (head, _) = load_head(dir, "head_ub")?;
    Ok(UpperBoundModel { a, c, head })
}
