use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

fn one() -> u32 {
    SCHEMA_VERSION
}

/// Dataset index. Paths are relative to `root`, which is itself relative to
/// the manifest file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "one")]
    pub schema_version: u32,
    #[serde(default)]
    pub root: PathBuf,
    pub frames: Vec<FrameEntry>,
    #[serde(default)]
    pub objects: BTreeMap<String, ObjectEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub id: String,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub label: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub mesh: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<PathBuf>,
    pub diameter: f64,
    #[serde(default)]
    pub symmetric: bool,
}

/// A manifest with its root resolved and every referenced file checked.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub root: PathBuf,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: Manifest = simpose::io::read_json(path)?;
        if manifest.schema_version > SCHEMA_VERSION {
            bail!(
                "{}: manifest schema_version {} is newer than supported {}",
                path.display(),
                manifest.schema_version,
                SCHEMA_VERSION
            );
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let root = base.join(&manifest.root);
        let ds = Dataset { manifest, root };
        ds.check().with_context(|| format!("invalid manifest {}", path.display()))?;
        Ok(ds)
    }

    fn check(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for f in &self.manifest.frames {
            if !ids.insert(&f.id) {
                bail!("duplicate frame id {:?}", f.id);
            }
            for p in [Some(&f.rgb), Some(&f.depth), Some(&f.label), f.mask.as_ref()].into_iter().flatten() {
                self.require(p)?;
            }
        }
        for (id, o) in &self.manifest.objects {
            if !(o.diameter > 0.0 && o.diameter.is_finite()) {
                bail!("object {id:?}: diameter must be > 0");
            }
            self.require(&o.mesh)?;
            if let Some(k) = &o.keypoints {
                self.require(k)?;
            }
        }
        Ok(())
    }

    fn require(&self, p: &Path) -> Result<()> {
        let full = self.path(p);
        if !full.is_file() {
            bail!("referenced file {} does not exist", full.display());
        }
        Ok(())
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    pub fn frames(&self) -> &[FrameEntry] {
        &self.manifest.frames
    }

    pub fn object(&self, id: &str) -> Result<&ObjectEntry> {
        self.manifest
            .objects
            .get(id)
            .with_context(|| format!("object {id:?} not in manifest registry"))
    }
}

/// Frame ids made safe for use as file names.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}
