//! Model spec files: a small TOML schema mirroring the preset tables, plus
//! name-or-path resolution for the CLI.

use std::path::Path;

use aewin_core::model::ModelSpec;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// On-disk schema. `window` applies to all four stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecFile {
    pub name: String,
    pub dims: [usize; 4],
    pub depths: [usize; 4],
    pub heads: [usize; 4],
    pub window: usize,
    pub patch_size: usize,
    pub num_classes: usize,
    pub mlp_ratio: usize,
}

impl SpecFile {
    pub fn into_model_spec(self) -> Result<ModelSpec> {
        let mut spec = ModelSpec::from_arrays(
            &self.name,
            self.dims,
            self.depths,
            self.heads,
            self.window,
            self.num_classes,
        );
        spec.patch_size = self.patch_size;
        spec.mlp_ratio = self.mlp_ratio;
        spec.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(spec)
    }

    pub fn from_model_spec(spec: &ModelSpec) -> Self {
        SpecFile {
            name: spec.name.clone(),
            dims: core::array::from_fn(|i| spec.stages[i].dim),
            depths: core::array::from_fn(|i| spec.stages[i].depth),
            heads: core::array::from_fn(|i| spec.stages[i].heads),
            window: spec.stages[0].window,
            patch_size: spec.patch_size,
            num_classes: spec.num_classes,
            mlp_ratio: spec.mlp_ratio,
        }
    }
}

/// Accepts a preset name (`aewin-t`, `aewin-b`, `aewin-toy`) or a path to a
/// TOML spec file.
pub fn resolve_spec(arg: &str) -> Result<ModelSpec> {
    if let Some(spec) = ModelSpec::preset(arg) {
        return Ok(spec);
    }
    let path = Path::new(arg);
    if !path.exists() {
        bail!("{arg} is neither a preset (aewin-t, aewin-b, aewin-toy) nor a spec file");
    }
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: SpecFile =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    file.into_model_spec()
}

pub fn write_spec(path: &Path, spec: &ModelSpec) -> Result<()> {
    let text = toml::to_string_pretty(&SpecFile::from_model_spec(spec))?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve_by_name() {
        assert_eq!(resolve_spec("aewin-t").unwrap().name, "aewin-t");
        assert_eq!(resolve_spec("aewin-toy").unwrap().stages[0].dim, 8);
        assert!(resolve_spec("aewin-q").is_err());
    }

    #[test]
    fn spec_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("custom.toml");
        let mut spec = ModelSpec::aewin_toy();
        spec.name = "custom".into();
        write_spec(&path, &spec).unwrap();
        let back = resolve_spec(path.to_str().unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn invalid_spec_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(
            &path,
            r#"
name = "bad"
dims = [8, 16, 32, 65]
depths = [1, 1, 1, 1]
heads = [4, 4, 4, 4]
window = 2
patch_size = 4
num_classes = 3
mlp_ratio = 4
"#,
        )
        .unwrap();
        assert!(resolve_spec(path.to_str().unwrap()).is_err());
    }
}
