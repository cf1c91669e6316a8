//! Scene input resolution shared by subcommands: either explicit `.lrs`
//! paths or a manifest file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use longtile::io::{read_manifest, SceneMeta, SceneReader, SceneSet};

/// Resolves `--scene` / `--manifest` flags into scene metadata.
pub fn resolve(scene_paths: &[PathBuf], manifest: &Option<PathBuf>) -> Result<Vec<SceneMeta>> {
    let metas = match (scene_paths.is_empty(), manifest) {
        (false, None) => scene_paths
            .iter()
            .map(|p| {
                let reader = SceneReader::open(p)
                    .with_context(|| format!("opening scene {}", p.display()))?;
                let h = reader.header();
                Ok(SceneMeta {
                    scene_id: reader.scene_id().to_string(),
                    path: p.clone(),
                    height: h.height,
                    width: h.width,
                    gsd: h.gsd,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        (true, Some(m)) => {
            let metas =
                read_manifest(m).with_context(|| format!("reading manifest {}", m.display()))?;
            if metas.is_empty() {
                bail!("manifest {} lists no scenes", m.display());
            }
            metas
        }
        (true, None) => bail!("either --scene or --manifest is required"),
        (false, Some(_)) => bail!("--scene and --manifest are mutually exclusive"),
    };
    let mut seen = std::collections::HashSet::new();
    for meta in &metas {
        if !seen.insert(&meta.scene_id) {
            bail!("duplicate scene id {:?} in inputs", meta.scene_id);
        }
    }
    Ok(metas)
}

/// Builds a scene set over resolved metadata.
pub fn scene_set(metas: &[SceneMeta]) -> SceneSet {
    let mut set = SceneSet::new();
    for meta in metas {
        set.insert_file(meta.clone());
    }
    set
}

pub fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))
}

/// Parses a comma-separated scale list; an empty string means no scales
/// (anchor-only samples).
pub fn parse_scales(s: &str) -> Result<Vec<u32>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<u32>()
                .with_context(|| format!("bad scale factor {v:?}"))
        })
        .collect()
}
