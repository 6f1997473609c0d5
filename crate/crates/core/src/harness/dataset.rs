//! On-disk datasets: one directory per family holding `NNNNN_scene.ppm` and
//! `NNNNN_label.pgm`, plus `manifest.json` with SHA-256 checksums.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::netpbm::{decode_pgm, decode_ppm, encode_pgm, encode_ppm};
use super::derive_seed;
use crate::encoder::{encode_image, InputFeatures, Sample};
use crate::error::{Error, Result};
use crate::grid::{
    compute_label, generate_scene_sized, parse_image, render_scene, GridScene, PathLabel,
    ScenarioFamily, DEFAULT_SIZE,
};
use crate::planners::dijkstra;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyEntry {
    pub id: String,
    pub params: ScenarioFamily,
    pub count: usize,
    /// Scene `i` of this family uses seed `seed_start + i` (wrapping).
    pub seed_start: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEntry {
    pub family: String,
    pub seed: u64,
    pub scene_file: String,
    pub label_file: String,
    pub scene_sha256: String,
    pub label_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub families: Vec<FamilyEntry>,
    pub entries: Vec<SceneEntry>,
}

/// A scene with its shortest-path label.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetItem {
    pub id: String,
    pub family: String,
    pub scene: GridScene,
    pub label: PathLabel,
}

impl DatasetItem {
    pub fn to_sample(&self, features: InputFeatures) -> Result<Sample> {
        Sample::new(encode_image(&render_scene(&self.scene), features)?, self.label.mask.clone())
    }
}

pub fn samples(items: &[DatasetItem], features: InputFeatures) -> Result<Vec<Sample>> {
    items.par_iter().map(|it| it.to_sample(features)).collect()
}

fn family_seed_start(seed: u64, family_index: usize) -> u64 {
    derive_seed(seed, 0x6661_6d00 + family_index as u64)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn make_item(family: ScenarioFamily, seed: u64, index: usize, w: usize, h: usize) -> Result<DatasetItem> {
    let scene = generate_scene_sized(family, seed, w, h)?;
    let label = compute_label(&scene)?;
    // oracle check: the label must be as short as an independent search finds
    let reference = dijkstra(&scene, None)?;
    if !reference.found() || reference.cost != label.cost() {
        return Err(Error::InvalidScene(format!(
            "label cost {} disagrees with search cost {} for seed {seed}",
            label.cost(),
            reference.cost
        )));
    }
    Ok(DatasetItem {
        id: format!("{}/{index:05}", family.name()),
        family: family.name().to_string(),
        scene,
        label,
    })
}

/// Generates `count` labelled scenes per family in memory. The result depends
/// only on `(families, count, seed, width, height)`.
pub fn generate_items(
    families: &[ScenarioFamily],
    count: usize,
    seed: u64,
    width: usize,
    height: usize,
) -> Result<Vec<DatasetItem>> {
    if count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    let mut items = Vec::with_capacity(families.len() * count);
    for (fi, &family) in families.iter().enumerate() {
        family.validate()?;
        let start = family_seed_start(seed, fi);
        let chunk: Vec<DatasetItem> = (0..count)
            .into_par_iter()
            .map(|i| make_item(family, start.wrapping_add(i as u64), i, width, height))
            .collect::<Result<_>>()?;
        items.extend(chunk);
    }
    Ok(items)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Generates 60×60 scenes and writes them, their labels and the manifest
/// under `out_dir`.
pub fn gen_dataset(
    families: &[ScenarioFamily],
    count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    gen_dataset_sized(families, count, seed, out_dir, DEFAULT_SIZE, DEFAULT_SIZE)
}

pub fn gen_dataset_sized(
    families: &[ScenarioFamily],
    count: usize,
    seed: u64,
    out_dir: &Path,
    width: usize,
    height: usize,
) -> Result<DatasetManifest> {
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = families.iter().find(|f| !seen.insert(f.name())) {
        return Err(Error::InvalidParameter(format!("family {} listed twice", dup.name())));
    }
    let items = generate_items(families, count, seed, width, height)?;
    let mut entries = Vec::with_capacity(items.len());
    for family in families {
        let dir = out_dir.join(family.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for (k, item) in items.iter().enumerate() {
        let i = k % count;
        let scene_file = format!("{}/{i:05}_scene.ppm", item.family);
        let label_file = format!("{}/{i:05}_label.pgm", item.family);
        let scene_bytes = encode_ppm(&render_scene(&item.scene));
        let label_bytes = encode_pgm(&item.label.mask);
        write_file(&out_dir.join(&scene_file), &scene_bytes)?;
        write_file(&out_dir.join(&label_file), &label_bytes)?;
        entries.push(SceneEntry {
            family: item.family.clone(),
            seed: item.scene.seed,
            scene_file,
            label_file,
            scene_sha256: sha256_hex(&scene_bytes),
            label_sha256: sha256_hex(&label_bytes),
        });
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        seed,
        width,
        height,
        families: families
            .iter()
            .enumerate()
            .map(|(fi, f)| FamilyEntry {
                id: f.name().to_string(),
                params: *f,
                count,
                seed_start: family_seed_start(seed, fi),
            })
            .collect(),
        entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    write_file(&path, json.as_bytes())?;
    Ok(manifest)
}

fn read_checked(root: &Path, rel: &str, expected: &str) -> Result<Vec<u8>> {
    let path = root.join(rel);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let actual = sha256_hex(&bytes);
    if actual != expected {
        return Err(Error::ChecksumMismatch {
            path,
            expected: expected.to_string(),
            actual,
        });
    }
    Ok(bytes)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.format_version != MANIFEST_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported manifest format_version {}",
            manifest.format_version
        )));
    }
    for fam in &manifest.families {
        let n = manifest.entries.iter().filter(|e| e.family == fam.id).count();
        if n != fam.count {
            return Err(Error::Config(format!(
                "family {} declares {} scenes but lists {n}",
                fam.id, fam.count
            )));
        }
    }
    Ok(manifest)
}

/// Loads every scene and label, verifying checksums and label optimality.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<DatasetItem>)> {
    let manifest = read_manifest(dir)?;
    let items = manifest
        .entries
        .par_iter()
        .map(|e| {
            let family = manifest
                .families
                .iter()
                .find(|f| f.id == e.family)
                .ok_or_else(|| Error::Config(format!("entry references unknown family {}", e.family)))?;
            let image = decode_ppm(&read_checked(dir, &e.scene_file, &e.scene_sha256)?)?;
            let mask = decode_pgm(&read_checked(dir, &e.label_file, &e.label_sha256)?)?;
            let scene = parse_image(&image, Some(family.params), e.seed)?;
            let label = PathLabel::from_mask(mask, scene.start, scene.goal)?;
            let index = e.seed.wrapping_sub(family.seed_start);
            Ok(DatasetItem {
                id: format!("{}/{index:05}", e.family),
                family: e.family.clone(),
                scene,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, items))
}

/// Resolves `all` or a comma-separated list of family names to their
/// default parameterisations.
pub fn parse_families(spec: &str) -> Result<Vec<ScenarioFamily>> {
    if spec.trim() == "all" {
        return Ok(ScenarioFamily::builtin().to_vec());
    }
    spec.split(',')
        .map(|name| {
            let name = name.trim();
            ScenarioFamily::by_name(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown family `{name}` (expected one of {} or `all`)",
                    ScenarioFamily::NAMES.join(", ")
                ))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_reproducible_and_round_trips() {
        let fams = parse_families("uniform_clutter,maze").unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = gen_dataset_sized(&fams, 3, 7, a.path(), 16, 12).unwrap();
        let mb = gen_dataset_sized(&fams, 3, 7, b.path(), 16, 12).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(ma.entries.len(), 6);
        let (m, items) = load_dataset(a.path()).unwrap();
        assert_eq!(m, ma);
        let direct = generate_items(&fams, 3, 7, 16, 12).unwrap();
        assert_eq!(items, direct);
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let fams = parse_families("rooms").unwrap();
        let m = gen_dataset_sized(&fams, 2, 1, dir.path(), 20, 20).unwrap();
        let victim = dir.path().join(&m.entries[1].label_file);
        let mut bytes = fs::read(&victim).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&victim, bytes).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::ChecksumMismatch { path, .. }) => assert!(path.ends_with("rooms/00001_label.pgm")),
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn family_names() {
        assert_eq!(parse_families("all").unwrap().len(), 5);
        assert!(parse_families("uniform_clutter,lava").is_err());
        assert!(generate_items(&parse_families("maze").unwrap(), 0, 1, 10, 10).is_err());
    }
}
