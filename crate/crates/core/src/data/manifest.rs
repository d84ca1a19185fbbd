//! Dataset manifest: UTF-8 header of key=value normalization lines followed
//! by one tab-separated record per pair: `split⟨TAB⟩mm_path⟨TAB⟩target_path`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::generate::{generate_synthetic_pair, pair_seed};
use super::mpt::{read_tensor, write_tensor};
use super::resize::resize_bilinear;
use crate::error::{Error, Result};
use crate::model::MM_CHANNELS;
use crate::tensor::TensorData;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split tag '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    He,
    Fluo,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::He => "HE",
            Modality::Fluo => "FLUO",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "HE" => Ok(Modality::He),
            "FLUO" => Ok(Modality::Fluo),
            other => Err(Error::Data(format!("unknown modality '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub split: Split,
    pub mm_path: PathBuf,
    pub target_path: PathBuf,
}

/// Parsed manifest plus per-channel affine normalization constants.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub modality: Modality,
    pub mm_offset: Vec<f32>,
    pub mm_scale: Vec<f32>,
    pub target_offset: Vec<f32>,
    pub target_scale: Vec<f32>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Identity normalization over `entries`.
    pub fn identity(modality: Modality, entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            version: 1,
            modality,
            mm_offset: vec![0.0; MM_CHANNELS],
            mm_scale: vec![1.0; MM_CHANNELS],
            target_offset: vec![0.0; 3],
            target_scale: vec![1.0; 3],
            entries,
        }
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f32]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        let _ = writeln!(out, "version={}", self.version);
        let _ = writeln!(out, "modality={}", self.modality.as_str());
        let _ = writeln!(out, "mm_offset={}", join(&self.mm_offset));
        let _ = writeln!(out, "mm_scale={}", join(&self.mm_scale));
        let _ = writeln!(out, "target_offset={}", join(&self.target_offset));
        let _ = writeln!(out, "target_scale={}", join(&self.target_scale));
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                e.split.as_str(),
                e.mm_path.display(),
                e.target_path.display()
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut version = None;
        let mut modality = None;
        let mut mm_offset = None;
        let mut mm_scale = None;
        let mut target_offset = None;
        let mut target_scale = None;
        let mut entries = Vec::new();

        let parse_list = |value: &str, n: usize, key: &str| -> Result<Vec<f32>> {
            let vs: Vec<f32> = value
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f32>()
                        .map_err(|_| Error::Data(format!("manifest: bad number in {key}: '{p}'")))
                })
                .collect::<Result<_>>()?;
            if vs.len() != n {
                return Err(Error::Data(format!(
                    "manifest: {key} expects {n} values, got {}",
                    vs.len()
                )));
            }
            Ok(vs)
        };

        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if line.contains('\t') {
                let parts: Vec<&str> = line.split('\t').collect();
                if parts.len() != 3 {
                    return Err(Error::Data(format!(
                        "manifest line {}: expected split\\tmm\\ttarget",
                        lineno + 1
                    )));
                }
                entries.push(ManifestEntry {
                    split: Split::parse(parts[0])?,
                    mm_path: PathBuf::from(parts[1]),
                    target_path: PathBuf::from(parts[2]),
                });
            } else {
                if !entries.is_empty() {
                    return Err(Error::Data(format!(
                        "manifest line {}: header line after records",
                        lineno + 1
                    )));
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Data(format!("manifest line {}: expected key=value", lineno + 1))
                })?;
                match key {
                    "version" => {
                        version = Some(value.parse::<u32>().map_err(|_| {
                            Error::Data(format!("manifest: bad version '{value}'"))
                        })?)
                    }
                    "modality" => modality = Some(Modality::parse(value)?),
                    "mm_offset" => mm_offset = Some(parse_list(value, MM_CHANNELS, key)?),
                    "mm_scale" => mm_scale = Some(parse_list(value, MM_CHANNELS, key)?),
                    "target_offset" => target_offset = Some(parse_list(value, 3, key)?),
                    "target_scale" => target_scale = Some(parse_list(value, 3, key)?),
                    other => {
                        return Err(Error::Data(format!(
                            "manifest: unknown header key '{other}'"
                        )))
                    }
                }
            }
        }

        let manifest = DatasetManifest {
            version: version.ok_or_else(|| Error::Data("manifest: missing version".into()))?,
            modality: modality.ok_or_else(|| Error::Data("manifest: missing modality".into()))?,
            mm_offset: mm_offset.ok_or_else(|| Error::Data("manifest: missing mm_offset".into()))?,
            mm_scale: mm_scale.ok_or_else(|| Error::Data("manifest: missing mm_scale".into()))?,
            target_offset: target_offset
                .ok_or_else(|| Error::Data("manifest: missing target_offset".into()))?,
            target_scale: target_scale
                .ok_or_else(|| Error::Data("manifest: missing target_scale".into()))?,
            entries,
        };
        if manifest.version != 1 {
            return Err(Error::Data(format!(
                "manifest: unsupported version {}",
                manifest.version
            )));
        }
        if manifest
            .mm_scale
            .iter()
            .chain(manifest.target_scale.iter())
            .any(|&s| s == 0.0)
        {
            return Err(Error::Data("manifest: zero normalization scale".into()));
        }
        Ok(manifest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Deterministic shuffled split: disjoint, union preserving, re-tagged.
pub fn split_manifest(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    if manifest.entries.is_empty() {
        return Err(Error::Data("split: empty manifest".into()));
    }
    let mut indices: Vec<usize> = (0..manifest.entries.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let n_train = ((manifest.entries.len() as f64) * train_fraction).round() as usize;

    let pick = |idx: &[usize], split: Split| {
        let mut m = manifest.clone();
        m.entries = idx
            .iter()
            .map(|&i| {
                let mut e = manifest.entries[i].clone();
                e.split = split;
                e
            })
            .collect();
        m
    };
    Ok((
        pick(&indices[..n_train], Split::Train),
        pick(&indices[n_train..], Split::Test),
    ))
}

/// Generates `count` synthetic pairs under `dir` as MPT1 files and writes a
/// manifest with a deterministic 70/30 split. Returns the manifest path.
pub fn write_synthetic_dataset(
    dir: impl AsRef<Path>,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if count < 2 {
        return Err(Error::Config(format!(
            "need at least 2 pairs for a split, got {count}"
        )));
    }
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let (mm, stain) = generate_synthetic_pair(pair_seed(seed, i), size, size)?;
        let mm_name = format!("mm_{i:05}.mpt");
        let st_name = format!("st_{i:05}.mpt");
        write_tensor(dir.join(&mm_name), &mm)?;
        write_tensor(dir.join(&st_name), &stain)?;
        entries.push(ManifestEntry {
            split: Split::Train, // retagged below
            mm_path: PathBuf::from(mm_name),
            target_path: PathBuf::from(st_name),
        });
    }
    let manifest = DatasetManifest::identity(Modality::He, entries);
    let (train, test) = split_manifest(&manifest, 0.7, seed)?;
    let mut merged = manifest;
    merged.entries = train.entries.into_iter().chain(test.entries).collect();
    let path = dir.join("manifest.txt");
    merged.write(&path)?;
    Ok(path)
}

/// Loader for one split of a manifest-backed dataset.
pub struct Dataset {
    manifest: DatasetManifest,
    base: PathBuf,
    image_size: usize,
    items: Vec<usize>,
}

impl Dataset {
    pub fn open(manifest_path: impl AsRef<Path>, split: Split, image_size: usize) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = DatasetManifest::load(manifest_path)?;
        let base = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let items = manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect();
        Ok(Dataset {
            manifest,
            base,
            image_size,
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    /// Entry id usable as a stable sample name.
    pub fn sample_id(&self, index: usize) -> String {
        let e = &self.manifest.entries[self.items[index]];
        e.mm_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("item{index}"))
    }

    /// Loads, normalizes and resizes one pair.
    pub fn load(&self, index: usize) -> Result<(TensorData<f32>, TensorData<f32>)> {
        let entry = &self.manifest.entries[self.items[index]];
        let mm = read_tensor(self.base.join(&entry.mm_path))?;
        let target = read_tensor(self.base.join(&entry.target_path))?;
        let mm = normalize_patch(
            &mm,
            MM_CHANNELS,
            &self.manifest.mm_offset,
            &self.manifest.mm_scale,
            self.image_size,
            &entry.mm_path,
        )?;
        let target = normalize_patch(
            &target,
            3,
            &self.manifest.target_offset,
            &self.manifest.target_scale,
            self.image_size,
            &entry.target_path,
        )?;
        Ok((mm, target))
    }
}

/// Affine per-channel normalization, bilinear resize to the configured size,
/// and a range assertion: tiny overshoots (< 1e-3) are clamped with a
/// warning, larger ones are data errors.
fn normalize_patch(
    raw: &TensorData<f32>,
    channels: usize,
    offset: &[f32],
    scale: &[f32],
    image_size: usize,
    origin: &Path,
) -> Result<TensorData<f32>> {
    if raw.shape().len() != 3 || raw.shape()[0] != channels {
        return Err(Error::Data(format!(
            "{}: expected {channels}×H×W, got {:?}",
            origin.display(),
            raw.shape()
        )));
    }
    let (h, w) = (raw.shape()[1], raw.shape()[2]);
    let hw = h * w;
    let mut data = raw.data().to_vec();
    for c in 0..channels {
        let (o, s) = (offset[c], scale[c]);
        if o != 0.0 || s != 1.0 {
            for v in &mut data[c * hw..(c + 1) * hw] {
                *v = (*v - o) / s;
            }
        }
    }
    let normalized = TensorData::new(vec![channels, h, w], data)?;
    let resized = resize_bilinear(&normalized, image_size, image_size)?;

    let mut clamped = 0usize;
    let mut out = resized;
    for v in out.data_mut() {
        if !v.is_finite() {
            return Err(Error::Data(format!(
                "{}: non-finite value after normalization",
                origin.display()
            )));
        }
        let a = v.abs();
        if a > 1.0 {
            if a - 1.0 < 1e-3 {
                *v = v.clamp(-1.0, 1.0);
                clamped += 1;
            } else {
                return Err(Error::Data(format!(
                    "{}: value {v} outside [-1, 1] after normalization",
                    origin.display()
                )));
            }
        }
    }
    if clamped > 0 {
        log::warn!(
            "{}: clamped {clamped} values marginally outside [-1, 1]",
            origin.display()
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_manifest(n: usize) -> DatasetManifest {
        let entries = (0..n)
            .map(|i| ManifestEntry {
                split: Split::Train,
                mm_path: PathBuf::from(format!("mm_{i}.mpt")),
                target_path: PathBuf::from(format!("st_{i}.mpt")),
            })
            .collect();
        DatasetManifest::identity(Modality::He, entries)
    }

    #[test]
    fn text_round_trip() {
        let mut m = tiny_manifest(3);
        m.entries[1].split = Split::Test;
        let parsed = DatasetManifest::parse(&m.to_text()).unwrap();
        assert_eq!(m, parsed);
    }

    #[test]
    fn unknown_header_key_is_an_error() {
        let text = "version=1\nbogus=3\nmodality=HE\n";
        let err = DatasetManifest::parse(text).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn zero_scale_is_an_error() {
        let mut m = tiny_manifest(1);
        m.mm_scale[3] = 0.0;
        assert!(DatasetManifest::parse(&m.to_text()).is_err());
    }

    #[test]
    fn split_fractions() {
        let m = tiny_manifest(18_000);
        let (train, test) = split_manifest(&m, 0.7, 1).unwrap();
        assert_eq!(train.entries.len(), 12_600);
        assert_eq!(test.entries.len(), 5_400);

        let m = tiny_manifest(10);
        let (train, test) = split_manifest(&m, 0.7, 1).unwrap();
        assert_eq!((train.entries.len(), test.entries.len()), (7, 3));
    }

    #[test]
    fn split_is_deterministic_disjoint_and_covering() {
        let m = tiny_manifest(50);
        let (tr1, te1) = split_manifest(&m, 0.7, 9).unwrap();
        let (tr2, te2) = split_manifest(&m, 0.7, 9).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);

        let mut all: Vec<&PathBuf> = tr1
            .entries
            .iter()
            .chain(te1.entries.iter())
            .map(|e| &e.mm_path)
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 50);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let m = tiny_manifest(5);
        assert!(split_manifest(&m, 0.0, 1).is_err());
        assert!(split_manifest(&m, 1.0, 1).is_err());
        let empty = tiny_manifest(0);
        assert!(split_manifest(&empty, 0.5, 1).is_err());
    }
}
