use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::editing::{apply_plan, sample_edit_plan, EditConfig, EditPlan};
use crate::image::RgbImage;
use crate::landmarks::{read_landmarks, write_landmarks, LandmarkSet};
use crate::{seed, Error};

use super::{render_face, sample_base_landmarks, StyleSpec};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One image/landmark pair. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub image_path: String,
    pub landmarks_path: String,
    /// 0 for the base domain.
    pub style_id: usize,
    pub edit_plan: Option<EditPlan>,
    pub seed: u64,
    /// Landmark file the edits were applied to, for generated records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_landmarks: Option<String>,
}

/// A JSON-lines manifest together with the directory its paths resolve against.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub records: Vec<DatasetRecord>,
}

impl Manifest {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), records: Vec::new() }
    }

    /// Read a manifest file, or `manifest.jsonl` inside a directory.
    pub fn read(path: &Path) -> Result<Self, Error> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let reader = BufReader::new(fs::File::open(&file).map_err(|e| Error::io(&file, e))?);
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io(&file, e))?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { dir, records })
    }

    pub fn path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    pub fn write(&self) -> Result<PathBuf, Error> {
        let path = self.path();
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.push(b'\n');
        }
        fs::File::create(&path).and_then(|mut f| f.write_all(&out)).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn load_image(&self, r: &DatasetRecord) -> Result<RgbImage, Error> {
        Ok(RgbImage::read_png(&self.resolve(&r.image_path))?)
    }

    pub fn load_landmarks(&self, r: &DatasetRecord) -> Result<LandmarkSet, Error> {
        Ok(read_landmarks(&self.resolve(&r.landmarks_path))?)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted count of records per style id.
    pub fn style_histogram(&self) -> Vec<(usize, usize)> {
        let mut h = std::collections::BTreeMap::new();
        for r in &self.records {
            *h.entry(r.style_id).or_insert(0) += 1;
        }
        h.into_iter().collect()
    }
}

pub(crate) fn prepare_dirs(out_dir: &Path) -> Result<(), Error> {
    for sub in ["images", "landmarks"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    Ok(())
}

/// Write the image and landmark files for record `index` and return its
/// relative paths.
pub(crate) fn write_pair(out_dir: &Path, index: usize, img: &RgbImage, lm: &LandmarkSet) -> Result<(String, String), Error> {
    let image_path = format!("images/{index:05}.png");
    let landmarks_path = format!("landmarks/{index:05}.json");
    img.write_png(&out_dir.join(&image_path))?;
    write_landmarks(&out_dir.join(&landmarks_path), lm)?;
    Ok((image_path, landmarks_path))
}

/// What a procedural corpus contains.
#[derive(Clone, Debug)]
pub struct CorpusSpec<'a> {
    /// Seed-derivation label; distinct corpora built from the same seed
    /// should use distinct labels.
    pub purpose: &'a str,
    pub styles: &'a [usize],
    pub per_style: usize,
    pub resolution: usize,
    pub edits: Option<&'a EditConfig>,
}

/// Render `per_style` faces for every style in order. Each face, and its
/// optional edit plan, is drawn from a seed derived from `(seed, purpose, i)`.
pub fn build_corpus(spec: &CorpusSpec<'_>, seed: u64, out_dir: &Path) -> Result<Manifest, Error> {
    prepare_dirs(out_dir)?;
    let mut manifest = Manifest::new(out_dir);
    let mut index = 0;
    for &style_id in spec.styles {
        let style = StyleSpec::get(style_id).ok_or(Error::BadStyle(style_id))?;
        for _ in 0..spec.per_style {
            let face_seed = seed::derive(seed, spec.purpose, index as u64);
            let mut lm = sample_base_landmarks(face_seed);
            let edit_plan = match spec.edits {
                Some(cfg) => {
                    let plan = sample_edit_plan(seed::derive(face_seed, "edit-plan", 0), cfg)?;
                    lm = apply_plan(&lm, &plan)?;
                    Some(plan)
                }
                None => None,
            };
            let img = render_face(&lm, &style, spec.resolution, spec.resolution)?;
            let (image_path, landmarks_path) = write_pair(out_dir, index, &img, &lm)?;
            manifest.records.push(DatasetRecord {
                image_path,
                landmarks_path,
                style_id,
                edit_plan,
                seed: face_seed,
                source_landmarks: None,
            });
            index += 1;
        }
    }
    manifest.write()?;
    Ok(manifest)
}

/// `n` base-domain faces (style 0, no edits).
pub fn build_stage1_corpus(n: usize, seed: u64, out_dir: &Path, resolution: usize) -> Result<Manifest, Error> {
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    let spec = CorpusSpec { purpose: "stage1-corpus", styles: &[0], per_style: n, resolution, edits: None };
    build_corpus(&spec, seed, out_dir)
}

/// `per_style` unedited faces for each style id.
pub fn build_stage2_corpus(
    per_style: usize,
    styles: &[usize],
    seed: u64,
    out_dir: &Path,
    resolution: usize,
) -> Result<Manifest, Error> {
    if styles.contains(&0) {
        return Err(Error::BadStyle(0));
    }
    let spec = CorpusSpec { purpose: "stage2-corpus", styles, per_style, resolution, edits: None };
    build_corpus(&spec, seed, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage1_corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_stage1_corpus(10, 3, dir.path(), 64).unwrap();
        assert_eq!(m.len(), 10);
        let back = Manifest::read(dir.path()).unwrap();
        assert_eq!(back, m);
        for r in &back.records {
            assert_eq!(r.style_id, 0);
            assert!(r.edit_plan.is_none());
            assert_eq!(back.load_landmarks(r).unwrap(), sample_base_landmarks(r.seed));
            assert_eq!(back.load_image(r).unwrap().height, 64);
        }
    }

    #[test]
    fn stage2_corpus_is_balanced_and_reproducible() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let styles: Vec<usize> = (1..=5).collect();
        let m = build_stage2_corpus(2, &styles, 9, a.path(), 32).unwrap();
        build_stage2_corpus(2, &styles, 9, b.path(), 32).unwrap();
        assert_eq!(m.style_histogram(), styles.iter().map(|&s| (s, 2)).collect::<Vec<_>>());
        for name in ["manifest.jsonl", "images/00007.png", "landmarks/00007.json"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
        assert!(matches!(build_stage2_corpus(1, &[0], 0, a.path(), 32), Err(Error::BadStyle(0))));
    }
}
