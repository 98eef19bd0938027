use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate, LandmarkError, LandmarkSet, Validated};

pub const LANDMARK_FILE_VERSION: u32 = 1;

/// On-disk form: `{"version":1,"n":68,"normalized":true,"points":[[x,y],...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkFile {
    pub version: u32,
    pub n: usize,
    pub normalized: bool,
    pub points: Vec<[f64; 2]>,
}

impl LandmarkFile {
    pub fn from_set(lm: &LandmarkSet) -> Self {
        Self {
            version: LANDMARK_FILE_VERSION,
            n: lm.len(),
            normalized: true,
            points: lm.points().iter().map(|&p| p.into()).collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Validated, LandmarkError> {
        let f: LandmarkFile = serde_json::from_str(text)?;
        f.into_validated()
    }

    pub fn into_validated(self) -> Result<Validated, LandmarkError> {
        if self.version != LANDMARK_FILE_VERSION {
            return Err(LandmarkError::UnsupportedVersion(self.version));
        }
        if !self.normalized {
            return Err(LandmarkError::NotNormalized);
        }
        if self.points.len() != self.n {
            return Err(LandmarkError::CountMismatch { declared: self.n, listed: self.points.len() });
        }
        let pts: Vec<super::Point> = self.points.into_iter().map(Into::into).collect();
        validate(&pts, self.n)
    }
}

pub fn read_landmarks(path: &Path) -> Result<LandmarkSet, LandmarkError> {
    Ok(LandmarkFile::parse(&fs::read_to_string(path)?)?.landmarks)
}

pub fn write_landmarks(path: &Path, lm: &LandmarkSet) -> Result<(), LandmarkError> {
    fs::write(path, serde_json::to_string(&LandmarkFile::from_set(lm))?)?;
    Ok(())
}
