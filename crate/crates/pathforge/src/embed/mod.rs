//! Embedding sets: per-slide tile feature matrices under a named encoder
//! profile, with labels and on-disk layout.
//!
//! A set lives in a directory as
//!
//! ```text
//! manifest.tsv      #profile= / #dim= / #checkpoint= headers, then
//!                   slide_id<TAB>relative_path rows
//! labels.tsv        slide_id<TAB>label rows
//! slides/*.pemb     binary matrices (see `format`)
//! ```

pub mod format;
mod synth;

pub use synth::synth_embedding_dataset;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A named embedding space: encoder identity plus feature dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderProfile {
    pub name: String,
    pub dim: u32,
}

impl EncoderProfile {
    pub fn new(name: impl Into<String>, dim: u32) -> Self {
        Self { name: name.into(), dim }
    }

    /// The four registered profiles; custom ones are constructed directly.
    pub fn builtin() -> Vec<EncoderProfile> {
        vec![
            EncoderProfile::new("truncated-ResNet50-IN", 1024),
            EncoderProfile::new("ResNet50-IN", 2048),
            EncoderProfile::new("DINO-ViT-S", 384),
            EncoderProfile::new("MAE-ViT-L", 1024),
        ]
    }

    pub fn lookup(name: &str) -> Option<EncoderProfile> {
        Self::builtin().into_iter().find(|p| p.name == name)
    }
}

/// Tile feature vectors for one slide, with their level-0 tile coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub slide_id: String,
    pub dim: u32,
    pub coords: Vec<(u32, u32)>,
    /// Row-major `n_tiles x dim`.
    pub values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(
        slide_id: impl Into<String>,
        dim: u32,
        coords: Vec<(u32, u32)>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let m = Self { slide_id: slide_id.into(), dim, coords, values };
        m.validate()?;
        Ok(m)
    }

    pub fn n_tiles(&self) -> usize {
        self.coords.len()
    }

    pub fn row(&self, k: usize) -> &[f32] {
        let d = self.dim as usize;
        &self.values[k * d..(k + 1) * d]
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.is_empty() {
            return Err(Error::InvalidInput(format!(
                "matrix {} has zero tiles",
                self.slide_id
            )));
        }
        if self.values.len() != self.coords.len() * self.dim as usize {
            return Err(Error::ShapeMismatch(format!(
                "matrix {}: {} values for {} tiles x dim {}",
                self.slide_id,
                self.values.len(),
                self.coords.len(),
                self.dim
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(format::FormatError::NonFinite { index: i }.into());
        }
        Ok(())
    }
}

/// A collection of slide matrices under one profile, plus binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub profile: EncoderProfile,
    /// Identifies the encoder checkpoint that produced the features.
    pub checkpoint_tag: String,
    pub slides: BTreeMap<String, EmbeddingMatrix>,
    pub labels: BTreeMap<String, u8>,
}

impl EmbeddingSet {
    pub fn new(profile: EncoderProfile, checkpoint_tag: impl Into<String>) -> Self {
        Self {
            profile,
            checkpoint_tag: checkpoint_tag.into(),
            slides: BTreeMap::new(),
            labels: BTreeMap::new(),
        }
    }

    pub fn with_checkpoint_tag(mut self, tag: impl Into<String>) -> Self {
        self.checkpoint_tag = tag.into();
        self
    }

    /// Add a matrix (and optionally its label), enforcing the profile dim.
    pub fn insert(&mut self, matrix: EmbeddingMatrix, label: Option<u8>) -> Result<()> {
        matrix.validate()?;
        if matrix.dim != self.profile.dim {
            return Err(Error::ShapeMismatch(format!(
                "matrix {} has dim {} but profile {} declares {}",
                matrix.slide_id, matrix.dim, self.profile.name, self.profile.dim
            )));
        }
        if let Some(l) = label {
            if l > 1 {
                return Err(Error::InvalidInput(format!("label {l} is not binary")));
            }
            self.labels.insert(matrix.slide_id.clone(), l);
        }
        self.slides.insert(matrix.slide_id.clone(), matrix);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for matrix in self.slides.values() {
            matrix.validate()?;
            if matrix.dim != self.profile.dim {
                return Err(Error::ShapeMismatch(format!(
                    "matrix {} has dim {} but profile {} declares {}",
                    matrix.slide_id, matrix.dim, self.profile.name, self.profile.dim
                )));
            }
        }
        for id in self.labels.keys() {
            if !self.slides.contains_key(id) {
                return Err(Error::InvalidInput(format!(
                    "label refers to missing slide {id}"
                )));
            }
        }
        Ok(())
    }

    /// Labeled slide ids in sorted order — the benchmark sample universe.
    pub fn labeled_ids(&self) -> Vec<String> {
        self.labels.keys().cloned().collect()
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        let slides_dir = dir.join("slides");
        fs::create_dir_all(&slides_dir).map_err(|e| Error::io(&slides_dir, e))?;

        let mut manifest = format!(
            "#profile={}\n#dim={}\n#checkpoint={}\n",
            self.profile.name, self.profile.dim, self.checkpoint_tag
        );
        for (id, matrix) in &self.slides {
            let rel = format!("slides/{id}.pemb");
            format::write_embeddings_file(matrix, &dir.join(&rel))?;
            let _ = writeln!(manifest, "{id}\t{rel}");
        }
        let manifest_path = dir.join("manifest.tsv");
        fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

        let mut labels = String::new();
        for (id, label) in &self.labels {
            let _ = writeln!(labels, "{id}\t{label}");
        }
        let labels_path = dir.join("labels.tsv");
        fs::write(&labels_path, labels).map_err(|e| Error::io(&labels_path, e))?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.tsv");
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;

        let mut profile_name = None;
        let mut dim = None;
        let mut checkpoint = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (key, value) = rest.split_once('=').ok_or_else(|| {
                    Error::InvalidInput(format!("manifest line {}: bad header {line:?}", i + 1))
                })?;
                match key {
                    "profile" => profile_name = Some(value.to_string()),
                    "dim" => {
                        dim = Some(value.parse::<u32>().map_err(|e| {
                            Error::InvalidInput(format!("manifest dim: {e}"))
                        })?)
                    }
                    "checkpoint" => checkpoint = Some(value.to_string()),
                    other => {
                        return Err(Error::InvalidInput(format!(
                            "manifest line {}: unknown header {other:?}",
                            i + 1
                        )))
                    }
                }
            } else {
                let (id, rel) = line.split_once('\t').ok_or_else(|| {
                    Error::InvalidInput(format!("manifest line {}: expected two columns", i + 1))
                })?;
                rows.push((id.to_string(), rel.to_string()));
            }
        }

        let profile = EncoderProfile::new(
            profile_name.ok_or_else(|| Error::InvalidInput("manifest missing #profile".into()))?,
            dim.ok_or_else(|| Error::InvalidInput("manifest missing #dim".into()))?,
        );
        let mut set = EmbeddingSet::new(
            profile,
            checkpoint.ok_or_else(|| Error::InvalidInput("manifest missing #checkpoint".into()))?,
        );

        for (id, rel) in rows {
            let matrix = format::read_embeddings_file(&dir.join(&rel))?;
            if matrix.slide_id != id {
                return Err(Error::InvalidInput(format!(
                    "manifest id {id} does not match file stem {}",
                    matrix.slide_id
                )));
            }
            set.insert(matrix, None)?;
        }

        set.labels = read_labels(dir)?;
        set.validate()?;
        Ok(set)
    }
}

/// Read just the label table of a set directory.
pub fn read_labels(dir: &Path) -> Result<BTreeMap<String, u8>> {
    let labels_path = dir.join("labels.tsv");
    let text = fs::read_to_string(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    let mut labels = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, label) = line.split_once('\t').ok_or_else(|| {
            Error::InvalidInput(format!("labels line {}: expected two columns", i + 1))
        })?;
        let label: u8 = label
            .parse()
            .map_err(|e| Error::InvalidInput(format!("labels line {}: {e}", i + 1)))?;
        if label > 1 {
            return Err(Error::InvalidInput(format!(
                "labels line {}: label {label} is not binary",
                i + 1
            )));
        }
        labels.insert(id.to_string(), label);
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_matrix(id: &str, dim: u32, bias: f32) -> EmbeddingMatrix {
        EmbeddingMatrix::new(
            id,
            dim,
            vec![(0, 0), (224, 0)],
            (0..2 * dim as usize).map(|i| i as f32 * 0.5 + bias).collect(),
        )
        .unwrap()
    }

    #[test]
    fn builtin_profiles_carry_reference_dims() {
        let dims: BTreeMap<String, u32> = EncoderProfile::builtin()
            .into_iter()
            .map(|p| (p.name, p.dim))
            .collect();
        assert_eq!(dims["truncated-ResNet50-IN"], 1024);
        assert_eq!(dims["ResNet50-IN"], 2048);
        assert_eq!(dims["DINO-ViT-S"], 384);
        assert_eq!(dims["MAE-ViT-L"], 1024);
    }

    #[test]
    fn insert_enforces_profile_dim() {
        let mut set = EmbeddingSet::new(EncoderProfile::new("p", 8), "t0");
        assert!(set.insert(small_matrix("a", 8, 0.0), Some(1)).is_ok());
        assert!(set.insert(small_matrix("b", 7, 0.0), Some(0)).is_err());
    }

    #[test]
    fn set_round_trips_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = EmbeddingSet::new(EncoderProfile::new("p", 4), "ckpt5");
        set.insert(small_matrix("a", 4, 0.25), Some(1)).unwrap();
        set.insert(small_matrix("b", 4, -2.0), Some(0)).unwrap();
        set.write_dir(dir.path()).unwrap();

        let back = EmbeddingSet::read_dir(dir.path()).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.labeled_ids(), vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn load_rejects_dim_mismatch_against_declared_profile() {
        // A file holding dim-3 rows under a manifest that declares dim 4.
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("slides")).unwrap();
        let odd = small_matrix("a", 3, 0.0);
        format::write_embeddings_file(&odd, &dir.path().join("slides/a.pemb")).unwrap();
        fs::write(
            dir.path().join("manifest.tsv"),
            "#profile=p\n#dim=4\n#checkpoint=t\na\tslides/a.pemb\n",
        )
        .unwrap();
        fs::write(dir.path().join("labels.tsv"), "a\t1\n").unwrap();
        match EmbeddingSet::read_dir(dir.path()) {
            Err(Error::ShapeMismatch(_)) => {}
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }
}
