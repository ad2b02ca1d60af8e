use std::path::PathBuf;

use crate::alignment::VisualFeatureMap;
use crate::anchors::{assemble_anchor_set, SemanticAnchorSet};
use crate::error::{Error, Result};

use super::manifest::{DatasetManifest, SampleRecord, SampleRole};
use super::tensor::{load_tensor, read_header, Tensor};

#[derive(Debug, Clone)]
enum FeatureStore {
    Disk,
    Memory(Vec<Tensor>),
}

/// A manifest whose anchor and feature files have been cross-checked against
/// its `dims`. Feature payloads are read on demand.
#[derive(Debug, Clone)]
pub struct ValidatedDataset {
    manifest: DatasetManifest,
    anchors: Tensor,
    features: FeatureStore,
}

impl ValidatedDataset {
    /// Builds a dataset from tensors already in memory, with the same checks
    /// as [`validate_dataset`].
    pub fn from_parts(manifest: DatasetManifest, anchors: Tensor, features: Vec<Tensor>) -> Result<Self> {
        manifest.check()?;
        check_anchor_shape(&manifest, &anchors, manifest.anchor_path())?;
        if features.len() != manifest.sample_records.len() {
            return Err(Error::Manifest(format!(
                "{} feature tensors for {} samples",
                features.len(),
                manifest.sample_records.len()
            )));
        }
        for (record, tensor) in manifest.sample_records.iter().zip(&features) {
            check_feature_shape(&manifest, tensor.shape(), manifest.resolve(&record.feature_file))?;
        }
        Ok(Self { manifest, anchors, features: FeatureStore::Memory(features) })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn raw_anchors(&self) -> &Tensor {
        &self.anchors
    }

    pub fn anchor_set(&self) -> Result<SemanticAnchorSet> {
        assemble_anchor_set(&self.anchors, &self.manifest)
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.manifest.sample_records
    }

    /// Sample indices with the given role, in manifest order.
    pub fn indices_with_role(&self, role: SampleRole) -> Vec<usize> {
        self.manifest
            .sample_records
            .iter()
            .enumerate()
            .filter(|(_, s)| self.manifest.role_of(s) == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn feature_tensor(&self, index: usize) -> Result<Tensor> {
        let record = self
            .manifest
            .sample_records
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("sample index {index} out of range")))?;
        match &self.features {
            FeatureStore::Memory(tensors) => Ok(tensors[index].clone()),
            FeatureStore::Disk => {
                let path = self.manifest.resolve(&record.feature_file);
                let tensor = load_tensor(&path)?;
                check_feature_shape(&self.manifest, tensor.shape(), path)?;
                Ok(tensor)
            }
        }
    }

    pub fn feature_map(&self, index: usize) -> Result<VisualFeatureMap> {
        let record = &self.manifest.sample_records[index];
        let values = self.feature_tensor(index)?.to_array2()?;
        VisualFeatureMap::new(values, record.id.clone(), record.class_id)
    }

    pub fn feature_maps(&self, indices: &[usize]) -> Result<Vec<VisualFeatureMap>> {
        indices.iter().map(|&i| self.feature_map(i)).collect()
    }
}

fn check_anchor_shape(manifest: &DatasetManifest, anchors: &Tensor, file: PathBuf) -> Result<()> {
    let d = manifest.dims;
    let expected = vec![d.classes, d.granularities, d.text_dim];
    if anchors.shape() != expected.as_slice() {
        return Err(Error::ShapeMismatch { file, expected, actual: anchors.shape().to_vec() });
    }
    Ok(())
}

fn check_feature_shape(manifest: &DatasetManifest, shape: &[usize], file: PathBuf) -> Result<()> {
    let expected = vec![manifest.dims.nodes, manifest.dims.visual_dim];
    if shape != expected.as_slice() {
        return Err(Error::ShapeMismatch { file, expected, actual: shape.to_vec() });
    }
    Ok(())
}

/// Opens the anchor tensor and every feature header, checking shapes against
/// the manifest dims and file sizes against the headers.
pub fn validate_dataset(manifest: DatasetManifest) -> Result<ValidatedDataset> {
    manifest.check()?;
    let anchor_path = manifest.anchor_path();
    let anchors = load_tensor(&anchor_path)?;
    check_anchor_shape(&manifest, &anchors, anchor_path)?;
    for record in &manifest.sample_records {
        let path = manifest.resolve(&record.feature_file);
        let header = read_header(&path)?;
        check_feature_shape(&manifest, &header.shape, path)?;
    }
    Ok(ValidatedDataset { manifest, anchors, features: FeatureStore::Disk })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::{granularity_labels, save_tensor, ClassRecord, ClassSplit, Dims};

    fn manifest(dir: &std::path::Path, s: usize, n: usize) -> DatasetManifest {
        let labels = granularity_labels(4, 3);
        DatasetManifest {
            class_records: (0..5)
                .map(|i| ClassRecord { id: i, name: format!("c{i}"), descriptions: vec!["x".into(); 8] })
                .collect(),
            split: ClassSplit::new([0, 1, 2], [3, 4]).unwrap(),
            granularity_labels: labels,
            anchor_file: "anchors.dpt".into(),
            sample_records: vec![SampleRecord {
                id: "s0".into(),
                class_id: 1,
                feature_file: "s0.dpt".into(),
                role: None,
            }],
            dims: Dims { classes: 5, granularities: 8, text_dim: 16, nodes: s, visual_dim: n },
            base_dir: dir.to_path_buf(),
        }
    }

    fn write_anchors(dir: &std::path::Path) {
        let t = Tensor::from_f32(vec![5, 8, 16], vec![0.25; 5 * 8 * 16]).unwrap();
        save_tensor(&t, dir.join("anchors.dpt")).unwrap();
    }

    #[test]
    fn consistent_dataset_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        write_anchors(dir.path());
        save_tensor(&Tensor::from_f32(vec![30, 64], vec![1.0; 30 * 64]).unwrap(), dir.path().join("s0.dpt")).unwrap();
        let ds = validate_dataset(manifest(dir.path(), 30, 64)).unwrap();
        let g = ds.feature_map(0).unwrap();
        assert_eq!(g.values.dim(), (30, 64));
        assert_eq!(ds.indices_with_role(SampleRole::Train), vec![0]);
    }

    #[test]
    fn wrong_feature_shape_names_file() {
        let dir = tempfile::tempdir().unwrap();
        write_anchors(dir.path());
        save_tensor(&Tensor::from_f32(vec![30, 32], vec![1.0; 30 * 32]).unwrap(), dir.path().join("s0.dpt")).unwrap();
        let err = validate_dataset(manifest(dir.path(), 30, 64)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("s0.dpt") && msg.contains("[30, 64]") && msg.contains("[30, 32]"), "{msg}");
    }

    #[test]
    fn missing_feature_file() {
        let dir = tempfile::tempdir().unwrap();
        write_anchors(dir.path());
        let err = validate_dataset(manifest(dir.path(), 30, 64)).unwrap_err();
        assert!(err.to_string().starts_with("file not found: "), "{err}");
        assert!(err.to_string().ends_with("s0.dpt"));
    }
}
