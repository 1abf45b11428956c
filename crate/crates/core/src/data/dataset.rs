use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::container::{
    self, checksum_hex, decode_f32, decode_u32, encode_f32, encode_u32, Dtype, FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::linalg::{check_dim, norm, Matrix};

pub const FEATURES_FILE: &str = "features.bin";
pub const LABELS_FILE: &str = "labels.bin";
pub const TEXT_FILE: &str = "text_features.bin";

/// Rows further than this from unit norm are reported when loading.
pub const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub dtype: String,
    pub dim: usize,
    pub count: usize,
    pub num_classes: usize,
    pub source: String,
    /// Images the producer could not encode; informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped_images: Option<u64>,
    pub class_names: Vec<String>,
    /// Payload file name to hex FNV-1a 64 checksum.
    pub checksums: BTreeMap<String, String>,
}

/// Which table a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    Features,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffNormRow {
    pub table: Table,
    pub row: usize,
    pub norm: f64,
}

/// Non-fatal findings from loading a dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LoadReport {
    /// Rows whose stored norm was off by more than [`NORM_TOLERANCE`]; they
    /// are renormalized regardless.
    pub off_norm_rows: Vec<OffNormRow>,
}

impl LoadReport {
    pub fn is_clean(&self) -> bool {
        self.off_norm_rows.is_empty()
    }
}

/// Labeled visual features and one text feature per class. All rows are unit
/// norm; every class has at least one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    features: Matrix,
    labels: Vec<usize>,
    class_names: Vec<String>,
    text: Matrix,
    source: String,
    skipped_images: Option<u64>,
    members: Vec<Vec<usize>>,
}

impl EmbeddingDataset {
    /// Validates the parts and renormalizes every row.
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        class_names: Vec<String>,
        text: Matrix,
        source: impl Into<String>,
    ) -> Result<Self> {
        Self::with_report(features, labels, class_names, text, source.into()).map(|(ds, _)| ds)
    }

    fn with_report(
        features: Matrix,
        labels: Vec<usize>,
        class_names: Vec<String>,
        text: Matrix,
        source: String,
    ) -> Result<(Self, LoadReport)> {
        check_dim(features.rows(), labels.len())?;
        check_dim(features.cols(), text.cols())?;
        check_dim(text.rows(), class_names.len())?;
        if features.cols() == 0 {
            return Err(Error::InvalidData("feature dimension is zero".into()));
        }
        if !features.is_finite() || !text.is_finite() {
            return Err(Error::InvalidData("non-finite feature value".into()));
        }
        let classes = text.rows();
        let mut members = vec![Vec::new(); classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::LabelOutOfRange { label: y, classes });
            }
            members[y].push(i);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidData(format!(
                "class {empty} ({:?}) has no samples",
                class_names[empty]
            )));
        }
        let mut report = LoadReport::default();
        for (table, m) in [(Table::Features, &features), (Table::Text, &text)] {
            for (row, r) in m.iter_rows().enumerate() {
                let n = norm(r);
                if (n - 1.0).abs() > NORM_TOLERANCE {
                    report.off_norm_rows.push(OffNormRow { table, row, norm: n });
                }
            }
        }
        let ds = Self {
            features: features.normalized_rows()?,
            labels,
            class_names,
            text: text.normalized_rows()?,
            source,
            skipped_images: None,
            members,
        };
        Ok((ds, report))
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn text(&self) -> &Matrix {
        &self.text
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn skipped_images(&self) -> Option<u64> {
        self.skipped_images
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.text.rows()
    }

    /// Sample indices of `class`, in storage order.
    pub fn members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }

    /// The text row of each sample's class, one row per sample.
    pub fn expanded_text(&self) -> Matrix {
        self.text.select_rows(&self.labels)
    }

    /// The dataset as it reads back from disk: values rounded to single
    /// precision, widened, and renormalized.
    pub fn quantize(&self) -> Self {
        let q = |m: &Matrix| {
            let data = m.as_slice().iter().map(|&v| v as f32 as f64).collect();
            Matrix::from_vec(m.rows(), m.cols(), data)
                .and_then(|m| m.normalized_rows())
                .expect("unit rows stay non-zero in single precision")
        };
        Self {
            features: q(&self.features),
            text: q(&self.text),
            ..self.clone()
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        container::ensure_dir(dir)?;
        let labels: Vec<u32> = self
            .labels
            .iter()
            .map(|&y| u32::try_from(y).map_err(|_| Error::InvalidData(format!("label {y} exceeds u32"))))
            .collect::<Result<_>>()?;
        let mut checksums = BTreeMap::new();
        for (name, bytes) in [
            (FEATURES_FILE, encode_f32(self.features.as_slice())),
            (LABELS_FILE, encode_u32(&labels)),
            (TEXT_FILE, encode_f32(self.text.as_slice())),
        ] {
            let sum = container::write_payload(dir, name, &bytes)?;
            checksums.insert(name.to_string(), checksum_hex(sum));
        }
        container::write_manifest(
            dir,
            &DatasetManifest {
                format_version: FORMAT_VERSION,
                dtype: Dtype::F32Le.tag().into(),
                dim: self.dim(),
                count: self.count(),
                num_classes: self.num_classes(),
                source: self.source.clone(),
                skipped_images: self.skipped_images,
                class_names: self.class_names.clone(),
                checksums,
            },
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (ds, report) = Self::load_with_report(dir)?;
        for r in &report.off_norm_rows {
            warn!(
                "{}: {:?} row {} has norm {:.6}, renormalized",
                dir.display(),
                r.table,
                r.row,
                r.norm
            );
        }
        Ok(ds)
    }

    /// Loads without logging; off-norm rows are returned in the report.
    pub fn load_with_report(dir: &Path) -> Result<(Self, LoadReport)> {
        let m: DatasetManifest = container::read_manifest(dir)?;
        container::expect_dtype(dir, &m.dtype, Dtype::F32Le)?;
        if m.class_names.len() != m.num_classes {
            return Err(Error::Manifest {
                path: dir.join(container::MANIFEST_FILE),
                message: format!(
                    "{} class names for num_classes = {}",
                    m.class_names.len(),
                    m.num_classes
                ),
            });
        }
        let w = Dtype::F32Le.width();
        let features = container::read_payload(dir, FEATURES_FILE, m.count * m.dim * w, &m.checksums)?;
        let labels = container::read_payload(dir, LABELS_FILE, m.count * w, &m.checksums)?;
        let text = container::read_payload(dir, TEXT_FILE, m.num_classes * m.dim * w, &m.checksums)?;
        let (mut ds, report) = Self::with_report(
            Matrix::from_vec(m.count, m.dim, decode_f32(&features))?,
            decode_u32(&labels).into_iter().map(|y| y as usize).collect(),
            m.class_names,
            Matrix::from_vec(m.num_classes, m.dim, decode_f32(&text))?,
            m.source,
        )?;
        ds.skipped_images = m.skipped_images;
        Ok((ds, report))
    }

    /// Builds a dataset from two CSV files: visual rows with header
    /// `label,v0,…,v{d-1}` and class text rows with header `name,v0,…`. A
    /// label is either a class index or a class name from the text file.
    pub fn from_csv(features_csv: &Path, text_csv: &Path, source: impl Into<String>) -> Result<Self> {
        let (names, text_rows) = read_csv_table(text_csv, "name")?;
        let (labels, rows) = read_csv_table(features_csv, "label")?;
        let labels = labels
            .iter()
            .map(|l| match l.parse::<usize>() {
                Ok(y) => Ok(y),
                Err(_) => names
                    .iter()
                    .position(|n| n == l)
                    .ok_or_else(|| Error::InvalidData(format!("unknown class label {l:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            Matrix::from_rows(&rows)?,
            labels,
            names,
            Matrix::from_rows(&text_rows)?,
            source,
        )
    }
}

fn read_csv_table(path: &Path, key: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidData(format!("{}: {other:?}", path.display())),
    })?;
    let header = reader.headers()?.clone();
    let dim = header.len().saturating_sub(1);
    let expected = std::iter::once(key.to_string()).chain((0..dim).map(|j| format!("v{j}")));
    if dim == 0 || !header.iter().map(str::trim).eq(expected) {
        return Err(Error::InvalidData(format!(
            "{}: header must be {key},v0,…,v{{d-1}}",
            path.display()
        )));
    }
    let mut keys = Vec::new();
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        keys.push(record[0].trim().to_string());
        let row = record
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidData(format!("{} row {}: {e}", path.display(), line + 1)))?;
        rows.push(row);
    }
    Ok((keys, rows))
}
