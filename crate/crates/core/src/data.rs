//! Binary datasets: loading, validation, splitting, and the image geometry
//! needed to generate rectangular queries.
//!
//! The on-disk format is comma-separated 0/1 text, one sample per row, with
//! an optional trailing nonnegative integer label column.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Valid,
    Test,
    Unsplit,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
            SplitTag::Unsplit => "unsplit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    CsvLabeled,
    CsvUnlabeled,
}

/// An immutable matrix of binary observations, with optional class labels
/// and optional image geometry.
#[derive(Debug, Clone)]
pub struct BinaryDataset {
    samples: Vec<u8>, // row-major, m * n
    m: usize,
    n: usize,
    labels: Option<Vec<u32>>,
    geometry: Option<(usize, usize)>, // (width, height), width * height == n
    name: String,
    split_tag: SplitTag,
}

impl BinaryDataset {
    /// Build a dataset from row-major sample storage.
    pub fn new(
        samples: Vec<u8>,
        m: usize,
        n: usize,
        labels: Option<Vec<u32>>,
        name: impl Into<String>,
    ) -> Result<Self> {
        if samples.len() != m * n {
            return Err(Error::DimensionMismatch(format!(
                "sample storage holds {} entries, expected {}x{}",
                samples.len(),
                m,
                n
            )));
        }
        if let Some(bad) = samples.iter().position(|&v| v > 1) {
            return Err(Error::InvalidArgument(format!(
                "non-binary entry {} at flat index {}",
                samples[bad], bad
            )));
        }
        if let Some(ref l) = labels {
            if l.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} samples",
                    l.len(),
                    m
                )));
            }
        }
        Ok(BinaryDataset {
            samples,
            m,
            n,
            labels,
            geometry: None,
            name: name.into(),
            split_tag: SplitTag::Unsplit,
        })
    }

    pub fn from_rows(rows: &[Vec<u8>], labels: Option<Vec<u32>>, name: &str) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        let mut flat = Vec::with_capacity(m * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch("ragged rows".into()));
            }
            flat.extend_from_slice(r);
        }
        Self::new(flat, m, n, labels, name)
    }

    pub fn num_samples(&self) -> usize {
        self.m
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.samples[i * self.n..(i + 1) * self.n]
    }

    pub fn value(&self, i: usize, v: usize) -> u8 {
        self.samples[i * self.n + v]
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Class count inferred as 1 + max(label).
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |mx| mx as usize + 1))
    }

    pub fn geometry(&self) -> Option<(usize, usize)> {
        self.geometry
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split_tag(&self) -> SplitTag {
        self.split_tag
    }

    /// Attach (width, height) image geometry; `width * height` must equal
    /// the variable count.
    pub fn with_geometry(mut self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || width * height != self.n {
            return Err(Error::DimensionMismatch(format!(
                "geometry {}x{} does not cover {} variables",
                width, height, self.n
            )));
        }
        self.geometry = Some((width, height));
        Ok(self)
    }

    pub fn with_tag(mut self, tag: SplitTag) -> Self {
        self.split_tag = tag;
        self
    }

    /// Partition rows into train/valid/test parts. Row order within each
    /// part is the seeded shuffle order. Fractions must be positive and sum
    /// to 1; a fraction that floors to an empty part is an error.
    pub fn split(
        &self,
        fractions: (f64, f64, f64),
        seed: u64,
    ) -> Result<(BinaryDataset, BinaryDataset, BinaryDataset)> {
        let (ft, fv, fe) = fractions;
        if ft <= 0.0 || fv <= 0.0 || fe <= 0.0 {
            return Err(Error::InvalidArgument(
                "split fractions must be positive".into(),
            ));
        }
        if (ft + fv + fe - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "split fractions must sum to 1".into(),
            ));
        }
        if self.m < 3 {
            return Err(Error::InvalidArgument(
                "need at least 3 samples to split".into(),
            ));
        }
        let n_train = (self.m as f64 * ft).floor() as usize;
        let n_valid = (self.m as f64 * fv).floor() as usize;
        let n_test = self.m - n_train - n_valid;
        if n_train == 0 || n_valid == 0 || n_test == 0 {
            return Err(Error::InvalidArgument(format!(
                "split produces an empty part: {}/{}/{}",
                n_train, n_valid, n_test
            )));
        }
        let mut idx: Vec<usize> = (0..self.m).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);

        let take = |slice: &[usize], tag: SplitTag| -> BinaryDataset {
            let mut flat = Vec::with_capacity(slice.len() * self.n);
            let mut labels = self.labels.as_ref().map(|_| Vec::with_capacity(slice.len()));
            for &i in slice {
                flat.extend_from_slice(self.row(i));
                if let (Some(out), Some(src)) = (labels.as_mut(), self.labels.as_ref()) {
                    out.push(src[i]);
                }
            }
            BinaryDataset {
                samples: flat,
                m: slice.len(),
                n: self.n,
                labels,
                geometry: self.geometry,
                name: self.name.clone(),
                split_tag: tag,
            }
        };

        Ok((
            take(&idx[..n_train], SplitTag::Train),
            take(&idx[n_train..n_train + n_valid], SplitTag::Valid),
            take(&idx[n_train + n_valid..], SplitTag::Test),
        ))
    }

    /// Load a dataset from the canonical comma-separated 0/1 text format.
    pub fn load(path: impl AsRef<Path>, format: FileFormat) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, format, path)
    }

    fn parse(text: &str, format: FileFormat, path: &Path) -> Result<Self> {
        let mut rows: Vec<u8> = Vec::new();
        let mut labels: Vec<u32> = Vec::new();
        let mut n: Option<usize> = None;
        let mut m = 0usize;
        for (lineno0, line) in text.lines().enumerate() {
            let lineno = lineno0 + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let (vars, label) = match format {
                FileFormat::CsvUnlabeled => (&fields[..], None),
                FileFormat::CsvLabeled => {
                    if fields.len() < 2 {
                        return Err(Error::Parse {
                            path: path.to_path_buf(),
                            line: lineno,
                            msg: "labeled row needs at least one variable and a label".into(),
                        });
                    }
                    let (vals, lab) = fields.split_at(fields.len() - 1);
                    let label: u32 = lab[0].trim().parse().map_err(|_| Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno,
                        msg: format!("label '{}' is not a nonnegative integer", lab[0]),
                    })?;
                    (vals, Some(label))
                }
            };
            match n {
                None => n = Some(vars.len()),
                Some(expected) if expected != vars.len() => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno,
                        msg: format!("row has {} variables, expected {}", vars.len(), expected),
                    })
                }
                _ => {}
            }
            for f in vars {
                match f.trim() {
                    "0" => rows.push(0),
                    "1" => rows.push(1),
                    other => {
                        return Err(Error::Parse {
                            path: path.to_path_buf(),
                            line: lineno,
                            msg: format!("entry '{}' is not 0 or 1", other),
                        })
                    }
                }
            }
            if let Some(l) = label {
                labels.push(l);
            }
            m += 1;
        }
        if m == 0 {
            return Err(Error::EmptyDataset(path.display().to_string()));
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        let labels = match format {
            FileFormat::CsvLabeled => Some(labels),
            FileFormat::CsvUnlabeled => None,
        };
        BinaryDataset::new(rows, m, n.unwrap(), labels, name)
    }

    /// Write this dataset in the canonical format. Loading the result back
    /// reproduces the file byte for byte.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::with_capacity(self.m * (2 * self.n + 4));
        for i in 0..self.m {
            let row = self.row(i);
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                out.push(if *v == 0 { '0' } else { '1' });
            }
            if let Some(ref labels) = self.labels {
                out.push(',');
                out.push_str(&labels[i].to_string());
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// An assignment to a subset of the variables: sorted unique indices with a
/// parallel 0/1 value list. The empty evidence is legal and denotes the
/// query over no variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialEvidence {
    scope: Vec<usize>,
    values: Vec<u8>,
}

impl PartialEvidence {
    pub fn new(scope: Vec<usize>, values: Vec<u8>) -> Result<Self> {
        if scope.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "evidence scope has {} indices but {} values",
                scope.len(),
                values.len()
            )));
        }
        if !scope.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "evidence scope must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument(
                "evidence values must be 0 or 1".into(),
            ));
        }
        Ok(PartialEvidence { scope, values })
    }

    pub fn empty() -> Self {
        PartialEvidence {
            scope: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Restriction of a full sample to the given sorted scope.
    pub fn restrict(sample: &[u8], scope: &[usize]) -> Result<Self> {
        let values = scope
            .iter()
            .map(|&v| {
                sample.get(v).copied().ok_or(Error::ScopeOutOfRange {
                    index: v,
                    n_vars: sample.len(),
                })
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(scope.to_vec(), values)
    }

    pub fn len(&self) -> usize {
        self.scope.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scope.is_empty()
    }

    pub fn scope(&self) -> &[usize] {
        &self.scope
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn max_index(&self) -> Option<usize> {
        self.scope.last().copied()
    }

    /// Observed value of a variable, if it is in the scope.
    pub fn value_of(&self, var: usize) -> Option<u8> {
        self.scope
            .binary_search(&var)
            .ok()
            .map(|pos| self.values[pos])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u8)> + '_ {
        self.scope.iter().copied().zip(self.values.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn tmpfile(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_unlabeled() {
        let f = tmpfile("0,1,1,0\n0,1,1,0\n0,1,1,0\n");
        let ds = BinaryDataset::load(f.path(), FileFormat::CsvUnlabeled).unwrap();
        assert_eq!(ds.num_samples(), 3);
        assert_eq!(ds.num_vars(), 4);
        assert!(ds.labels().is_none());
        assert_eq!(ds.row(1), &[0, 1, 1, 0]);
    }

    #[test]
    fn load_labeled() {
        let f = tmpfile("0,1,2\n");
        let ds = BinaryDataset::load(f.path(), FileFormat::CsvLabeled).unwrap();
        assert_eq!(ds.num_samples(), 1);
        assert_eq!(ds.num_vars(), 2);
        assert_eq!(ds.labels(), Some(&[2u32][..]));
        assert_eq!(ds.num_classes(), Some(3));
    }

    #[test]
    fn load_rejects_non_binary_entry() {
        let f = tmpfile("0,1,7\n");
        let err = BinaryDataset::load(f.path(), FileFormat::CsvUnlabeled).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_rejects_ragged_rows() {
        let f = tmpfile("0,1\n0,1,1\n");
        let err = BinaryDataset::load(f.path(), FileFormat::CsvUnlabeled).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_rejects_empty_file() {
        let f = tmpfile("");
        assert!(matches!(
            BinaryDataset::load(f.path(), FileFormat::CsvUnlabeled),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn geometry_checks_dimensions() {
        let ds = BinaryDataset::new(vec![0; 784], 1, 784, None, "t").unwrap();
        let ds = ds.with_geometry(28, 28).unwrap();
        assert_eq!(ds.geometry(), Some((28, 28)));
        let ds2 = BinaryDataset::new(vec![0; 128], 1, 128, None, "t").unwrap();
        assert_eq!(ds2.with_geometry(16, 8).unwrap().geometry(), Some((16, 8)));
        let ds3 = BinaryDataset::new(vec![0; 784], 1, 784, None, "t").unwrap();
        assert!(ds3.with_geometry(28, 27).is_err());
    }

    #[test]
    fn split_partitions_rows() {
        let rows: Vec<Vec<u8>> = (0..10u8).map(|i| vec![i & 1, (i >> 1) & 1, (i >> 2) & 1, 1]).collect();
        let ds = BinaryDataset::from_rows(&rows, None, "t").unwrap();
        let (tr, va, te) = ds.split((0.6, 0.2, 0.2), 7).unwrap();
        assert_eq!(
            (tr.num_samples(), va.num_samples(), te.num_samples()),
            (6, 2, 2)
        );
        assert_eq!(tr.split_tag(), SplitTag::Train);
        let mut all: Vec<Vec<u8>> = Vec::new();
        for d in [&tr, &va, &te] {
            for i in 0..d.num_samples() {
                all.push(d.row(i).to_vec());
            }
        }
        all.sort();
        let mut orig: Vec<Vec<u8>> = rows.clone();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_is_seed_deterministic() {
        let rows: Vec<Vec<u8>> = (0..10u8).map(|i| vec![i & 1, (i >> 1) & 1]).collect();
        let ds = BinaryDataset::from_rows(&rows, None, "t").unwrap();
        let a = ds.split((0.6, 0.2, 0.2), 7).unwrap();
        let b = ds.split((0.6, 0.2, 0.2), 7).unwrap();
        for i in 0..a.0.num_samples() {
            assert_eq!(a.0.row(i), b.0.row(i));
        }
        for i in 0..a.2.num_samples() {
            assert_eq!(a.2.row(i), b.2.row(i));
        }
    }

    #[test]
    fn split_rejects_empty_part() {
        let rows: Vec<Vec<u8>> = vec![vec![0], vec![1], vec![0]];
        let ds = BinaryDataset::from_rows(&rows, None, "t").unwrap();
        // valid fraction floors to zero at m=3 with these fractions
        assert!(ds.split((0.9, 0.05, 0.05), 1).is_err());
    }

    #[test]
    fn write_load_round_trip_is_byte_exact() {
        let canonical = "0,1,1,0,2\n1,1,0,0,0\n";
        let f = tmpfile(canonical);
        let ds = BinaryDataset::load(f.path(), FileFormat::CsvLabeled).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        ds.write(out.path()).unwrap();
        let written = std::fs::read_to_string(out.path()).unwrap();
        assert_eq!(written, canonical);
    }

    #[test]
    fn evidence_validation() {
        assert!(PartialEvidence::new(vec![0, 2, 5], vec![1, 0, 1]).is_ok());
        assert!(PartialEvidence::new(vec![2, 0], vec![1, 0]).is_err());
        assert!(PartialEvidence::new(vec![0, 0], vec![1, 0]).is_err());
        assert!(PartialEvidence::new(vec![0], vec![2]).is_err());
        assert!(PartialEvidence::empty().is_empty());
        let ev = PartialEvidence::restrict(&[1, 0, 1], &[0, 2]).unwrap();
        assert_eq!(ev.value_of(2), Some(1));
        assert_eq!(ev.value_of(1), None);
    }

    proptest! {
        #[test]
        fn split_partition_property(m in 3usize..40, seed in 0u64..1000) {
            let rows: Vec<Vec<u8>> = (0..m).map(|i| vec![(i & 1) as u8, ((i >> 1) & 1) as u8, ((i >> 2) & 1) as u8]).collect();
            let ds = BinaryDataset::from_rows(&rows, None, "p").unwrap();
            if let Ok((tr, va, te)) = ds.split((0.5, 0.25, 0.25), seed) {
                prop_assert_eq!(tr.num_samples() + va.num_samples() + te.num_samples(), m);
                let mut all: Vec<Vec<u8>> = Vec::new();
                for d in [&tr, &va, &te] {
                    for i in 0..d.num_samples() { all.push(d.row(i).to_vec()); }
                }
                all.sort();
                let mut orig = rows.clone();
                orig.sort();
                prop_assert_eq!(all, orig);
            }
        }
    }
}
