//! Filesystem access: LTR dataset files, checkpoints, click logs, CSV output.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use cltr_core::dataset::{generate_synthetic, parse_ltr, write_ltr};
use cltr_core::{Dataset, Query};

use crate::config::{DatasetSource, ExperimentConfig};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn parse_ltr_file(path: &Path) -> Result<Vec<Query>> {
    parse_ltr(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// Reads three split files, zero-padding features to the widest split.
pub fn read_dataset_files(train: &Path, validation: &Path, test: &Path) -> Result<Dataset> {
    let mut splits = [
        parse_ltr_file(train)?,
        parse_ltr_file(validation)?,
        parse_ltr_file(test)?,
    ];
    let dim = splits
        .iter()
        .flatten()
        .flat_map(|q| &q.documents)
        .map(|d| d.features.len())
        .max()
        .unwrap_or(0);
    for d in splits.iter_mut().flatten().flat_map(|q| &mut q.documents) {
        d.features.resize(dim, 0.0);
    }
    let [train, validation, test] = splits;
    Ok(Dataset::new(train, validation, test, dim)?)
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    write_text(&dir.join("train.txt"), &write_ltr(&ds.train))?;
    write_text(&dir.join("validation.txt"), &write_ltr(&ds.validation))?;
    write_text(&dir.join("test.txt"), &write_ltr(&ds.test))
}

/// The dataset for one seed: regenerated for synthetic sources, read from
/// disk otherwise.
pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSource::Synthetic {
            n_queries,
            docs_per_query,
            feature_dim,
        } => Ok(generate_synthetic(
            *n_queries,
            *docs_per_query,
            *feature_dim,
            seed,
        )?),
        DatasetSource::Files {
            train,
            validation,
            test,
        } => read_dataset_files(train, validation, test),
    }
}

/// Quotes a CSV field when it holds a separator, quote or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(10, 4, 3, 5).unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let back = read_dataset_files(
            &dir.path().join("train.txt"),
            &dir.path().join("validation.txt"),
            &dir.path().join("test.txt"),
        )
        .unwrap();
        assert_eq!(back.feature_dim, 3);
        assert_eq!(back.train.len(), ds.train.len());
        assert_eq!(write_ltr(&back.test), write_ltr(&ds.test));
    }

    #[test]
    fn ragged_splits_are_padded() {
        let dir = tempfile::tempdir().unwrap();
        write_text(&dir.path().join("a"), "1 qid:1 1:1\n").unwrap();
        write_text(&dir.path().join("b"), "3 qid:2 4:1\n").unwrap();
        write_text(&dir.path().join("c"), "0 qid:3 2:1\n").unwrap();
        let ds = read_dataset_files(
            &dir.path().join("a"),
            &dir.path().join("b"),
            &dir.path().join("c"),
        )
        .unwrap();
        assert_eq!(ds.feature_dim, 4);
        assert_eq!(ds.train[0].documents[0].features, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(parse_ltr_file(Path::new("/nonexistent/x.txt")).is_err());
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }
}
