//! CSV and manifest plumbing for experiment results.
//!
//! All result files follow one convention: comma separators, `.` decimal
//! points, LF line endings, UTF-8, a header row, and a trailing comment
//! line pointing at the run manifest. Floats are written in Rust's shortest
//! round-trip form, so identical computations produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Trailing comment appended to every result CSV.
pub const MANIFEST_REFERENCE: &str = "# manifest: manifest.json";

/// Shortest round-trip decimal form of a float; deterministic across runs.
pub fn format_float(v: f64) -> String {
    format!("{v}")
}

/// SHA-256 of raw bytes as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Run manifest written next to every experiment's result files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// Experiment kind that produced the artifacts.
    pub kind: String,
    /// SHA-256 of the config file bytes.
    pub config_hash: String,
    /// Master seed after any environment override.
    pub master_seed: u64,
    /// Component versions, keyed by crate name.
    pub versions: BTreeMap<String, String>,
    /// Unix timestamp of the run; the only field expected to vary between
    /// reruns of an identical config.
    pub created_unix: u64,
}

impl Manifest {
    pub fn new(kind: &str, config_bytes: &[u8], master_seed: u64) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert(
            env!("CARGO_PKG_NAME").to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        );
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Manifest {
            kind: kind.to_string(),
            config_hash: sha256_hex(config_bytes),
            master_seed,
            versions,
            created_unix,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Writes a result CSV: header, rows, and the manifest reference line.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        text.push_str(&row.join(","));
        text.push('\n');
    }
    text.push_str(MANIFEST_REFERENCE);
    text.push('\n');
    file.write_all(text.as_bytes())?;
    Ok(())
}

/// Writes a square matrix with state ids labelling both axes.
pub fn write_matrix_csv(path: &Path, ids: &[String], matrix: &DMatrix<f64>) -> Result<()> {
    let n = ids.len();
    if matrix.nrows() != n || matrix.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{} but there are {n} state ids",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let mut header: Vec<&str> = Vec::with_capacity(n + 1);
    header.push("state");
    header.extend(ids.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            let mut row = Vec::with_capacity(n + 1);
            row.push(ids[i].clone());
            row.extend((0..n).map(|j| format_float(matrix[(i, j)])));
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}

/// Reads a square matrix written by [`write_matrix_csv`] (or prepared by
/// hand in the same layout). Blank lines and `#` comment lines are skipped,
/// so result files round-trip through their own manifest trailer.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim()))
        .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'));
    let field = |line_no: usize| format!("{}:{line_no}", path.display());
    let (header_no, header) = lines.next().ok_or_else(|| Error::Config {
        field: path.display().to_string(),
        message: "matrix file has no header row".into(),
    })?;
    let mut columns = header.split(',');
    if columns.next() != Some("state") {
        return Err(Error::Config {
            field: field(header_no),
            message: "matrix header must start with a `state` column".into(),
        });
    }
    let ids: Vec<String> = columns.map(str::to_string).collect();
    let n = ids.len();
    if n == 0 {
        return Err(Error::Config {
            field: field(header_no),
            message: "matrix header lists no state ids".into(),
        });
    }
    let mut matrix = DMatrix::zeros(n, n);
    for i in 0..n {
        let (line_no, line) = lines.next().ok_or_else(|| Error::Config {
            field: path.display().to_string(),
            message: format!("expected {n} matrix rows, found {i}"),
        })?;
        let mut cells = line.split(',');
        let row_id = cells.next().unwrap_or("");
        if row_id != ids[i] {
            return Err(Error::Config {
                field: field(line_no),
                message: format!("row label `{row_id}` does not match header id `{}`", ids[i]),
            });
        }
        for j in 0..n {
            let cell = cells.next().ok_or_else(|| Error::Config {
                field: field(line_no),
                message: format!("row has fewer than {n} value columns"),
            })?;
            matrix[(i, j)] = cell.parse::<f64>().map_err(|e| Error::Config {
                field: field(line_no),
                message: format!("column {} (`{cell}`) is not a number: {e}", j + 2),
            })?;
        }
        if cells.next().is_some() {
            return Err(Error::Config {
                field: field(line_no),
                message: format!("row has more than {n} value columns"),
            });
        }
    }
    if let Some((line_no, _)) = lines.next() {
        return Err(Error::Config {
            field: field(line_no),
            message: format!("unexpected content after {n} matrix rows"),
        });
    }
    Ok((ids, matrix))
}

/// Writes a probability vector as `state_id,probability` rows.
pub fn write_distribution_csv(path: &Path, ids: &[String], values: &[f64]) -> Result<()> {
    if ids.len() != values.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} state ids but {} probabilities",
            ids.len(),
            values.len()
        )));
    }
    let rows: Vec<Vec<String>> = ids
        .iter()
        .zip(values)
        .map(|(id, &v)| vec![id.clone(), format_float(v)])
        .collect();
    write_csv(path, &["state_id", "probability"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        let ids = vec!["a".to_string(), "b".to_string()];
        let matrix =
            DMatrix::from_row_slice(2, 2, &[4.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 4.0 / 3.0]);
        write_matrix_csv(&path, &ids, &matrix).unwrap();
        let (read_ids, read_matrix) = read_matrix_csv(&path).unwrap();
        assert_eq!(read_ids, ids);
        assert_eq!(read_matrix, matrix);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.ends_with("# manifest: manifest.json\n"));
        assert!(!text.contains('\r'));
        assert!(text.starts_with("state,a,b\n"));
    }

    #[test]
    fn reader_skips_comments_and_names_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(
            &path,
            "# produced by hand\nstate,a,b\na,1.0,0.5\n\n# interlude\nb,0.5,oops\n",
        )
        .unwrap();
        let err = read_matrix_csv(&path).unwrap_err();
        match err {
            Error::Config { field, message } => {
                assert!(field.ends_with(":6"), "diagnostic names line 6: {field}");
                assert!(message.contains("oops"));
            }
            other => panic!("expected a config error, got {other}"),
        }

        fs::write(&path, "state,a,b\nwrong,1.0,0.5\nb,0.5,1.0\n").unwrap();
        assert!(matches!(
            read_matrix_csv(&path),
            Err(Error::Config { .. })
        ));

        fs::write(&path, "id,a\n").unwrap();
        assert!(matches!(read_matrix_csv(&path), Err(Error::Config { .. })));
    }

    #[test]
    fn distribution_and_manifest_formats() {
        let dir = tempfile::tempdir().unwrap();
        let dist_path = dir.path().join("pi.csv");
        let ids = vec!["u".to_string(), "v".to_string()];
        write_distribution_csv(&dist_path, &ids, &[2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let text = fs::read_to_string(&dist_path).unwrap();
        assert!(text.starts_with("state_id,probability\n"));
        assert!(text.contains("u,0.6666666666666666\n"));
        assert!(text.ends_with("# manifest: manifest.json\n"));

        let manifest = Manifest::new("chain-stationary", b"{}", 7);
        assert_eq!(manifest.config_hash.len(), 64);
        assert_eq!(manifest.master_seed, 7);
        assert!(manifest.versions.contains_key("augkern"));
        let manifest_path = dir.path().join("manifest.json");
        manifest.write(&manifest_path).unwrap();
        let read: Manifest =
            serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
        assert_eq!(read, manifest);
    }

    #[test]
    fn floats_print_shortest_round_trip() {
        assert_eq!(format_float(0.5), "0.5");
        assert_eq!(format_float(2.0 / 3.0), "0.6666666666666666");
        assert_eq!(format_float(1.0), "1");
        assert_eq!(format_float(-0.125), "-0.125");
        let v: f64 = "0.6666666666666666".parse().unwrap();
        assert_eq!(v, 2.0 / 3.0);
    }
}
