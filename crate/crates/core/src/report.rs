//! Output artifacts: curve CSVs, step logs, JSON reports, and run manifests.
//! Every file is written atomically (temp file in the target directory, then rename).

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::multimodal::CoverageCurve;
use crate::rephrase::SweepStep;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `coverage,value` rows with six fractional digits, then `# area,<area>`.
pub fn curve_csv(curve: &CoverageCurve) -> String {
    let mut out = String::from("coverage,value\n");
    for p in curve.points() {
        writeln!(out, "{:.6},{:.6}", p.coverage, p.value).unwrap();
    }
    writeln!(out, "# area,{:.6}", curve.area()).unwrap();
    out
}

/// Parses the output of [`curve_csv`] back into `(coverage, value)` rows and the area.
pub fn parse_curve_csv(text: &str) -> Result<(Vec<(f64, f64)>, f64)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "coverage,value")) => {}
        _ => return Err(Error::Parse { line: 1, message: "expected header coverage,value".into() }),
    }
    let mut rows = Vec::new();
    let mut area = None;
    for (i, line) in lines {
        let bad = |m: &str| Error::Parse { line: i + 1, message: m.to_string() };
        if let Some(rest) = line.strip_prefix("# area,") {
            area = Some(rest.trim().parse::<f64>().map_err(|_| bad("bad area"))?);
            continue;
        }
        let (c, v) = line.split_once(',').ok_or_else(|| bad("expected two columns"))?;
        let c = c.parse::<f64>().map_err(|_| bad("bad coverage"))?;
        let v = v.parse::<f64>().map_err(|_| bad("bad value"))?;
        rows.push((c, v));
    }
    let area = area.ok_or(Error::Parse { line: text.lines().count(), message: "missing area row".into() })?;
    Ok((rows, area))
}

/// Step log rows `trial,step,instance_id,priority,expression_id`.
pub fn step_log_csv<'a>(trials: impl IntoIterator<Item = (usize, &'a [SweepStep])>) -> String {
    let mut out = String::from("trial,step,instance_id,priority,expression_id\n");
    for (trial, steps) in trials {
        for s in steps {
            writeln!(out, "{trial},{},{},{},{}", s.step, s.instance_id, s.priority, s.expression_id).unwrap();
        }
    }
    out
}

/// Record of one CLI invocation, sufficient to re-run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Flags as passed, excluding the output directory.
    pub args: Vec<String>,
    /// SHA-256 of each input file, in argument order.
    pub input_hashes: Vec<InputHash>,
    pub seeds: Vec<u64>,
    pub toolkit_version: String,
    pub outputs: Vec<OutputFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub sha256: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `files` into `dir`, then the manifest listing them.
pub fn write_outputs(dir: &Path, files: &[(String, Vec<u8>)], mut manifest: RunManifest) -> Result<RunManifest> {
    std::fs::create_dir_all(dir)?;
    manifest.outputs.clear();
    for (name, bytes) in files {
        write_atomic(&dir.join(name), bytes)?;
        manifest.outputs.push(OutputFile { name: name.clone(), sha256: sha256_hex(bytes) });
    }
    write_atomic(&dir.join(MANIFEST_FILE), &to_json_bytes(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_csv_format() {
        let curve = CoverageCurve::from_values(3, vec![100.0 / 3.0, 0.5, 0.0]).unwrap();
        let text = curve_csv(&curve);
        assert_eq!(
            text,
            "coverage,value\n1.000000,33.333333\n0.666667,0.500000\n0.333333,0.000000\n# area,11.277778\n"
        );
        let (rows, area) = parse_curve_csv(&text).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(area, 11.277778);
        assert!(parse_curve_csv("nope\n").is_err());
    }

    #[test]
    fn atomic_write_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = RunManifest {
            command: "accuracy".into(),
            args: vec!["--seed".into(), "1".into()],
            input_hashes: vec![],
            seeds: vec![1],
            toolkit_version: TOOLKIT_VERSION.into(),
            outputs: vec![],
        };
        let written = write_outputs(dir.path(), &[("a.json".into(), b"{}\n".to_vec())], manifest).unwrap();
        assert_eq!(written.outputs[0].sha256, sha256_hex(b"{}\n"));
        assert_eq!(read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap(), written);
        assert_eq!(std::fs::read(dir.path().join("a.json")).unwrap(), b"{}\n");
    }
}
