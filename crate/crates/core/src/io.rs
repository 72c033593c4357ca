//! Matrix Market files, JSON model manifests and reduction directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irka::{ReductionResult, TwoStepReduction};
use crate::linalg::Mat;
use crate::model::{validate_model, NoiseKind, StateSpaceModel};

pub const MANIFEST_FILE: &str = "model.json";

/// Dense `array real general` Matrix Market text, column-major, 17 significant digits.
pub fn format_matrix_market(m: &Mat) -> String {
    let mut s = String::with_capacity(32 + m.len() * 25);
    s.push_str("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(s, "{} {}", m.nrows(), m.ncols());
    for v in m.iter() {
        let _ = writeln!(s, "{v:.16e}");
    }
    s
}

pub fn write_matrix_market(path: &Path, m: &Mat) -> Result<()> {
    fs::write(path, format_matrix_market(m))?;
    Ok(())
}

pub fn read_matrix_market(path: &Path) -> Result<Mat> {
    let text = fs::read_to_string(path)?;
    parse_matrix_market(&text).map_err(|message| Error::Parse { file: path.display().to_string(), message })
}

/// Parses `array` and `coordinate` real matrices (`general`, `symmetric`, `skew-symmetric`).
pub fn parse_matrix_market(text: &str) -> std::result::Result<Mat, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let fields: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(format!("invalid header '{header}'"));
    }
    let coordinate = match fields[2].as_str() {
        "array" => false,
        "coordinate" => true,
        f => return Err(format!("unsupported format '{f}'")),
    };
    if !matches!(fields[3].as_str(), "real" | "double" | "integer") {
        return Err(format!("unsupported field '{}'", fields[3]));
    }
    let symmetry = fields[4].clone();
    if !matches!(symmetry.as_str(), "general" | "symmetric" | "skew-symmetric") {
        return Err(format!("unsupported symmetry '{symmetry}'"));
    }
    let mut body = lines.map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('%'));
    let size_line = body.next().ok_or("missing size line")?;
    let size: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| format!("invalid size line '{size_line}'")))
        .collect::<std::result::Result<_, _>>()?;
    let num = |t: &str| t.parse::<f64>().map_err(|_| format!("invalid number '{t}'"));
    let (rows, cols) = match size.as_slice() {
        [r, c] if !coordinate => (*r, *c),
        [r, c, _] if coordinate => (*r, *c),
        _ => return Err(format!("invalid size line '{size_line}'")),
    };
    let mut m = Mat::zeros(rows, cols);
    let sign = if symmetry == "skew-symmetric" { -1.0 } else { 1.0 };
    if coordinate {
        let nnz = size[2];
        for _ in 0..nnz {
            let line = body.next().ok_or("fewer entries than declared")?;
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 3 {
                return Err(format!("invalid entry '{line}'"));
            }
            let i: usize = t[0].parse().map_err(|_| format!("invalid index '{}'", t[0]))?;
            let j: usize = t[1].parse().map_err(|_| format!("invalid index '{}'", t[1]))?;
            if i == 0 || j == 0 || i > rows || j > cols {
                return Err(format!("index ({i}, {j}) out of range"));
            }
            let v = num(t[2])?;
            m[(i - 1, j - 1)] = v;
            if symmetry != "general" && i != j {
                m[(j - 1, i - 1)] = sign * v;
            }
        }
    } else if symmetry == "general" {
        for v in m.iter_mut() {
            *v = num(body.next().ok_or("fewer entries than declared")?)?;
        }
    } else {
        if rows != cols {
            return Err("symmetric storage requires a square matrix".into());
        }
        let diag = usize::from(symmetry == "symmetric");
        for j in 0..cols {
            for i in j + 1 - diag..rows {
                let v = num(body.next().ok_or("fewer entries than declared")?)?;
                m[(i, j)] = v;
                m[(j, i)] = sign * v;
            }
        }
    }
    if body.next().is_some() {
        return Err("more entries than declared".into());
    }
    Ok(m)
}

/// JSON manifest naming one Matrix Market file per coefficient; paths are
/// relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub kind: NoiseKind,
    pub a: String,
    pub b1: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<String>>,
    pub c: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<String>,
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

/// Writes the coefficient files and `model.json` into `dir`; returns the manifest path.
pub fn save_model(model: &StateSpaceModel, dir: &Path, metadata: serde_json::Map<String, serde_json::Value>) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut manifest = ModelManifest {
        kind: model.kind,
        a: "A.mtx".into(),
        b1: "B1.mtx".into(),
        b2: None,
        n: None,
        c: "C.mtx".into(),
        k: None,
        metadata,
    };
    write_matrix_market(&dir.join("A.mtx"), &model.a)?;
    write_matrix_market(&dir.join("B1.mtx"), &model.b1)?;
    write_matrix_market(&dir.join("C.mtx"), &model.c)?;
    if let Some(b2) = &model.b2 {
        write_matrix_market(&dir.join("B2.mtx"), b2)?;
        manifest.b2 = Some("B2.mtx".into());
    }
    if let Some(ns) = &model.n {
        let mut names = Vec::with_capacity(ns.len());
        for (i, n) in ns.iter().enumerate() {
            let name = format!("N{}.mtx", i + 1);
            write_matrix_market(&dir.join(&name), n)?;
            names.push(name);
        }
        manifest.n = Some(names);
    }
    if model.kind != NoiseKind::Deterministic {
        write_matrix_market(&dir.join("K.mtx"), &model.k)?;
        manifest.k = Some("K.mtx".into());
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

/// Loads and validates a model; accepts a manifest path or a directory containing `model.json`.
pub fn load_model(path: &Path) -> Result<StateSpaceModel> {
    let (model, _) = load_model_with_metadata(path)?;
    Ok(model)
}

pub fn load_model_with_metadata(path: &Path) -> Result<(StateSpaceModel, serde_json::Map<String, serde_json::Value>)> {
    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&path)?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse { file: path.display().to_string(), message: e.to_string() })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let read = |name: &str| read_matrix_market(&base.join(name));
    let model = StateSpaceModel {
        a: read(&manifest.a)?,
        b1: read(&manifest.b1)?,
        b2: manifest.b2.as_deref().map(read).transpose()?,
        n: manifest.n.as_ref().map(|ns| ns.iter().map(|s| read(s)).collect::<Result<Vec<_>>>()).transpose()?,
        c: read(&manifest.c)?,
        k: manifest.k.as_deref().map(read).transpose()?.unwrap_or_else(|| Mat::zeros(0, 0)),
        kind: manifest.kind,
    };
    let violations = validate_model(&model);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok((model, manifest.metadata))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReductionRecord {
    pub converged: bool,
    pub iterations: usize,
    /// Sorted reduced spectra as `[re, im]` pairs, one list per iterate.
    pub history: Vec<Vec<[f64; 2]>>,
}

impl From<&ReductionResult> for ReductionRecord {
    fn from(r: &ReductionResult) -> Self {
        Self {
            converged: r.converged,
            iterations: r.iterations,
            history: r.history.iter().map(|h| h.iter().map(|z| [z.re, z.im]).collect()).collect(),
        }
    }
}

/// Reduced model, bases `V.mtx`/`Wb.mtx` and `reduction.json` in `dir`.
pub fn save_reduction(result: &ReductionResult, dir: &Path) -> Result<()> {
    save_model(&result.reduced, dir, serde_json::Map::new())?;
    write_matrix_market(&dir.join("V.mtx"), &result.v)?;
    write_matrix_market(&dir.join("Wb.mtx"), &result.wb)?;
    let record = ReductionRecord::from(result);
    fs::write(dir.join("reduction.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    Ok(())
}

/// Both subsystems of a two-step reduction, in `part1/` and `part2/`.
pub fn save_two_step(result: &TwoStepReduction, dir: &Path) -> Result<()> {
    save_reduction(&result.part1, &dir.join("part1"))?;
    save_reduction(&result.part2, &dir.join("part2"))
}

pub fn load_reduction(dir: &Path) -> Result<(StateSpaceModel, Mat, Mat, ReductionRecord)> {
    let model = load_model(dir)?;
    let v = read_matrix_market(&dir.join("V.mtx"))?;
    let wb = read_matrix_market(&dir.join("Wb.mtx"))?;
    let file = dir.join("reduction.json");
    let text = fs::read_to_string(&file)?;
    let record = serde_json::from_str(&text).map_err(|e| Error::Parse { file: file.display().to_string(), message: e.to_string() })?;
    Ok((model, v, wb, record))
}
