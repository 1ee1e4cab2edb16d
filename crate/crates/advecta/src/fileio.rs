//! Text file formats: gridded frames, packed spectral vectors, generator
//! dumps, filter traces and truth sidecars, plus atomic writes and run
//! manifests.
//!
//! Everything is line-oriented plain text. Floating-point values are
//! written in the shortest form that round-trips through `f64` parsing, so
//! files diff cleanly and reload bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grid::{GridSpec, RealGridField};
use crate::spectral::{PackingForm, SpectralCoeffVector, WavenumberSets};
use crate::{AdvectaError, Result};

fn data_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> AdvectaError {
    AdvectaError::Data(format!("{}:{}: {}", path.display(), line, msg))
}

/// Write `content` to `path` via a temporary file and rename, so readers
/// never observe a partial file.
pub fn atomic_write(path: &Path, content: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    fs::write(&tmp, content)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Lines<'a> {
    path: &'a Path,
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Lines {
            path,
            lines: text.lines().collect(),
            pos: 0,
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines[self.pos..]
            .iter()
            .map(|l| l.trim())
            .find(|l| !l.is_empty())
    }

    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        while self.pos < self.lines.len() {
            let line = self.lines[self.pos];
            self.pos += 1;
            if !line.trim().is_empty() {
                return Some((self.pos, line.trim()));
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.next_content().ok_or_else(|| {
            data_err(
                self.path,
                self.lines.len(),
                format!("expected {what}, found end of file"),
            )
        })
    }
}

fn parse_floats(path: &Path, line_no: usize, line: &str, expect: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| data_err(path, line_no, format!("cannot parse value `{t}`")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != expect {
        return Err(data_err(
            path,
            line_no,
            format!("expected {expect} values, found {}", vals.len()),
        ));
    }
    Ok(vals)
}

/// Serialize a frame sequence: each frame is preceded by `FRAME <t>`, then
/// a `GRID <n1> <n2>` header and `n1` rows of `n2` values.
pub fn frames_to_string(frames: &[(f64, &RealGridField)]) -> String {
    let mut out = String::new();
    for (t, field) in frames {
        let grid = field.grid();
        writeln!(out, "FRAME {t}").unwrap();
        writeln!(out, "GRID {} {}", grid.n1(), grid.n2()).unwrap();
        for row in field.values().rows() {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                write!(out, "{v}").unwrap();
                first = false;
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_frames(path: &Path, frames: &[(f64, &RealGridField)]) -> Result<()> {
    atomic_write(path, frames_to_string(frames).as_bytes())
}

/// Read a frame file: either one bare `GRID` block or a sequence of
/// `FRAME <t>` blocks.
pub fn read_frames(path: &Path) -> Result<Vec<(f64, RealGridField)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = Lines::new(path, &text);
    let mut frames = Vec::new();
    let mut implicit_t = 0.0f64;

    while let Some(next) = lines.peek() {
        let (line_no, header) = lines.expect("frame or grid header")?;
        let (t, grid) = if next.starts_with("FRAME") {
            let rest = header.strip_prefix("FRAME").unwrap().trim();
            let t: f64 = rest
                .parse()
                .map_err(|_| data_err(path, line_no, format!("bad frame time `{rest}`")))?;
            let (gl, gheader) = lines.expect("GRID header")?;
            (t, parse_grid_header(path, gl, gheader)?)
        } else if header.starts_with("GRID") {
            let g = parse_grid_header(path, line_no, header)?;
            let t = implicit_t;
            implicit_t += 1.0;
            (t, g)
        } else {
            return Err(data_err(
                path,
                line_no,
                format!("expected FRAME or GRID header, found `{header}`"),
            ));
        };
        let mut values = Array2::zeros((grid.n1(), grid.n2()));
        for i in 0..grid.n1() {
            let (ln, row) = lines.expect("row of grid values")?;
            let vals = parse_floats(path, ln, row, grid.n2())?;
            for (j, v) in vals.into_iter().enumerate() {
                values[[i, j]] = v;
            }
        }
        frames.push((t, RealGridField::new(grid, values)?));
    }
    if frames.is_empty() {
        return Err(data_err(path, 1, "file contains no frames"));
    }
    Ok(frames)
}

fn parse_grid_header(path: &Path, line_no: usize, line: &str) -> Result<GridSpec> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "GRID" {
        return Err(data_err(path, line_no, format!("bad grid header `{line}`")));
    }
    let n1: usize = parts[1]
        .parse()
        .map_err(|_| data_err(path, line_no, "bad n1"))?;
    let n2: usize = parts[2]
        .parse()
        .map_err(|_| data_err(path, line_no, "bad n2"))?;
    GridSpec::new(n1, n2)
}

/// `SPEC <K> <n1> <n2> <16|18>` followed by K coefficient lines.
pub fn write_spectral_vector(path: &Path, vec: &SpectralCoeffVector) -> Result<()> {
    let sets = vec.sets();
    if sets.cap().is_some() {
        return Err(AdvectaError::Data(
            "capped coefficient vectors have no file representation".into(),
        ));
    }
    let form = match sets.form() {
        PackingForm::Full => 16,
        PackingForm::Reduced => 18,
    };
    let mut out = String::new();
    writeln!(
        out,
        "SPEC {} {} {} {form}",
        sets.dim(),
        sets.grid().n1(),
        sets.grid().n2()
    )
    .unwrap();
    for v in vec.coeffs() {
        writeln!(out, "{v}").unwrap();
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_spectral_vector(path: &Path) -> Result<SpectralCoeffVector> {
    let text = fs::read_to_string(path)?;
    let mut lines = Lines::new(path, &text);
    let (hl, header) = lines.expect("SPEC header")?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 5 || parts[0] != "SPEC" {
        return Err(data_err(path, hl, format!("bad SPEC header `{header}`")));
    }
    let k: usize = parts[1].parse().map_err(|_| data_err(path, hl, "bad K"))?;
    let n1: usize = parts[2].parse().map_err(|_| data_err(path, hl, "bad n1"))?;
    let n2: usize = parts[3].parse().map_err(|_| data_err(path, hl, "bad n2"))?;
    let form = match parts[4] {
        "16" => PackingForm::Full,
        "18" => PackingForm::Reduced,
        other => return Err(data_err(path, hl, format!("bad form `{other}`"))),
    };
    let sets = WavenumberSets::build(GridSpec::new(n1, n2)?, form);
    if sets.dim() != k {
        return Err(data_err(
            path,
            hl,
            format!("header K = {k} does not match packing dimension {}", sets.dim()),
        ));
    }
    let mut coeffs = Array1::zeros(k);
    for i in 0..k {
        let (ln, line) = lines.expect("coefficient")?;
        coeffs[i] = parse_floats(path, ln, line, 1)?[0];
    }
    if let Some((ln, extra)) = lines.next_content() {
        return Err(data_err(path, ln, format!("trailing garbage `{extra}`")));
    }
    SpectralCoeffVector::new(sets, coeffs)
}

/// `GMAT <K>` followed by K rows of K entries with 17 significant digits.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(AdvectaError::Data("matrix dump expects a square matrix".into()));
    }
    let mut out = String::new();
    writeln!(out, "GMAT {}", m.nrows()).unwrap();
    for row in m.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            write!(out, "{v:.16e}").unwrap();
            first = false;
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = Lines::new(path, &text);
    let (hl, header) = lines.expect("GMAT header")?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 2 || parts[0] != "GMAT" {
        return Err(data_err(path, hl, format!("bad GMAT header `{header}`")));
    }
    let k: usize = parts[1].parse().map_err(|_| data_err(path, hl, "bad K"))?;
    let mut m = Array2::zeros((k, k));
    for i in 0..k {
        let (ln, line) = lines.expect("matrix row")?;
        let vals = parse_floats(path, ln, line, k)?;
        for (j, v) in vals.into_iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    if let Some((ln, extra)) = lines.next_content() {
        return Err(data_err(path, ln, format!("trailing garbage `{extra}`")));
    }
    Ok(m)
}

/// Filter trace: per step `STEP <t>`, a `MEAN` line with the augmented
/// mean, and optionally the lower triangle of the covariance.
pub fn write_filter_trace(
    path: &Path,
    times: &[f64],
    beliefs: &[crate::dstm::KalmanBelief],
    with_covariance: bool,
) -> Result<()> {
    let mut out = String::new();
    let dim = beliefs.first().map(|b| b.dim()).unwrap_or(0);
    writeln!(out, "FILTER {} {}", dim, beliefs.len()).unwrap();
    for (t, b) in times.iter().zip(beliefs) {
        writeln!(out, "STEP {t}").unwrap();
        out.push_str("MEAN");
        for v in b.mean.iter() {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
        if with_covariance {
            writeln!(out, "COV").unwrap();
            for i in 0..b.dim() {
                let mut first = true;
                for j in 0..=i {
                    if !first {
                        out.push(' ');
                    }
                    write!(out, "{}", b.cov[[i, j]]).unwrap();
                    first = false;
                }
                out.push('\n');
            }
        }
    }
    atomic_write(path, out.as_bytes())
}

/// Truth sidecar: clean coefficient trajectories of a simulation.
pub fn write_truth(
    path: &Path,
    times: &[f64],
    alpha: &[Array1<f64>],
    beta: &[Array1<f64>],
) -> Result<()> {
    let k = alpha.first().map(|a| a.len()).unwrap_or(0);
    let mut out = String::new();
    writeln!(out, "TRUTH {} {}", k, alpha.len()).unwrap();
    for ((t, a), b) in times.iter().zip(alpha).zip(beta) {
        writeln!(out, "STEP {t}").unwrap();
        out.push_str("ALPHA");
        for v in a.iter() {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
        out.push_str("BETA");
        for v in b.iter() {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_truth(path: &Path) -> Result<(Vec<f64>, Vec<Array1<f64>>, Vec<Array1<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = Lines::new(path, &text);
    let (hl, header) = lines.expect("TRUTH header")?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "TRUTH" {
        return Err(data_err(path, hl, format!("bad TRUTH header `{header}`")));
    }
    let k: usize = parts[1].parse().map_err(|_| data_err(path, hl, "bad K"))?;
    let steps: usize = parts[2].parse().map_err(|_| data_err(path, hl, "bad step count"))?;
    let mut times = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (ln, step) = lines.expect("STEP line")?;
        let t: f64 = step
            .strip_prefix("STEP")
            .ok_or_else(|| data_err(path, ln, "expected STEP"))?
            .trim()
            .parse()
            .map_err(|_| data_err(path, ln, "bad step time"))?;
        let (la, aline) = lines.expect("ALPHA line")?;
        let avals = parse_floats(
            path,
            la,
            aline
                .strip_prefix("ALPHA")
                .ok_or_else(|| data_err(path, la, "expected ALPHA"))?,
            k,
        )?;
        let (lb, bline) = lines.expect("BETA line")?;
        let bvals = parse_floats(
            path,
            lb,
            bline
                .strip_prefix("BETA")
                .ok_or_else(|| data_err(path, lb, "expected BETA"))?,
            k,
        )?;
        times.push(t);
        alpha.push(Array1::from(avals));
        beta.push(Array1::from(bvals));
    }
    Ok((times, alpha, beta))
}

/// SHA-256 of a byte slice, hex-encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// One emitted file recorded in a run manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestOutput {
    pub path: String,
    pub sha256: String,
    /// Min/max used for image normalization, when applicable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization: Option<(f64, f64)>,
}

/// Reproducibility record written next to every command's outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: Option<String>,
    pub data_sha256: Option<String>,
    pub seed: Option<u64>,
    pub outputs: Vec<ManifestOutput>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            command: command.to_string(),
            config_sha256: None,
            data_sha256: None,
            seed: None,
            outputs: Vec::new(),
        }
    }

    pub fn record(&mut self, path: &Path, normalization: Option<(f64, f64)>) -> Result<()> {
        self.outputs.push(ManifestOutput {
            path: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            sha256: sha256_file(path)?,
            normalization,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.toml");
        let text = toml::to_string_pretty(self)
            .map_err(|e| AdvectaError::Numeric(format!("manifest serialization failed: {e}")))?;
        atomic_write(&path, text.as_bytes())?;
        Ok(path)
    }
}
