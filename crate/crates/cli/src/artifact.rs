//! On-disk formats: CSV tables, the binary model blob, content hashes and
//! per-artifact seeds.
//!
//! Model blob layout (all integers and floats little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `RSTBMODL` |
//! | 4 | format version (`u32`, currently 1) |
//! | 8 | dimension `n` (`u64`) |
//! | 8 | model seed (`u64`) |
//! | 8 | descriptor length `d` (`u64`) |
//! | d | descriptor JSON: model spec, rescale factor, envelope warning |
//! | 8n | `H₀` eigenvalues |
//! | 8n | `A` eigenvalues |
//! | 8n² | `A` in the `H₀` eigenbasis, row-major |
//! | 8n² | eigenvectors of `A` (as columns), row-major |

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use relaxstab::ensemble::{ModelSpec, Spectrum, TailoredModel};
use relaxstab::linalg::Matrix;
use relaxstab::series::{TimeGrid, TimeSeries};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"RSTBMODL";
pub const MODEL_VERSION: u32 = 1;

pub const SERIES_HEADER: [&str; 2] = ["t", "value"];
pub const KERNEL_HEADER: [&str; 2] = ["tau", "K"];
pub const BETA_HEADER: [&str; 3] = ["mu", "beta", "rms"];
pub const SIGMA_HEADER: [&str; 4] = ["mu", "sigma_exact", "sigma_estimate", "ratio"];

/// Seed for the artifact at `path`: the first eight bytes of
/// `sha256(master_seed_le ‖ path)`. Independent of scheduling by
/// construction.
pub fn derive_seed(master: u64, path: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(path.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    to_hex(&Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let k = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
    }
    Ok(to_hex(&h.finalize()))
}

fn temp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp-{}", std::process::id()));
    path.with_file_name(name)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

/// Write `bytes` to a temporary sibling and rename it into place. Returns
/// the content hash.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<String> {
    create_parent(path)?;
    let tmp = temp_path(path);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_bytes(bytes))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::malformed(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::malformed(path, e))
}

/// CSV with the given header; floats use the shortest representation that
/// parses back to the same value.
pub fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        w.write_record(row.iter().map(|v| v.to_string())).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<String> {
    write_atomic(path, &csv_bytes(header, rows))
}

/// Read a numeric CSV whose header must equal `header` exactly.
pub fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let found = r.headers().map_err(|e| CliError::malformed(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(CliError::malformed(
            path,
            format!("header {:?}, expected {:?}", found.iter().collect::<Vec<_>>(), header),
        ));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| CliError::malformed(path, e))?;
            rec.iter()
                .map(|f| f.trim().parse::<f64>().map_err(|e| CliError::malformed(path, format!("{f:?}: {e}"))))
                .collect()
        })
        .collect()
}

pub fn series_csv(series: &TimeSeries) -> Vec<u8> {
    csv_bytes(&SERIES_HEADER, series.times().zip(&series.values).map(|(t, v)| vec![t, *v]))
}

pub fn write_series(path: &Path, series: &TimeSeries) -> Result<String> {
    write_atomic(path, &series_csv(series))
}

/// Read a `t,value` CSV on a uniform grid starting at 0.
pub fn read_series(path: &Path) -> Result<TimeSeries> {
    let rows = read_csv(path, &SERIES_HEADER)?;
    if rows.len() < 2 || rows[0][0] != 0.0 {
        return Err(CliError::malformed(path, "series needs at least two rows starting at t = 0"));
    }
    let dt = rows[1][0];
    let grid = TimeGrid::new(dt, rows.len())?;
    for (i, row) in rows.iter().enumerate() {
        if (row[0] - grid.time(i)).abs() > 1e-9 * dt * (i.max(1) as f64) {
            return Err(CliError::malformed(path, format!("row {i}: t = {} is off the uniform grid", row[0])));
        }
    }
    Ok(TimeSeries::new(grid, rows.into_iter().map(|r| r[1]).collect())?)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDescriptor {
    spec: ModelSpec,
    rescale: f64,
    envelope_warning: Option<String>,
}

struct HashingWriter<W> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let k = self.inner.write(buf)?;
        self.hasher.update(&buf[..k]);
        Ok(k)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

fn write_f64s(w: &mut impl Write, values: impl IntoIterator<Item = f64>) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_matrix(w: &mut impl Write, m: &Matrix<f64>) -> io::Result<()> {
    for i in 0..m.nrows() {
        write_f64s(w, (0..m.ncols()).map(|j| m[(i, j)]))?;
    }
    Ok(())
}

/// Persist a model atomically; returns the content hash.
pub fn write_model(path: &Path, model: &TailoredModel) -> Result<String> {
    create_parent(path)?;
    let tmp = temp_path(path);
    let descriptor = serde_json::to_vec(&ModelDescriptor {
        spec: model.spec.clone(),
        rescale: model.rescale,
        envelope_warning: model.envelope_warning.clone(),
    })
    .map_err(|e| CliError::malformed(path, e))?;
    let n = model.dimension();
    let file = File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    let mut w = HashingWriter { inner: BufWriter::with_capacity(1 << 20, file), hasher: Sha256::new() };
    let body = |w: &mut HashingWriter<BufWriter<File>>| -> io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(n as u64).to_le_bytes())?;
        w.write_all(&model.spec.seed.to_le_bytes())?;
        w.write_all(&(descriptor.len() as u64).to_le_bytes())?;
        w.write_all(&descriptor)?;
        write_f64s(w, model.spectrum.eigenvalues.iter().copied())?;
        write_f64s(w, model.a_eigenvalues.iter().copied())?;
        write_matrix(w, &model.a_matrix)?;
        write_matrix(w, &model.a_eigenvectors)?;
        w.flush()
    };
    body(&mut w).map_err(|e| CliError::io(&tmp, e))?;
    let hash = to_hex(&w.hasher.finalize());
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))?;
    Ok(hash)
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; 8 * n];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

fn read_matrix(r: &mut impl Read, n: usize) -> io::Result<Matrix<f64>> {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for (j, v) in read_f64s(r, n)?.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

pub fn read_model(path: &Path) -> Result<TailoredModel> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = BufReader::with_capacity(1 << 20, file);
    let io_err = |e: io::Error| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CliError::malformed(path, "truncated model file")
        } else {
            CliError::io(path, e)
        }
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MODEL_MAGIC {
        return Err(CliError::malformed(path, "not a model file"));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version).map_err(io_err)?;
    if u32::from_le_bytes(version) != MODEL_VERSION {
        return Err(CliError::malformed(path, format!("unsupported version {}", u32::from_le_bytes(version))));
    }
    let n = read_u64(&mut r).map_err(io_err)? as usize;
    let seed = read_u64(&mut r).map_err(io_err)?;
    let d = read_u64(&mut r).map_err(io_err)? as usize;
    if d > 1 << 24 {
        return Err(CliError::malformed(path, "descriptor is implausibly large"));
    }
    let mut descriptor = vec![0u8; d];
    r.read_exact(&mut descriptor).map_err(io_err)?;
    let descriptor: ModelDescriptor = serde_json::from_slice(&descriptor).map_err(|e| CliError::malformed(path, e))?;
    if descriptor.spec.dimension != n || descriptor.spec.seed != seed {
        return Err(CliError::malformed(path, "header disagrees with descriptor"));
    }
    let spectrum = Spectrum { eigenvalues: read_f64s(&mut r, n).map_err(io_err)? };
    let a_eigenvalues = read_f64s(&mut r, n).map_err(io_err)?;
    let a_matrix = read_matrix(&mut r, n).map_err(io_err)?;
    let a_eigenvectors = read_matrix(&mut r, n).map_err(io_err)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| CliError::io(path, e))? != 0 {
        return Err(CliError::malformed(path, "trailing bytes after model data"));
    }
    Ok(TailoredModel {
        spec: descriptor.spec,
        spectrum,
        a_matrix,
        a_eigenvalues,
        a_eigenvectors,
        rescale: descriptor.rescale,
        envelope_warning: descriptor.envelope_warning,
    })
}
