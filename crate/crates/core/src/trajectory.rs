//! The snapshot matrix: one row per scalar weight, one column per epoch.
//!
//! Rows are stored contiguously (row-major) so that correlation over the
//! epoch axis is a linear scan. The on-disk "CMDT" binary format is
//! canonical; a CSV fallback exists for small debugging matrices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic bytes opening every CMDT file: `43 4D 44 54`.
pub const CMDT_MAGIC: [u8; 4] = *b"CMDT";
/// Current CMDT format version.
pub const CMDT_VERSION: u32 = 1;
/// CSV is a debugging convenience only; larger matrices must use CMDT.
pub const CSV_MAX_ROWS: usize = 10_000;

/// A contiguous block of rows belonging to one named layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpan {
    pub name: String,
    pub start_row: usize,
    pub row_count: usize,
}

impl LayerSpan {
    pub fn new(name: impl Into<String>, start_row: usize, row_count: usize) -> Self {
        Self { name: name.into(), start_row, row_count }
    }
}

/// N x (T+1) matrix of weight trajectories plus its layer index.
///
/// Immutable after construction; all epoch-axis transformations return new
/// values, so shared read-only access from parallel workers is safe.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    values: Vec<f64>,
    n_rows: usize,
    n_epochs: usize,
    layers: Vec<LayerSpan>,
}

impl SnapshotMatrix {
    /// Build a matrix from row-major values, validating every invariant:
    /// layer spans disjoint, contiguous, sorted and covering all rows;
    /// at least one row and two epochs; all values finite.
    pub fn new(values: Vec<f64>, n_rows: usize, n_epochs: usize, layers: Vec<LayerSpan>) -> Result<Self> {
        if n_rows == 0 {
            return Err(Error::Data("matrix must have at least one row".into()));
        }
        if n_epochs < 2 {
            return Err(Error::Data(format!(
                "matrix must span at least two epochs, got {n_epochs}"
            )));
        }
        if values.len() != n_rows * n_epochs {
            return Err(Error::Data(format!(
                "value buffer holds {} entries, expected {}x{}",
                values.len(),
                n_rows,
                n_epochs
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, epoch {}",
                bad / n_epochs,
                bad % n_epochs
            )));
        }
        validate_layers(&layers, n_rows)?;
        Ok(Self { values, n_rows, n_epochs, layers })
    }

    /// Convenience constructor with a single layer named "all".
    pub fn single_layer(values: Vec<f64>, n_rows: usize, n_epochs: usize) -> Result<Self> {
        let layers = vec![LayerSpan::new("all", 0, n_rows)];
        Self::new(values, n_rows, n_epochs, layers)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Number of stored epochs, i.e. T+1 columns.
    pub fn n_epochs(&self) -> usize {
        self.n_epochs
    }

    /// Index of the last epoch (T).
    pub fn last_epoch(&self) -> usize {
        self.n_epochs - 1
    }

    pub fn layers(&self) -> &[LayerSpan] {
        &self.layers
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_epochs..(i + 1) * self.n_epochs]
    }

    pub fn value(&self, row: usize, epoch: usize) -> f64 {
        self.values[row * self.n_epochs + epoch]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// One column of the matrix: every weight's value at `epoch`.
    pub fn column(&self, epoch: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.value(i, epoch)).collect()
    }

    /// True when the row holds a single repeated value. Zero-variance rows
    /// have no defined correlation and go to the reserved static mode.
    pub fn row_is_constant(&self, i: usize) -> bool {
        let r = self.row(i);
        r.iter().all(|&v| v == r[0])
    }

    /// Name of the layer owning `row`.
    pub fn layer_of_row(&self, row: usize) -> &str {
        let idx = self
            .layers
            .partition_point(|l| l.start_row + l.row_count <= row);
        &self.layers[idx].name
    }

    /// Keep only epochs `first_epoch..=T`, returning the trimmed matrix and
    /// the selection that maps its columns back to original epoch indices.
    pub fn truncate_history(&self, first_epoch: usize) -> Result<(SnapshotMatrix, EpochSelection)> {
        let t = self.last_epoch();
        if first_epoch >= t {
            return Err(Error::Config(format!(
                "truncate start {first_epoch} leaves fewer than two epochs (T={t})"
            )));
        }
        let retained: Vec<usize> = (first_epoch..=t).collect();
        let m = self.select_epochs(&retained)?;
        let sel = EpochSelection {
            kind: EpochSelectionKind::TruncateFrom { first_epoch },
            retained_epochs: retained,
        };
        Ok((m, sel))
    }

    /// Keep epochs {0, f, 2f, ...}. Naive subsampling: no filtering is
    /// applied beforehand, so aliasing may occur.
    pub fn subsample_epochs(&self, factor: usize) -> Result<(SnapshotMatrix, EpochSelection)> {
        if factor < 2 {
            return Err(Error::Config(format!(
                "subsample factor must be at least 2, got {factor}"
            )));
        }
        let retained: Vec<usize> = (0..=self.last_epoch()).step_by(factor).collect();
        if retained.len() < 2 {
            return Err(Error::Degenerate(format!(
                "subsampling by {factor} retains only epoch 0 of 0..={}",
                self.last_epoch()
            )));
        }
        let m = self.select_epochs(&retained)?;
        let sel = EpochSelection {
            kind: EpochSelectionKind::Subsample { factor },
            retained_epochs: retained,
        };
        Ok((m, sel))
    }

    /// Copy out the given original-epoch columns, preserving row order and
    /// the layer index.
    fn select_epochs(&self, retained: &[usize]) -> Result<SnapshotMatrix> {
        let mut values = Vec::with_capacity(self.n_rows * retained.len());
        for i in 0..self.n_rows {
            let row = self.row(i);
            values.extend(retained.iter().map(|&e| row[e]));
        }
        SnapshotMatrix::new(values, self.n_rows, retained.len(), self.layers.clone())
    }
}

fn validate_layers(layers: &[LayerSpan], n_rows: usize) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::LayerIndex("layer index is empty".into()));
    }
    let mut expected_start = 0usize;
    for l in layers {
        if l.row_count == 0 {
            return Err(Error::LayerIndex(format!("layer '{}' has zero rows", l.name)));
        }
        if l.start_row != expected_start {
            return Err(Error::LayerIndex(format!(
                "layer '{}' starts at row {}, expected {}",
                l.name, l.start_row, expected_start
            )));
        }
        expected_start += l.row_count;
    }
    if expected_start != n_rows {
        return Err(Error::LayerIndex(format!(
            "layer spans cover {expected_start} rows, matrix has {n_rows}"
        )));
    }
    Ok(())
}

/// Which epochs of the original trajectory a matrix retains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSelection {
    pub kind: EpochSelectionKind,
    /// Strictly increasing original epoch indices, one per stored column.
    pub retained_epochs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpochSelectionKind {
    Full,
    TruncateFrom { first_epoch: usize },
    Subsample { factor: usize },
}

impl EpochSelection {
    /// The identity selection for a matrix spanning epochs 0..=T.
    pub fn full(last_epoch: usize) -> Self {
        Self {
            kind: EpochSelectionKind::Full,
            retained_epochs: (0..=last_epoch).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.retained_epochs.is_empty() {
            return Err(Error::Data("epoch selection retains no epochs".into()));
        }
        if !self.retained_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Data("retained epochs are not strictly increasing".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// CMDT binary format
// ---------------------------------------------------------------------------
//
// magic "CMDT" | u32 version | u64 N | u64 T+1 | u32 layer_count
// per layer: u16 name_len | name bytes (UTF-8) | u64 start_row | u64 row_count
// then N*(T+1) little-endian f64 values, row-major.
// All integers little-endian.

/// Load a trajectory. Files ending in `.csv` use the CSV fallback; anything
/// else must carry the CMDT magic header.
pub fn load_trajectory(path: impl AsRef<Path>) -> Result<SnapshotMatrix> {
    let path = path.as_ref();
    if is_csv_path(path) {
        return load_trajectory_csv(path);
    }
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if magic != CMDT_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:02X?}, expected {:02X?}",
            magic, CMDT_MAGIC
        )));
    }
    let version = read_u32(&mut r)?;
    if version != CMDT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {CMDT_VERSION}"
        )));
    }
    let n_rows = read_u64(&mut r)? as usize;
    let n_epochs = read_u64(&mut r)? as usize;
    let layer_count = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("layer name is not valid UTF-8".into()))?;
        let start_row = read_u64(&mut r)? as usize;
        let row_count = read_u64(&mut r)? as usize;
        layers.push(LayerSpan { name, start_row, row_count });
    }
    let total = n_rows
        .checked_mul(n_epochs)
        .ok_or_else(|| Error::Format("matrix dimensions overflow".into()))?;
    let mut values = Vec::with_capacity(total);
    let mut buf = [0u8; 8];
    for _ in 0..total {
        read_exact(&mut r, &mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    SnapshotMatrix::new(values, n_rows, n_epochs, layers)
}

/// Write a trajectory. Files ending in `.csv` use the CSV fallback; anything
/// else is written as CMDT. Round trips are bit-exact for CMDT.
pub fn save_trajectory(m: &SnapshotMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_csv_path(path) {
        return save_trajectory_csv(m, path);
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&CMDT_MAGIC)?;
    w.write_all(&CMDT_VERSION.to_le_bytes())?;
    w.write_all(&(m.n_rows() as u64).to_le_bytes())?;
    w.write_all(&(m.n_epochs() as u64).to_le_bytes())?;
    w.write_all(&(m.layers().len() as u32).to_le_bytes())?;
    for l in m.layers() {
        let bytes = l.name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(Error::Format(format!("layer name '{}' too long", l.name)));
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(l.start_row as u64).to_le_bytes())?;
        w.write_all(&(l.row_count as u64).to_le_bytes())?;
    }
    for v in m.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn is_csv_path(path: &Path) -> bool {
    path.extension().map_or(false, |e| e.eq_ignore_ascii_case("csv"))
}

fn load_trajectory_csv(path: &Path) -> Result<SnapshotMatrix> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"weight_id") || cols.len() < 3 {
        return Err(Error::Format(
            "CSV header must be weight_id,epoch_0,...,epoch_T".into(),
        ));
    }
    let n_epochs = cols.len() - 1;
    let mut values = Vec::new();
    let mut n_rows = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_epochs + 1 {
            return Err(Error::Format(format!(
                "line {}: {} fields, expected {}",
                lineno + 2,
                fields.len(),
                n_epochs + 1
            )));
        }
        for f in &fields[1..] {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad number '{f}'", lineno + 2)))?;
            values.push(v);
        }
        n_rows += 1;
        if n_rows > CSV_MAX_ROWS {
            return Err(Error::Format(format!(
                "CSV fallback is limited to {CSV_MAX_ROWS} rows"
            )));
        }
    }
    SnapshotMatrix::single_layer(values, n_rows, n_epochs)
}

fn save_trajectory_csv(m: &SnapshotMatrix, path: &Path) -> Result<()> {
    if m.n_rows() > CSV_MAX_ROWS {
        return Err(Error::Format(format!(
            "CSV fallback is limited to {CSV_MAX_ROWS} rows; use the binary format"
        )));
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "weight_id")?;
    for e in 0..m.n_epochs() {
        write!(w, ",epoch_{e}")?;
    }
    writeln!(w)?;
    for i in 0..m.n_rows() {
        write!(w, "{i}")?;
        for v in m.row(i) {
            // {:?} prints the shortest representation that round-trips.
            write!(w, ",{v:?}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("unexpected end of data".into())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
