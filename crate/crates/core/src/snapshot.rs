//! Columnar binary snapshots with a JSON sidecar.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      4 bytes  "RWCS"
//! version    u32      1
//! dims       4 x u64  (nt, nx, ny, nz); unused trailing dims are 1
//! omega      3 x f64
//! epsilon    f64
//! ncols      u32
//! per column: name_len u16, name (utf-8), count u64
//! data       the columns' f64 values, in directory order
//! ```
//!
//! Vector-valued quantities are stored component-major, one column per
//! component (`domega_u.0`, `domega_u.1`, `N.0`, ...).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eikonal::OpticalField;
use crate::error::{Error, Result};
use crate::parametrix::FieldSample;

const MAGIC: &[u8; 4] = b"RWCS";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub dims: [u64; 4],
    pub omega: [f64; 3],
    pub epsilon: f64,
    pub columns: Vec<(String, Vec<f64>)>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SnapshotMetadata {
    pub format: String,
    pub version: u32,
    pub dims: [u64; 4],
    pub omega: [f64; 3],
    pub epsilon: f64,
    pub columns: Vec<ColumnInfo>,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ColumnInfo {
    pub name: String,
    pub count: u64,
    /// Byte offset of the first value from the start of the file.
    pub offset: u64,
}

impl Snapshot {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    fn header_len(&self) -> u64 {
        let fixed = 4 + 4 + 32 + 24 + 8 + 4;
        let dir: usize = self.columns.iter().map(|(n, _)| 2 + n.len() + 8).sum();
        (fixed + dir) as u64
    }

    pub fn metadata(&self, attributes: BTreeMap<String, String>) -> SnapshotMetadata {
        let mut offset = self.header_len();
        let columns = self
            .columns
            .iter()
            .map(|(name, values)| {
                let info = ColumnInfo {
                    name: name.clone(),
                    count: values.len() as u64,
                    offset,
                };
                offset += 8 * values.len() as u64;
                info
            })
            .collect();
        SnapshotMetadata {
            format: "roughwave-columnar".into(),
            version: VERSION,
            dims: self.dims,
            omega: self.omega,
            epsilon: self.epsilon,
            columns,
            attributes,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for w in self.omega {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&self.epsilon.to_le_bytes());
        out.extend_from_slice(&(self.columns.len() as u32).to_le_bytes());
        for (name, values) in &self.columns {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        }
        for (_, values) in &self.columns {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut magic = [0u8; 4];
        cursor.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::SchemaMismatch("bad snapshot magic".into()));
        }
        let version = read_u32(&mut cursor)?;
        if version != VERSION {
            return Err(Error::SchemaMismatch(format!("snapshot version {version}")));
        }
        let mut dims = [0u64; 4];
        for d in &mut dims {
            *d = read_u64(&mut cursor)?;
        }
        let mut omega = [0.0; 3];
        for w in &mut omega {
            *w = read_f64(&mut cursor)?;
        }
        let epsilon = read_f64(&mut cursor)?;
        let ncols = read_u32(&mut cursor)? as usize;
        let mut directory = Vec::with_capacity(ncols);
        for _ in 0..ncols {
            let mut len = [0u8; 2];
            cursor.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            cursor.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::SchemaMismatch("column name is not utf-8".into()))?;
            directory.push((name, read_u64(&mut cursor)? as usize));
        }
        let mut columns = Vec::with_capacity(ncols);
        for (name, count) in directory {
            let values = (0..count).map(|_| read_f64(&mut cursor)).collect::<Result<Vec<_>>>()?;
            columns.push((name, values));
        }
        Ok(Snapshot {
            dims,
            omega,
            epsilon,
            columns,
        })
    }

    /// Writes `<stem>.bin` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str, attributes: BTreeMap<String, String>) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let bin = format!("{stem}.bin");
        let json = format!("{stem}.json");
        std::fs::File::create(dir.join(&bin))?.write_all(&self.to_bytes())?;
        let meta = serde_json::to_string_pretty(&self.metadata(attributes))?;
        std::fs::write(dir.join(&json), meta + "\n")?;
        Ok(vec![bin, json])
    }

    pub fn read(path: &Path) -> Result<Self> {
        Snapshot::from_bytes(&std::fs::read(path)?)
    }
}

fn read_u32(cursor: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    cursor.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cursor: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    cursor.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(cursor: &mut &[u8]) -> Result<f64> {
    let mut b = [0u8; 8];
    cursor.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

impl From<&OpticalField> for Snapshot {
    fn from(field: &OpticalField) -> Self {
        let [nt, nx, ny, nz] = field.grid.dims();
        let mut columns = vec![
            ("t".to_string(), field.grid.times.clone()),
            ("axis".to_string(), field.grid.axis.clone()),
            ("u".to_string(), field.u.clone()),
        ];
        for a in 0..2 {
            columns.push((format!("domega_u.{a}"), field.domega_u.iter().map(|v| v[a]).collect()));
        }
        columns.push(("b".to_string(), field.b.clone()));
        for i in 0..3 {
            columns.push((format!("N.{i}"), field.normal.iter().map(|v| v[i]).collect()));
        }
        Snapshot {
            dims: [nt as u64, nx as u64, ny as u64, nz as u64],
            omega: [field.omega.x, field.omega.y, field.omega.z],
            epsilon: field.epsilon,
            columns,
        }
    }
}

/// Scattered samples: `dims = [n, 1, 1, 1]`, one column per coordinate and
/// per real/imaginary part of each component.
impl From<&FieldSample> for Snapshot {
    fn from(field: &FieldSample) -> Self {
        let points = &field.samples.points;
        let mut columns = vec![("t".to_string(), points.iter().map(|p| p.t).collect())];
        for i in 0..3 {
            columns.push((format!("x.{i}"), points.iter().map(|p| p.x[i]).collect()));
        }
        let k = field.components();
        for c in 0..k {
            let part = |f: fn(&num_complex::Complex64) -> f64| -> Vec<f64> {
                (0..points.len()).map(|i| f(&field.at(i)[c])).collect()
            };
            columns.push((format!("re.{c}"), part(|z| z.re)));
            columns.push((format!("im.{c}"), part(|z| z.im)));
        }
        Snapshot {
            dims: [points.len() as u64, 1, 1, 1],
            omega: [0.0; 3],
            epsilon: 0.0,
            columns,
        }
    }
}
