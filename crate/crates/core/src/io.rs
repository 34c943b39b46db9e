//! Energy time series (CSV) and field snapshots.
//!
//! Snapshot layout, all integers and floats little-endian:
//!
//! ```text
//! b"PFSNAP01"
//! u64            header length in bytes
//! header         UTF-8 lines `key=value`
//! f64[P]         rho
//! f64[P] x dim   u, one component after the other
//! f64[P x B]     g, row-major (point-major, basis index fastest)
//! ```
//!
//! with `P` grid points and `B` basis functions. The header carries
//! `version`, `dtype`, `t`, grid metadata (`dim`, `n`, `lengths`) and basis
//! metadata (`potential`, `dim_q`, `n_q`, `scale`, `basis_len`).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::qbasis::QBasis;
use crate::state::{EnergyReport, FlowState};
use crate::xgrid::TorusGrid;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"PFSNAP01";
const SNAPSHOT_VERSION: &str = "1";
const MAX_HEADER: u64 = 1 << 20;

/// Writes one CSV row per [`EnergyReport`], header from [`EnergyReport::COLUMNS`].
pub struct CsvSink<W: Write> {
    inner: csv::Writer<W>,
}

impl CsvSink<std::fs::File> {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(CsvSink::new(std::fs::File::create(path)?))
    }
}

impl<W: Write> CsvSink<W> {
    pub fn new(w: W) -> Self {
        CsvSink {
            inner: csv::WriterBuilder::new().has_headers(true).from_writer(w),
        }
    }

    pub fn write(&mut self, r: &EnergyReport) -> Result<()> {
        self.inner.serialize(r)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_reports(path: &Path, reports: &[EnergyReport]) -> Result<()> {
    let mut sink = CsvSink::create(path)?;
    for r in reports {
        sink.write(r)?;
    }
    sink.finish()
}

pub fn read_reports(path: &Path) -> Result<Vec<EnergyReport>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != EnergyReport::COLUMNS {
        return Err(Error::Format(format!("unexpected CSV header {header:?}")));
    }
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Decoded snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub header: BTreeMap<String, String>,
    pub state: FlowState,
}

impl Snapshot {
    fn get(&self, key: &str) -> Result<&str> {
        self.header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("header lacks `{key}`")))
    }

    /// Reject a snapshot written for another grid or basis.
    pub fn check_compatible(&self, grid: &TorusGrid, basis: &QBasis) -> Result<()> {
        let expect = header_for(0.0, grid, basis);
        for key in ["dim", "n", "lengths", "potential", "dim_q", "n_q", "scale", "basis_len"] {
            let got = self.get(key)?;
            if got != expect[key] {
                return Err(Error::Format(format!(
                    "snapshot has {key} = {got}, the run needs {}",
                    expect[key]
                )));
            }
        }
        Ok(())
    }
}

fn header_for(t: f64, grid: &TorusGrid, basis: &QBasis) -> BTreeMap<String, String> {
    let pot = basis.potential();
    let lengths: Vec<String> = grid.lengths().iter().map(|l| format!("{l:e}")).collect();
    [
        ("version", SNAPSHOT_VERSION.to_string()),
        ("dtype", "f64le".to_string()),
        ("t", format!("{t:e}")),
        ("dim", grid.dim().to_string()),
        ("n", grid.n().to_string()),
        ("lengths", lengths.join(",")),
        ("potential", pot.name().to_string()),
        ("dim_q", basis.dim_q().to_string()),
        ("n_q", basis.n_q().to_string()),
        ("scale", format!("{:e}", pot.scale())),
        ("basis_len", basis.len().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

pub fn write_snapshot(path: &Path, s: &FlowState, grid: &TorusGrid, basis: &QBasis) -> Result<()> {
    s.check_shape(grid, basis)?;
    let header: String = header_for(s.t, grid, basis)
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    let mut out = Vec::with_capacity(16 + header.len() + 8 * s.flat_len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    let mut push = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    s.rho.iter().for_each(|&v| push(v));
    s.u.iter().flatten().for_each(|&v| push(v));
    for x in 0..s.g.nrows() {
        for k in 0..s.g.ncols() {
            push(s.g[(x, k)]);
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_snapshot(&bytes)
}

fn parse<T: std::str::FromStr>(h: &BTreeMap<String, String>, key: &str) -> Result<T> {
    h.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("header field `{key}` missing or malformed")))
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    if bytes.len() < 16 || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(Error::Format("not a snapshot file (bad magic)".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    if hlen > MAX_HEADER || 16 + hlen as usize > bytes.len() {
        return Err(Error::Format(format!("header length {hlen} out of range")));
    }
    let hend = 16 + hlen as usize;
    let text = std::str::from_utf8(&bytes[16..hend]).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let mut header = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("header line `{line}` is not key=value")))?;
        header.insert(k.to_string(), v.to_string());
    }
    if header.get("version").map(String::as_str) != Some(SNAPSHOT_VERSION) {
        return Err(Error::Format(format!("unsupported version {:?}", header.get("version"))));
    }
    if header.get("dtype").map(String::as_str) != Some("f64le") {
        return Err(Error::Format(format!("unsupported dtype {:?}", header.get("dtype"))));
    }
    let dim: usize = parse(&header, "dim")?;
    let n: usize = parse(&header, "n")?;
    let blen: usize = parse(&header, "basis_len")?;
    let t: f64 = parse(&header, "t")?;
    let points = n
        .checked_pow(dim as u32)
        .filter(|_| (1..=3).contains(&dim))
        .ok_or_else(|| Error::Format(format!("bad grid dim = {dim}, n = {n}")))?;
    let count = points * (1 + dim + blen);
    let data = &bytes[hend..];
    if data.len() != 8 * count {
        return Err(Error::Format(format!(
            "payload has {} bytes, header implies {}",
            data.len(),
            8 * count
        )));
    }
    let vals: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let rho = vals[..points].to_vec();
    let u = (0..dim)
        .map(|c| vals[points * (1 + c)..points * (2 + c)].to_vec())
        .collect();
    let g = DMatrix::from_row_slice(points, blen, &vals[points * (1 + dim)..]);
    Ok(Snapshot {
        header,
        state: FlowState { t, rho, u, g },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::random_state;
    use crate::potential::Potential;
    use std::f64::consts::PI;

    fn setup() -> (TorusGrid, QBasis) {
        (
            TorusGrid::new(2, 8, 2.0 * PI).unwrap(),
            QBasis::build(&Potential::hookean(1.0, 1.0, 2).unwrap(), 3).unwrap(),
        )
    }

    #[test]
    fn snapshot_round_trip_and_guards() {
        let (grid, basis) = setup();
        let mut s = random_state(&grid, &basis, 0.3, 4, false);
        s.t = 0.125;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.snap");
        write_snapshot(&path, &s, &grid, &basis).unwrap();
        let snap = read_snapshot(&path).unwrap();
        assert_eq!(snap.state, s);
        snap.check_compatible(&grid, &basis).unwrap();
        let other = QBasis::build(&Potential::hookean(1.0, 1.0, 2).unwrap(), 4).unwrap();
        assert!(snap.check_compatible(&grid, &other).is_err());

        let bytes = std::fs::read(&path).unwrap();
        assert!(decode_snapshot(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_snapshot(&bad).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let rows: Vec<EnergyReport> = (0..3)
            .map(|i| EnergyReport { t: i as f64 * 0.1, e: 1.0 / (1.0 + i as f64), ..Default::default() })
            .collect();
        write_reports(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), EnergyReport::COLUMNS.join(","));
        assert_eq!(read_reports(&path).unwrap(), rows);
    }
}
