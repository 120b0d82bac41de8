//! On-disk formats for matrices and fields.
//!
//! * Dense CSV: one text line per row, comma separated, shortest
//!   round-trip decimal representation.
//! * Binary: the 7 ASCII bytes `DYNINV1`, then `rows` and `cols` as
//!   little-endian `u64`, then `rows * cols` little-endian `f64` values in
//!   column-major order. A space-time field `n_s x n_t` stored this way is
//!   exactly the stacked vector `vec(S)`.
//! * Triplet CSV: lines `row,col,value` (zero-based), optional header line.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::SparseOperator;
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 7] = b"DYNINV1";

pub fn write_binary(path: impl AsRef<Path>, matrix: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_binary_to(&mut w, matrix.nrows(), matrix.ncols(), matrix.as_slice())?;
    w.flush()?;
    Ok(())
}

/// Write a column-major buffer without building a matrix first.
pub fn write_binary_to(w: &mut impl Write, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    if data.len() != rows * cols {
        return Err(Error::Shape {
            context: "write_binary",
            expected: rows * cols,
            got: data.len(),
        });
    }
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_field(path: impl AsRef<Path>, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_binary_to(&mut w, rows, cols, data)?;
    w.flush()?;
    Ok(())
}

pub fn read_binary(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_binary_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_binary_from(r: &mut impl Read) -> Result<DMatrix<f64>> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Format("missing DYNINV1 header".into()));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("dimension overflow".into()))?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut word)?;
        data.push(f64::from_le_bytes(word));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after matrix payload".into()));
    }
    Ok(DMatrix::from_vec(rows, cols, data))
}

pub fn write_dense_csv(path: impl AsRef<Path>, matrix: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..matrix.nrows() {
        w.write_record(matrix.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dense_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("bad number {s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format("ragged CSV matrix".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn write_triplets_csv(path: impl AsRef<Path>, op: &SparseOperator) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "col", "value"])?;
    for (i, j, v) in op.triplets() {
        w.write_record([i.to_string(), j.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_triplets_csv(path: impl AsRef<Path>, rows: usize, cols: usize) -> Result<SparseOperator> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut triplets = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Format(format!("triplet line {} has {} fields", line + 1, rec.len())));
        }
        let parsed = (rec[0].parse::<usize>(), rec[1].parse::<usize>(), rec[2].parse::<f64>());
        match parsed {
            (Ok(i), Ok(j), Ok(v)) => triplets.push((i, j, v)),
            _ if line == 0 => continue, // header
            _ => return Err(Error::Format(format!("bad triplet on line {}", line + 1))),
        }
    }
    SparseOperator::from_triplets(rows, cols, &triplets)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn binary_layout_is_column_major_le() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mut buf = Vec::new();
        write_binary_to(&mut buf, 2, 2, m.as_slice()).unwrap();
        assert_eq!(&buf[..7], b"DYNINV1");
        assert_eq!(u64::from_le_bytes(buf[7..15].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[15..23].try_into().unwrap()), 2);
        let first = f64::from_le_bytes(buf[23..31].try_into().unwrap());
        let second = f64::from_le_bytes(buf[31..39].try_into().unwrap());
        assert_eq!((first, second), (1.0, 3.0));
        assert_eq!(buf.len(), 7 + 16 + 32);
    }

    #[test]
    fn binary_rejects_bad_magic_and_trailing() {
        let mut buf = b"DYNINV2".to_vec();
        buf.extend_from_slice(&[0u8; 16]);
        assert!(matches!(read_binary_from(&mut buf.as_slice()), Err(Error::Format(_))));
        let mut ok = Vec::new();
        write_binary_to(&mut ok, 1, 1, &[5.0]).unwrap();
        ok.push(0);
        assert!(read_binary_from(&mut ok.as_slice()).is_err());
    }

    #[test]
    fn csv_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -2.5, 1e-300, 3.0, 1.0 / 3.0, 7.0]);
        let p = dir.path().join("m.csv");
        write_dense_csv(&p, &m).unwrap();
        assert_eq!(read_dense_csv(&p).unwrap(), m);

        let s = SparseOperator::from_triplets(3, 4, &[(0, 1, 0.5), (2, 3, 1.0 / 7.0)]).unwrap();
        let p = dir.path().join("t.csv");
        write_triplets_csv(&p, &s).unwrap();
        let back = read_triplets_csv(&p, 3, 4).unwrap();
        assert_eq!(back.triplets(), s.triplets());
    }

    proptest! {
        #[test]
        fn binary_roundtrip(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let m = crate::linop::testing::random_dense(rows, cols, seed) * 1e3;
            let mut buf = Vec::new();
            write_binary_to(&mut buf, rows, cols, m.as_slice()).unwrap();
            let back = read_binary_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
