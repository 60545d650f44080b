//! Bit-exact field checkpoints.
//!
//! Layout: a five-line text header — the magic string `FBLAB1`, `n=<2|3>`,
//! `shape=<n1,...>`, `origin=<x1,...>`, `h=<value>` — followed by row-major
//! (last axis fastest) little-endian IEEE-754 doubles. Matrix fields store
//! the upper triangle per node in row order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{CoefficientField, ScalarField};
use crate::grid::Grid;
use crate::linalg::Matrix;
use crate::num::{Scalar, cast, to_f64};

pub const MAGIC: &str = "FBLAB1";

/// Parsed checkpoint header.
#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub n: usize,
    pub shape: Vec<usize>,
    pub origin: Vec<f64>,
    pub h: f64,
}

impl Header {
    fn of_grid<S: Scalar>(grid: &Grid<S>) -> Self {
        let n = grid.dim();
        Self {
            n,
            shape: grid.shape()[..n].to_vec(),
            origin: grid.origin()[..n].iter().map(|&v| to_f64(v)).collect(),
            h: to_f64(grid.spacing()),
        }
    }

    fn write_to(&self, out: &mut impl Write) -> Result<()> {
        let shape: Vec<String> = self.shape.iter().map(|s| s.to_string()).collect();
        let origin: Vec<String> = self.origin.iter().map(|v| format!("{v}")).collect();
        write!(
            out,
            "{MAGIC}\nn={}\nshape={}\norigin={}\nh={}\n",
            self.n,
            shape.join(","),
            origin.join(","),
            self.h
        )?;
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Upper-triangle entries per node for matrix payloads.
    pub fn triangle_len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    fn to_grid<S: Scalar>(&self) -> Result<Grid<S>> {
        let mut shape = [1usize; 3];
        let mut origin = [S::zero(); 3];
        for d in 0..self.n {
            shape[d] = self.shape[d];
            origin[d] = cast(self.origin[d]);
        }
        Grid::new(self.n, origin, cast(self.h), shape)
    }
}

fn read_header(lines: &mut std::str::Lines<'_>) -> Result<Header> {
    let magic = lines.next().ok_or_else(|| Error::Format("missing magic line".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let mut expect = |key: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("missing header line {key}=...")))?;
        line.strip_prefix(&format!("{key}="))
            .map(str::to_string)
            .ok_or_else(|| Error::Format(format!("expected {key}=..., got {line:?}")))
    };
    let n: usize = expect("n")?
        .parse()
        .map_err(|e| Error::Format(format!("bad dimension: {e}")))?;
    if !(n == 2 || n == 3) {
        return Err(Error::Format(format!("dimension must be 2 or 3, got {n}")));
    }
    let shape: Vec<usize> = expect("shape")?
        .split(',')
        .map(|t| t.parse().map_err(|e| Error::Format(format!("bad shape entry: {e}"))))
        .collect::<Result<_>>()?;
    let origin: Vec<f64> = expect("origin")?
        .split(',')
        .map(|t| t.parse().map_err(|e| Error::Format(format!("bad origin entry: {e}"))))
        .collect::<Result<_>>()?;
    if shape.len() != n || origin.len() != n {
        return Err(Error::Format("header arity does not match dimension".into()));
    }
    let h: f64 = expect("h")?
        .parse()
        .map_err(|e| Error::Format(format!("bad spacing: {e}")))?;
    Ok(Header { n, shape, origin, h })
}

fn split_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    // The header is exactly five '\n'-terminated lines.
    let mut newline_count = 0;
    let mut boundary = None;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'\n' {
            newline_count += 1;
            if newline_count == 5 {
                boundary = Some(i + 1);
                break;
            }
        }
    }
    let boundary = boundary.ok_or_else(|| Error::Format("truncated header".into()))?;
    let text = std::str::from_utf8(&bytes[..boundary])
        .map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let header = read_header(&mut text.lines())?;
    Ok((header, &bytes[boundary..]))
}

fn write_doubles(out: &mut impl Write, values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_doubles(bytes: &[u8], count: usize) -> Result<Vec<f64>> {
    if bytes.len() != count * 8 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, expected {}",
            bytes.len(),
            count * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Writes a scalar field checkpoint.
pub fn save_scalar<S: Scalar>(field: &ScalarField<S>, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    Header::of_grid(field.grid()).write_to(&mut out)?;
    write_doubles(&mut out, field.values().iter().map(|&v| to_f64(v)))?;
    out.flush()?;
    Ok(())
}

/// Reads a scalar field checkpoint.
pub fn load_scalar<S: Scalar>(path: &Path) -> Result<ScalarField<S>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (header, payload) = split_header(&bytes)?;
    let grid = header.to_grid::<S>()?;
    let values = read_doubles(payload, header.node_count())?;
    ScalarField::new(grid, values.into_iter().map(cast).collect())
}

/// Writes a matrix field checkpoint (upper triangle per node, row order).
pub fn save_matrix<S: Scalar>(field: &CoefficientField<S>, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = field.grid().dim();
    Header::of_grid(field.grid()).write_to(&mut out)?;
    for m in field.matrices() {
        for i in 0..n {
            for j in i..n {
                out.write_all(&to_f64(m[i][j]).to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a matrix field checkpoint; ellipticity bounds are inferred from
/// the data and the Hoelder exponent is supplied by the caller.
pub fn load_matrix<S: Scalar>(path: &Path, hoelder_exponent: S) -> Result<CoefficientField<S>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (header, payload) = split_header(&bytes)?;
    let grid = header.to_grid::<S>()?;
    let tri = header.triangle_len();
    let values = read_doubles(payload, header.node_count() * tri)?;
    let n = header.n;
    let mut matrices = Vec::with_capacity(header.node_count());
    for chunk in values.chunks_exact(tri) {
        let mut m: Matrix<S> = [[S::zero(); 3]; 3];
        let mut slot = 0;
        for i in 0..n {
            for j in i..n {
                let v = cast::<S>(chunk[slot]);
                m[i][j] = v;
                m[j][i] = v;
                slot += 1;
            }
        }
        matrices.push(m);
    }
    CoefficientField::from_matrices_inferred(grid, matrices, hoelder_exponent)
}

/// Reads just the header (for `field cat`).
pub fn load_header(path: &Path) -> Result<Header> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (header, _) = split_header(&bytes)?;
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::point2;

    fn tmpdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "fblab-ckpt-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn scalar_round_trip_is_bit_exact() {
        let g = Grid::new(2, point2(-1.0, -0.5), 0.0625, [17, 9, 1]).unwrap();
        let f = ScalarField::from_fn(g, |p| (37.0f64 * p[0]).sin() * p[1] + 1.0 / 3.0).unwrap();
        let path = tmpdir().join("scalar.fbl");
        save_scalar(&f, &path).unwrap();
        let loaded = load_scalar::<f64>(&path).unwrap();
        assert_eq!(loaded.grid(), f.grid());
        assert_eq!(loaded.values(), f.values());

        // Re-saving produces a byte-identical file.
        let path2 = tmpdir().join("scalar2.fbl");
        save_scalar(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn three_dimensional_round_trip() {
        let g = Grid::<f64>::new(3, [0.0, -1.0, 2.0], 0.25, [5, 6, 7]).unwrap();
        let f = ScalarField::from_fn(g, |p| p[0] - p[1] * p[2]).unwrap();
        let path = tmpdir().join("scalar3.fbl");
        save_scalar(&f, &path).unwrap();
        let loaded = load_scalar::<f64>(&path).unwrap();
        assert_eq!(loaded.values(), f.values());
    }

    #[test]
    fn large_3d_round_trip_is_byte_identical() {
        // 64^3 nodes; the re-saved file must hash to the same bytes.
        let g = Grid::<f64>::new(3, [-1.0, -1.0, -1.0], 2.0 / 63.0, [64, 64, 64]).unwrap();
        let f = ScalarField::from_fn(g, |p| (3.0 * p[0]).sin() * p[1] + p[2] / 3.0).unwrap();
        let dir = tmpdir();
        let path = dir.join("big3.fbl");
        save_scalar(&f, &path).unwrap();
        let loaded = load_scalar::<f64>(&path).unwrap();
        let path2 = dir.join("big3-resave.fbl");
        save_scalar(&loaded, &path2).unwrap();
        let hash = |bytes: &[u8]| -> u64 {
            // FNV-1a keeps the comparison order-independent of file size.
            let mut h = 0xcbf2_9ce4_8422_2325u64;
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
            h
        };
        let a = std::fs::read(&path).unwrap();
        let b = std::fs::read(&path2).unwrap();
        assert_eq!(hash(&a), hash(&b));
        assert_eq!(a, b);
    }

    #[test]
    fn matrix_round_trip_preserves_entries() {
        let g = Grid::new(2, point2(-1.0, -1.0), 0.25, [9, 9, 1]).unwrap();
        let a = CoefficientField::from_fn(g, 0.5, 3.0, 0.75, 0.0, |p| {
            let t = 1.0 + 0.4 * p[0];
            [[t, 0.2 * p[1], 0.0], [0.2 * p[1], 2.0, 0.0], [0.0; 3]]
        })
        .unwrap();
        let path = tmpdir().join("matrix.fbl");
        save_matrix(&a, &path).unwrap();
        let loaded = load_matrix::<f64>(&path, 0.75).unwrap();
        for (ma, mb) in a.matrices().iter().zip(loaded.matrices()) {
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(ma[i][j], mb[i][j]);
                }
            }
        }
        assert_eq!(loaded.hoelder_exponent(), 0.75);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tmpdir();
        let path = dir.join("bad-magic.fbl");
        std::fs::write(&path, b"NOTFBL\nn=2\nshape=4,4\norigin=0,0\nh=1\n").unwrap();
        assert!(matches!(load_scalar::<f64>(&path), Err(Error::Format(_))));

        // Truncated payload.
        let g = Grid::new(2, point2(0.0, 0.0), 0.5, [4, 4, 1]).unwrap();
        let f = ScalarField::constant(g, 1.0).unwrap();
        let path = dir.join("trunc.fbl");
        save_scalar(&f, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_scalar::<f64>(&path), Err(Error::Format(_))));

        // Shape/dimension mismatch.
        let path = dir.join("arity.fbl");
        std::fs::write(&path, b"FBLAB1\nn=2\nshape=4,4,4\norigin=0,0\nh=1\n").unwrap();
        assert!(matches!(load_scalar::<f64>(&path), Err(Error::Format(_))));
    }
}
