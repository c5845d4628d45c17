//! Portable graymaps and plain CSV.

use crate::{HarnessError, Result};
use nalgebra::DMatrix;
use std::fmt::Display;
use std::path::Path;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| HarnessError::Output {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a P2 (ASCII) or P5 (binary, 8- or 16-bit) graymap. Values are
/// returned unscaled.
pub fn read_pgm(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::input(path, e))?;
    parse_pgm(&bytes).map_err(|m| HarnessError::input(path, m))
}

pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<DMatrix<f64>, String> {
    let mut pos = 0;
    // Header tokens: magic, width, height, maxval; `#` starts a comment.
    let token = |pos: &mut usize| -> std::result::Result<String, String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err("truncated graymap header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    let num = |s: String| s.parse::<usize>().map_err(|_| format!("bad header field '{s}'"));
    let w = num(token(&mut pos)?)?;
    let h = num(token(&mut pos)?)?;
    let maxval = num(token(&mut pos)?)?;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("unsupported graymap geometry {w}x{h}, maxval {maxval}"));
    }
    let mut img = DMatrix::zeros(h, w);
    match magic.as_str() {
        "P2" => {
            for k in 0..w * h {
                let v = num(token(&mut pos)?)?;
                img[(k / w, k % w)] = v as f64;
            }
        }
        "P5" => {
            // Exactly one whitespace byte separates the header from the data.
            pos += 1;
            let depth = if maxval < 256 { 1 } else { 2 };
            let data = bytes.get(pos..pos + w * h * depth).ok_or("truncated graymap data")?;
            for k in 0..w * h {
                let v = if depth == 1 {
                    data[k] as f64
                } else {
                    u16::from_be_bytes([data[2 * k], data[2 * k + 1]]) as f64
                };
                img[(k / w, k % w)] = v;
            }
        }
        other => return Err(format!("not a graymap (magic '{other}')")),
    }
    Ok(img)
}

/// Writes a 16-bit P5 graymap after mapping `[min, max]` linearly onto
/// `[0, 65535]`. Returns the bounds used.
pub fn write_pgm16(path: &Path, img: &DMatrix<f64>) -> Result<(f64, f64)> {
    let lo = img.min();
    let hi = img.max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{} {}\n65535\n", img.ncols(), img.nrows()).into_bytes();
    for i in 0..img.nrows() {
        for j in 0..img.ncols() {
            let v = ((img[(i, j)] - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    write_file(path, &out)?;
    Ok((lo, hi))
}

pub fn write_csv_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    write_file(path, s.as_bytes())
}

pub fn read_csv_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::input(path, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| HarnessError::input(path, format!("bad number '{v}'"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
        return Err(HarnessError::input(path, "empty or ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Header line plus one line per row.
pub fn write_csv_table<D: Display>(path: &Path, header: &[&str], rows: &[Vec<D>]) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    write_file(path, s.as_bytes())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_graymap() {
        let img = parse_pgm(b"P2\n# a comment\n3 2\n10\n0 1 2\n3 4 10\n").unwrap();
        assert_eq!(img.shape(), (2, 3));
        assert_eq!(img[(0, 2)], 2.0);
        assert_eq!(img[(1, 2)], 10.0);
    }

    #[test]
    fn binary_graymaps() {
        let mut b = b"P5 2 2 255\n".to_vec();
        b.extend_from_slice(&[0, 7, 200, 255]);
        assert_eq!(parse_pgm(&b).unwrap()[(1, 0)], 200.0);
        let mut b = b"P5\n1 2\n65535\n".to_vec();
        b.extend_from_slice(&[0x01, 0x02, 0xff, 0xff]);
        let img = parse_pgm(&b).unwrap();
        assert_eq!((img[(0, 0)], img[(1, 0)]), (258.0, 65535.0));
        assert!(parse_pgm(b"P5 2 2 255\n\x00").is_err());
        assert!(parse_pgm(b"P6 1 1 255\n\x00\x00\x00").is_err());
    }

    #[test]
    fn sixteen_bit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = DMatrix::from_row_slice(2, 3, &[-1.0, 0.0, 1.0, 0.5, 0.25, -0.5]);
        let (lo, hi) = write_pgm16(&path, &img).unwrap();
        assert_eq!((lo, hi), (-1.0, 1.0));
        let back = read_pgm(&path).unwrap();
        let restored = back.map(|v| lo + v / 65535.0 * (hi - lo));
        assert!((restored - img).amax() < 1e-4);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 0.1).powf(j as f64 + 0.37) - 1.0 / 3.0);
        write_csv_matrix(&path, &m).unwrap();
        assert_eq!(read_csv_matrix(&path).unwrap(), m);
    }
}
