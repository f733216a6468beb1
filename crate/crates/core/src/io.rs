//! Grid dumps and atomic file output.
//!
//! CSV: header `r_m,z_m,<column>`, one row per node, `z` fastest.
//! Binary: ASCII `HALOF1`, then seven little-endian f64s
//! `(r_min, r_max, z_min, z_max, n_r, n_z, h)`, then the values in CSV order.

use crate::field::GridSpec;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 6] = b"HALOF1";

/// Shortest round-trip text for `x`, switching to exponent form for very
/// small or large magnitudes.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e7).contains(&a) || !a.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn write_grid_csv<W: Write>(
    mut w: W,
    grid: &GridSpec,
    values: &[f64],
    column: &str,
) -> io::Result<()> {
    check_len(grid, values)?;
    writeln!(w, "r_m,z_m,{column}")?;
    for i in 0..grid.n_r {
        let r = grid.r(i);
        for j in 0..grid.n_z {
            writeln!(
                w,
                "{},{},{}",
                fmt_f64(r),
                fmt_f64(grid.z(j)),
                fmt_f64(values[grid.index(i, j)])
            )?;
        }
    }
    Ok(())
}

pub fn write_grid_binary<W: Write>(mut w: W, grid: &GridSpec, values: &[f64]) -> io::Result<()> {
    check_len(grid, values)?;
    w.write_all(MAGIC)?;
    let header = [
        grid.r_min,
        grid.r_max,
        grid.z_min,
        grid.z_max,
        grid.n_r as f64,
        grid.n_z as f64,
        grid.h,
    ];
    for v in header.iter().chain(values) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid_binary<R: Read>(mut r: R) -> io::Result<(GridSpec, Vec<f64>)> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("not a HALOF1 dump"));
    }
    let mut next = || -> io::Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let [r_min, r_max, z_min, z_max, n_r, n_z, h] =
        [next()?, next()?, next()?, next()?, next()?, next()?, next()?];
    let counts_ok = |n: f64| n.fract() == 0.0 && (1.0..1e9).contains(&n);
    if !counts_ok(n_r) || !counts_ok(n_z) {
        return Err(invalid("corrupt grid descriptor"));
    }
    let grid = GridSpec {
        r_min,
        r_max,
        z_min,
        z_max,
        n_r: n_r as usize,
        n_z: n_z as usize,
        h,
    };
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        values.push(next()?);
    }
    Ok((grid, values))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| invalid("output path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn check_len(grid: &GridSpec, values: &[f64]) -> io::Result<()> {
    if values.len() != grid.len() {
        return Err(invalid("value count does not match grid"));
    }
    Ok(())
}

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}
