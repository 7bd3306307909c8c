//! Binary snapshots of enhanced noise.
//!
//! Layout (all little-endian): an 8-byte magic `KPZTREE1`, a fixed header,
//! then the frames of the three trees interleaved frame-major, each frame
//! `n_points` f64 values. The transport drift is not stored; it is a
//! deterministic function of the stored trees (the sum of their spectral
//! derivatives) and is rebuilt bit-identically on read.
//!
//! Header fields, in order:
//! `n_points: u32, n_frames: u32, period: f64, dt: f64, seed: u64,
//! mollification_scale: f64, c_ren: f64`.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{SpaceTimeField, TorusGrid};
use crate::noise::EnhancedNoise;

const MAGIC: &[u8; 8] = b"KPZTREE1";

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Write an enhanced-noise snapshot.
pub fn write_snapshot(path: impl AsRef<Path>, trees: &EnhancedNoise) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    let grid = trees.grid();
    put_u32(&mut w, grid.n_points() as u32)?;
    put_u32(&mut w, trees.n_frames() as u32)?;
    put_f64(&mut w, grid.period())?;
    put_f64(&mut w, trees.dt())?;
    put_u64(&mut w, trees.seed)?;
    put_f64(&mut w, trees.mollification_scale)?;
    put_f64(&mut w, trees.c_ren)?;
    for i in 0..trees.n_frames() {
        for field in [&trees.y, &trees.y_quad, &trees.y_rem] {
            for &v in field.frame(i) {
                put_f64(&mut w, v)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a snapshot back, rebuilding the drift frames.
pub fn read_snapshot(path: impl AsRef<Path>) -> Result<EnhancedNoise> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| {
        Error::SnapshotFormat("file too short for a snapshot header".into())
    })?;
    if &magic != MAGIC {
        return Err(Error::SnapshotFormat(format!(
            "bad magic {:02x?}, expected {MAGIC:02x?}",
            magic
        )));
    }
    let n_points = get_u32(&mut r)? as usize;
    let n_frames = get_u32(&mut r)? as usize;
    let period = get_f64(&mut r)?;
    let dt = get_f64(&mut r)?;
    let seed = get_u64(&mut r)?;
    let mollification_scale = get_f64(&mut r)?;
    let c_ren = get_f64(&mut r)?;
    if n_frames == 0 {
        return Err(Error::SnapshotFormat("snapshot has no frames".into()));
    }
    let grid = TorusGrid::with_period(n_points, period)
        .map_err(|e| Error::SnapshotFormat(format!("bad grid in header: {e}")))?;

    let mut bulk = Vec::new();
    r.read_to_end(&mut bulk)?;
    let expect = n_frames * 3 * n_points * 8;
    if bulk.len() != expect {
        return Err(Error::SnapshotFormat(format!(
            "payload is {} bytes, expected {expect} for {n_frames} frames of {n_points} points",
            bulk.len()
        )));
    }
    let mut y = vec![0.0; n_frames * n_points];
    let mut y_quad = vec![0.0; n_frames * n_points];
    let mut y_rem = vec![0.0; n_frames * n_points];
    let mut off = 0;
    for i in 0..n_frames {
        for dst in [&mut y, &mut y_quad, &mut y_rem] {
            for j in 0..n_points {
                let mut b = [0u8; 8];
                b.copy_from_slice(&bulk[off..off + 8]);
                dst[i * n_points + j] = f64::from_le_bytes(b);
                off += 8;
            }
        }
    }
    let y = SpaceTimeField::new(grid, dt, n_frames, y)
        .map_err(|e| Error::SnapshotFormat(e.to_string()))?;
    let y_quad = SpaceTimeField::new(grid, dt, n_frames, y_quad)
        .map_err(|e| Error::SnapshotFormat(e.to_string()))?;
    let y_rem = SpaceTimeField::new(grid, dt, n_frames, y_rem)
        .map_err(|e| Error::SnapshotFormat(e.to_string()))?;

    // Rebuilt through the same per-frame recipe the builder uses, so the
    // drift is bit-identical to the one snapshotted from.
    let mut drift = vec![0.0; n_frames * n_points];
    for i in 0..n_frames {
        let d = crate::noise::drift_frame(grid, y.frame(i), y_quad.frame(i), y_rem.frame(i))?;
        drift[i * n_points..(i + 1) * n_points].copy_from_slice(&d);
    }
    let drift = SpaceTimeField::new(grid, dt, n_frames, drift)?;

    Ok(EnhancedNoise {
        y,
        y_quad,
        y_rem,
        drift,
        c_ren,
        mollification_scale,
        seed,
    })
}
