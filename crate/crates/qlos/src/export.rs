//! File formats.
//!
//! Binary grids start with ASCII header lines terminated by a blank line,
//! followed by little-endian `f64` values in row-major order. Channel exports
//! store each entry as an (re, im) pair.

use std::io::{BufRead, Read, Write};

use crate::beam::{FieldMap, DB_FLOOR};
use crate::channel::ChannelMatrix;
use crate::codebook::{Codebook, SamplingPlan};
use crate::eval::SweepRow;
use crate::search::SearchResult;
use crate::{CMat, Error, Result};

use num_complex::Complex64;

pub const SWEEP_COLUMNS: [&str; 7] = [
    "sweep_variable",
    "value",
    "scheme",
    "seed",
    "spectral_efficiency_bps_hz",
    "overhead_slots",
    "notes",
];

pub fn write_channel<W: Write>(mut w: W, channel: &ChannelMatrix) -> Result<()> {
    let h = &channel.entries;
    writeln!(w, "qlos-channel 1")?;
    writeln!(w, "model {}", channel.model.name())?;
    writeln!(w, "rows {}", h.nrows())?;
    writeln!(w, "cols {}", h.ncols())?;
    writeln!(w, "calibrated {}", u8::from(channel.calibrated))?;
    writeln!(w)?;
    for r in 0..h.nrows() {
        for c in 0..h.ncols() {
            w.write_all(&h[(r, c)].re.to_le_bytes())?;
            w.write_all(&h[(r, c)].im.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Parse("header not terminated".into()));
        }
        let line = line.trim_end();
        if line.is_empty() {
            return Ok(out);
        }
        let (k, v) = line.split_once(' ').unwrap_or((line, ""));
        out.push((k.to_string(), v.to_string()));
    }
}

fn header_value<T: std::str::FromStr>(h: &[(String, String)], key: &str) -> Result<T> {
    h.iter()
        .find(|(k, _)| k == key)
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| Error::Parse(format!("missing or malformed header field '{key}'")))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Entries of a channel export; header fields are checked for shape only.
pub fn read_channel<R: BufRead>(mut r: R) -> Result<CMat> {
    let h = read_header(&mut r)?;
    let rows: usize = header_value(&h, "rows")?;
    let cols: usize = header_value(&h, "cols")?;
    let v = read_f64s(&mut r, 2 * rows * cols)?;
    Ok(CMat::from_fn(rows, cols, |i, j| {
        let k = 2 * (i * cols + j);
        Complex64::new(v[k], v[k + 1])
    }))
}

pub fn write_fieldmap_csv<W: Write>(w: W, map: &FieldMap) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x_m", "y_m", "power_db", "masked"])?;
    for (iy, y) in map.ys.iter().enumerate() {
        for (ix, x) in map.xs.iter().enumerate() {
            out.write_record([x.to_string(), y.to_string(), map.power_db[iy][ix].to_string(), u8::from(map.masked[iy][ix]).to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_fieldmap_bin<W: Write>(mut w: W, map: &FieldMap) -> Result<()> {
    writeln!(w, "qlos-fieldmap 1")?;
    writeln!(w, "nx {}", map.xs.len())?;
    writeln!(w, "ny {}", map.ys.len())?;
    writeln!(w, "x_min {}", map.xs[0])?;
    writeln!(w, "x_max {}", map.xs[map.xs.len() - 1])?;
    writeln!(w, "y_min {}", map.ys[0])?;
    writeln!(w, "y_max {}", map.ys[map.ys.len() - 1])?;
    writeln!(w, "floor_db {DB_FLOOR}")?;
    writeln!(w, "mask_applied {}", u8::from(map.mask_applied))?;
    writeln!(w)?;
    for row in &map.power_db {
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Grid values of a field-map export, `[iy][ix]`.
pub fn read_fieldmap_bin<R: BufRead>(mut r: R) -> Result<Vec<Vec<f64>>> {
    let h = read_header(&mut r)?;
    let nx: usize = header_value(&h, "nx")?;
    let ny: usize = header_value(&h, "ny")?;
    let v = read_f64s(&mut r, nx * ny)?;
    Ok(v.chunks(nx).map(|c| c.to_vec()).collect())
}

pub fn write_trace_csv<W: Write>(w: W, result: &SearchResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["slot", "stage", "codeword_id", "a", "r", "theta", "power_db"])?;
    for e in &result.trace {
        let db = if e.power > 0.0 { 10.0 * e.power.log10() } else { f64::NEG_INFINITY };
        out.write_record([
            e.slot.to_string(),
            e.stage.to_string(),
            e.index.to_string(),
            e.params.curving.to_string(),
            e.params.focus_distance.to_string(),
            e.params.focus_angle.to_string(),
            db.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_codebook_csv<W: Write>(w: W, codebook: &Codebook) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["codeword_id", "a", "r", "theta"])?;
    for (i, p) in codebook.entries.iter().enumerate() {
        out.write_record([i.to_string(), p.curving.to_string(), p.focus_distance.to_string(), p.focus_angle.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Plain-text summary of a sampling plan.
pub fn plan_summary(plan: &SamplingPlan) -> String {
    let (j, k, v) = plan.counts();
    let (sa, sr) = plan.active_intervals();
    format!(
        "xi_a {}\nxi_r {}\nu {}\nalpha_bar {}\nbeta_bar {}\ngamma_bar {}\ns_a {}\ns_r {}\ns_theta {}\ns_a_empirical {}\ns_r_empirical {}\ninterval_rule {:?}\ngrid_s_a {}\ngrid_s_r {}\na_range {} {}\nr_range {} {}\ncounts {} {} {}\nexhaustive_size {}\n",
        plan.xi_a,
        plan.xi_r,
        plan.u,
        plan.alpha_bar,
        plan.beta_bar,
        plan.gamma_bar,
        plan.s_a,
        plan.s_r,
        plan.s_theta,
        plan.s_a_empirical,
        plan.s_r_empirical,
        plan.interval_rule,
        sa,
        sr,
        plan.a_min(),
        plan.a_max(),
        plan.r_min,
        plan.r_max,
        j,
        k,
        v,
        j * k * v
    )
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.sweep_variable.name().to_string(),
            r.value.to_string(),
            r.scheme.name().to_string(),
            r.seed.to_string(),
            r.spectral_efficiency.to_string(),
            r.overhead_slots.to_string(),
            r.notes.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
