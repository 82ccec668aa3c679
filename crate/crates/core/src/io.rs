//! Artifact files: CSV with `#` metadata lines, JSON sidecars for scalar
//! summaries.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use crate::continuation::Branch;
use crate::delay::StepRecord;
use crate::error::{Error, Result};
use crate::floquet::ChartGrid;
use crate::oracle::OracleBranch;
use crate::orbit::PeriodicOrbit;

/// `# key: value` lines written at the top of every CSV artifact.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata(pub Vec<(String, String)>);

impl Metadata {
    pub fn new(kind: &str, config_hash: &str) -> Self {
        Metadata(vec![("artifact".into(), kind.into()), ("config_sha256".into(), config_hash.into())])
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn write<W: Write + ?Sized>(&self, w: &mut W) -> Result<()> {
        for (k, v) in &self.0 {
            writeln!(w, "# {k}: {v}")?;
        }
        Ok(())
    }
}

pub fn write_trajectory<W: Write + ?Sized>(w: &mut W, meta: &Metadata, records: &[StepRecord]) -> Result<()> {
    meta.write(w)?;
    writeln!(w, "t,phi,phi_dot,phi_ref,u,torque")?;
    for r in records {
        writeln!(w, "{},{},{},{},{},{}", r.t, r.phi, r.phi_dot, r.phi_ref, r.u, r.torque)?;
    }
    Ok(())
}

pub fn write_branch<W: Write + ?Sized>(w: &mut W, meta: &Metadata, branch: &Branch) -> Result<()> {
    meta.write(w)?;
    writeln!(w, "index,p,phi0,p_tan,phi0_tan,residual,periods_used,u_sup,flag")?;
    for (i, pt) in branch.points.iter().enumerate() {
        writeln!(
            w,
            "{i},{},{},{},{},{},{},{},{}",
            pt.p, pt.phi0, pt.tangent[0], pt.tangent[1], pt.residual_norm, pt.m1.periods_used, pt.m1.u_sup, pt.flag
        )?;
    }
    Ok(())
}

pub fn write_oracle_branch<W: Write + ?Sized>(w: &mut W, meta: &Metadata, branch: &OracleBranch) -> Result<()> {
    meta.write(w)?;
    writeln!(w, "index,p,avg_phase,phi_start,phi_dot_start,mu_abs,mu_re,mu_im,residual")?;
    for (i, o) in branch.orbits.iter().enumerate() {
        let mu = o.dominant_multiplier();
        writeln!(
            w,
            "{i},{},{},{},{},{},{},{},{}",
            o.p,
            o.avg_phase,
            o.phi[0],
            o.phi_dot[0],
            mu.norm(),
            mu.re,
            mu.im,
            o.residual
        )?;
    }
    Ok(())
}

pub fn write_orbit<W: Write + ?Sized>(w: &mut W, meta: &Metadata, orbit: &PeriodicOrbit) -> Result<()> {
    meta.write(w)?;
    writeln!(w, "t,phi,phi_dot")?;
    let dt = orbit.dt();
    for (k, (p, d)) in orbit.phi.iter().zip(&orbit.phi_dot).enumerate() {
        writeln!(w, "{},{p},{d}", k as f64 * dt)?;
    }
    Ok(())
}

pub fn write_json<W: Write + ?Sized, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartFormat {
    /// One row per phase, one column per gain.
    Wide,
    /// One `g,phase,value,flag` row per cell.
    Long,
}

pub fn write_chart<W: Write + ?Sized>(w: &mut W, meta: &Metadata, grid: &ChartGrid, format: ChartFormat) -> Result<()> {
    meta.write(w)?;
    match format {
        ChartFormat::Wide => {
            write!(w, "phase")?;
            for g in &grid.g_values {
                write!(w, ",{g}")?;
            }
            writeln!(w)?;
            for i in 0..grid.rows() {
                write!(w, "{}", grid.phase_values[i])?;
                for j in 0..grid.cols() {
                    write!(w, ",{}", grid.get(i, j))?;
                }
                writeln!(w)?;
            }
        }
        ChartFormat::Long => {
            writeln!(w, "g,phase,value,flag")?;
            for i in 0..grid.rows() {
                for j in 0..grid.cols() {
                    writeln!(w, "{},{},{},{}", grid.g_values[j], grid.phase_values[i], grid.get(i, j), grid.flag(i, j))?;
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ChartAxesJson<'a> {
    pub quantity: &'a str,
    pub g_values: &'a [f64],
    pub phase_values: &'a [f64],
    pub mesh: usize,
    pub fold_phase: f64,
    pub config_sha256: &'a str,
}

/// A CSV artifact read back.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Metadata,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Io(format!("missing column `{name}`")))
    }

    pub fn f64_column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .map(|r| {
                r.get(c)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Io(format!("bad value in column `{name}`")))
            })
            .collect()
    }

    pub fn str_column(&self, name: &str) -> Result<Vec<&str>> {
        let c = self.column(name)?;
        Ok(self.rows.iter().map(|r| r.get(c).map_or("", |s| s.as_str())).collect())
    }
}

pub fn read_table<R: BufRead>(r: R) -> Result<Table> {
    let mut meta = Metadata::default();
    let mut columns = None;
    let mut rows = Vec::new();
    for line in r.lines() {
        let line = line?;
        if let Some(m) = line.strip_prefix('#') {
            if let Some((k, v)) = m.split_once(':') {
                meta.0.push((k.trim().into(), v.trim().into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if columns.is_none() {
            columns = Some(fields);
        } else {
            rows.push(fields);
        }
    }
    Ok(Table {
        meta,
        columns: columns.ok_or_else(|| Error::Io("empty table".into()))?,
        rows,
    })
}

pub fn read_table_file(path: &Path) -> Result<Table> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_table(BufReader::new(f))
}

/// Write to `path` through a buffer.
pub fn write_file(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::CellFlag;

    #[test]
    fn trajectory_table_round_trips() {
        let recs = vec![
            StepRecord {
                t: 0.1,
                phi: 1.0,
                phi_dot: -2.5,
                phi_ref: 0.25,
                u: 1e-9,
                torque: -3.0,
            };
            3
        ];
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &Metadata::new("trajectory", "abc").with("p", 0.02), &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# artifact: trajectory\n# config_sha256: abc\n# p: 0.02\nt,phi,phi_dot,phi_ref,u,torque\n"));
        let table = read_table(&buf[..]).unwrap();
        assert_eq!(table.meta.get("config_sha256"), Some("abc"));
        assert_eq!(table.rows.len(), 3);
        assert_eq!(table.f64_column("u").unwrap(), vec![1e-9; 3]);
    }

    #[test]
    fn chart_formats() {
        let grid = ChartGrid {
            g_values: vec![0.0, 1.0],
            phase_values: vec![3.0],
            values: vec![1.2, 0.5],
            flags: vec![CellFlag::Ok, CellFlag::Ok],
            inv_norms: vec![],
            row2_norms: vec![],
        };
        let meta = Metadata::default();
        let mut wide = Vec::new();
        write_chart(&mut wide, &meta, &grid, ChartFormat::Wide).unwrap();
        assert_eq!(String::from_utf8(wide).unwrap(), "phase,0,1\n3,1.2,0.5\n");
        let mut long = Vec::new();
        write_chart(&mut long, &meta, &grid, ChartFormat::Long).unwrap();
        assert_eq!(String::from_utf8(long).unwrap(), "g,phase,value,flag\n0,3,1.2,ok\n1,3,0.5,ok\n");
    }
}
