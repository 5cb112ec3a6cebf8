//! CSV, JSON and gnuplot output.
//!
//! Floats use Rust's shortest round-trip formatting (exponent form for
//! very small or large magnitudes), so every file parses back bit-exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::driver::{Checkpoint, Snapshot, StepReport};
use crate::error::Error;
use crate::mesh::{Layout, Mesh};
use crate::transport::TallySet;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

pub fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Shortest round-trip text, switching to exponent form for tiny or huge values.
fn push_num(s: &mut String, v: f64) {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        write!(s, "{v}").expect("string write");
    } else {
        write!(s, "{v:e}").expect("string write");
    }
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        push_num(&mut s, v);
    }
    s
}

/// Snapshot table. 1D rows are `x_center,T_material,T_radiation` and 2D rows
/// `x,y,T_material,T_radiation`; `with_rho` appends one `rho_g` column per group.
pub fn snapshot_csv(mesh: &Mesh, snap: &Snapshot, with_rho: bool) -> String {
    let two_d = mesh.dimension() == 2;
    let mut out =
        String::from(if two_d { "x,y,T_material,T_radiation" } else { "x_center,T_material,T_radiation" });
    if with_rho {
        for g in 0..snap.groups {
            write!(out, ",rho_{g}").expect("string write");
        }
    }
    out.push('\n');
    let g = snap.groups;
    for i in 0..mesh.num_cells() {
        let [x, y] = mesh.center(i);
        let mut row = if two_d { vec![x, y] } else { vec![x] };
        row.push(snap.temperature[i]);
        row.push(snap.radiation_temperature[i]);
        if with_rho {
            row.extend_from_slice(&snap.rho[i * g..(i + 1) * g]);
        }
        out.push_str(&join(row));
        out.push('\n');
    }
    out
}

pub fn write_snapshot(mesh: &Mesh, snap: &Snapshot, with_rho: bool, path: &Path) -> Result<(), Error> {
    write_file(path, &snapshot_csv(mesh, snap, with_rho))
}

/// Header and numeric rows of a CSV file written by this module.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub fn parse_csv(text: &str) -> Result<Table, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> =
        lines.next().ok_or("empty file")?.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("row {}: {e}", n + 1))?;
        if row.len() != header.len() {
            return Err(format!("row {} has {} fields, header has {}", n + 1, row.len(), header.len()));
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

pub fn read_csv(path: &Path) -> Result<Table, Error> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_csv(&text).map_err(|message| Error::Snapshot { path: path.to_path_buf(), message })
}

/// Cells of the row containing height `y`; a `y` on the top edge picks the top row.
pub fn lineout_cells(mesh: &Mesh, y: f64) -> Vec<usize> {
    let Layout::Grid { nx, ny, .. } = *mesh.layout() else {
        return (0..mesh.num_cells()).collect();
    };
    let row = (0..ny)
        .find(|&j| {
            let c = j * nx;
            let (y0, h) = (mesh.origin(c)[1], mesh.width(c)[1]);
            y >= y0 && (y < y0 + h || j + 1 == ny)
        })
        .unwrap_or(if y <= 0.0 { 0 } else { ny - 1 });
    (row * nx..(row + 1) * nx).collect()
}

/// `x,T_material,T_radiation` along the row at height `y`.
pub fn lineout_csv(mesh: &Mesh, snap: &Snapshot, y: f64) -> String {
    let mut out = String::from("x,T_material,T_radiation\n");
    for i in lineout_cells(mesh, y) {
        out.push_str(&join([mesh.center(i)[0], snap.temperature[i], snap.radiation_temperature[i]]));
        out.push('\n');
    }
    out
}

/// Per-step diagnostics.
pub fn diagnostics_csv(reports: &[StepReport]) -> String {
    let mut out = String::from(
        "step,time,dt,picard_iterations,particles,events,scatters,floored,conservation_error,seconds\n",
    );
    for r in reports {
        out.push_str(&join([
            r.step as f64,
            r.time,
            r.dt,
            r.picard_iterations as f64,
            r.particles as f64,
            r.events as f64,
            r.scatters as f64,
            r.floored as f64,
            r.conservation_error(),
            r.seconds,
        ]));
        out.push('\n');
    }
    out
}

/// Picard convergence log: one row per iteration of every step.
pub fn convergence_csv(reports: &[StepReport]) -> String {
    let mut out = String::from("step,iteration,l1_increment\n");
    for r in reports {
        for (k, inc) in r.picard_increments.iter().enumerate() {
            out.push_str(&join([r.step as f64, (k + 1) as f64, *inc]));
            out.push('\n');
        }
    }
    out
}

/// Per cell and group tallies: census energy E^I and absorbed energy E^A.
pub fn tally_csv(tally: &TallySet) -> String {
    let g = tally.groups;
    let mut out = String::from("cell,group,E_I,E_A\n");
    for (k, (ei, ea)) in tally.census.iter().zip(&tally.absorbed).enumerate() {
        out.push_str(&join([(k / g) as f64, (k % g) as f64, *ei, *ea]));
        out.push('\n');
    }
    out
}

pub fn save_checkpoint(cp: &Checkpoint, path: &Path) -> Result<(), Error> {
    let text = serde_json::to_string(cp)
        .map_err(|e| Error::Snapshot { path: path.to_path_buf(), message: e.to_string() })?;
    write_file(path, &text)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, Error> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Snapshot { path: path.to_path_buf(), message: e.to_string() })
}

/// Writes `<stem>.dat` and a `<stem>.gp` script that plots it.
pub fn write_plot(mesh: &Mesh, snap: &Snapshot, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), Error> {
    let data = dir.join(format!("{stem}.dat"));
    let script = dir.join(format!("{stem}.gp"));
    let mut dat = format!("# t = {}\n", snap.time);
    let gp = if mesh.dimension() == 2 {
        let Layout::Grid { nx, .. } = *mesh.layout() else { unreachable!() };
        dat.push_str("# x y T_material T_radiation\n");
        for i in 0..mesh.num_cells() {
            let [x, y] = mesh.center(i);
            writeln!(dat, "{x} {y} {} {}", snap.temperature[i], snap.radiation_temperature[i])
                .expect("string write");
            if (i + 1) % nx == 0 {
                dat.push('\n');
            }
        }
        format!(
            "set terminal pngcairo size 1000,500\nset output '{stem}.png'\nset view map\n\
             set xlabel 'x (cm)'\nset ylabel 'y (cm)'\nset cblabel 'T (keV)'\n\
             splot '{stem}.dat' using 1:2:3 with pm3d title 'T_material'\n"
        )
    } else {
        dat.push_str("# x T_material T_radiation\n");
        for i in 0..mesh.num_cells() {
            writeln!(dat, "{} {} {}", mesh.center(i)[0], snap.temperature[i], snap.radiation_temperature[i])
                .expect("string write");
        }
        format!(
            "set terminal pngcairo size 800,500\nset output '{stem}.png'\n\
             set xlabel 'x (cm)'\nset ylabel 'T (keV)'\n\
             plot '{stem}.dat' using 1:2 with lines title 'T_material', \\\n     \
             '{stem}.dat' using 1:3 with lines title 'T_radiation'\n"
        )
    };
    write_file(&data, &dat)?;
    write_file(&script, &gp)?;
    Ok((data, script))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Geometry, SlabRegion};

    fn one_cell() -> Mesh {
        Mesh::build(&Geometry::Slab {
            regions: vec![SlabRegion { x0: 0.0, x1: 1.0, cells: Some(1), dx: None, material: 0 }],
        })
        .unwrap()
    }

    fn snap(n: usize, groups: usize) -> Snapshot {
        Snapshot {
            step: 3,
            time: 0.1,
            groups,
            temperature: (0..n).map(|i| 0.1 + i as f64 / 3.0).collect(),
            radiation_temperature: (0..n).map(|i| 1.0 / (7.0 + i as f64)).collect(),
            rho: (0..n * groups)
                .map(|k| (k as f64).sqrt() * 1e-17 + if k == 3 { 1e300 } else { 0.0 })
                .collect(),
        }
    }

    #[test]
    fn one_cell_snapshot() {
        let text = snapshot_csv(&one_cell(), &snap(1, 2), false);
        assert_eq!(text.lines().count(), 2);
        let with_rho = snapshot_csv(&one_cell(), &snap(1, 2), true);
        assert!(with_rho.starts_with("x_center,T_material,T_radiation,rho_0,rho_1\n"));
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        let mesh = Mesh::build(&Geometry::Slab {
            regions: vec![SlabRegion { x0: 0.0, x1: 1.0, cells: Some(7), dx: None, material: 0 }],
        })
        .unwrap();
        let s = snap(7, 3);
        let t = parse_csv(&snapshot_csv(&mesh, &s, true)).unwrap();
        assert_eq!(t.column("T_material").unwrap(), s.temperature);
        assert_eq!(t.column("T_radiation").unwrap(), s.radiation_temperature);
        assert_eq!(t.column("rho_2").unwrap()[4], s.rho[4 * 3 + 2]);
    }

    #[test]
    fn parse_rejects_ragged_rows() {
        assert!(parse_csv("a,b\n1,2\n3\n").is_err());
        assert!(parse_csv("a\nx\n").is_err());
    }
}
