//! Plot-ready outputs. Every file carries the configuration digest; numbers
//! use Rust's shortest round-trip formatting, so identical runs produce
//! identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Field;

/// Levels written for `count` levels (`0..count`) at the given stride; the
/// last level is always included.
pub fn snapshot_levels(count: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..count).step_by(stride.max(1)).collect();
    if count > 0 && out.last() != Some(&(count - 1)) {
        out.push(count - 1);
    }
    out
}

/// One row per cell: coordinates then value.
pub fn snapshot_csv(field: &Field, digest: &str) -> String {
    let grid = field.grid();
    let axes = ["x", "y"];
    let mut s = format!("# config_digest: {digest}\n");
    for a in &axes[..grid.dim()] {
        s.push_str(a);
        s.push(',');
    }
    s.push_str("value\n");
    for (i, v) in field.values().iter().enumerate() {
        for c in grid.center(i) {
            let _ = write!(s, "{c},");
        }
        let _ = writeln!(s, "{v}");
    }
    s
}

/// Named columns, one row per entry.
pub fn series_csv(columns: &[&str], rows: &[Vec<f64>], digest: &str) -> String {
    let mut s = format!("# config_digest: {digest}\n{}\n", columns.join(","));
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Pretty JSON with a top-level `config_digest` entry added to objects.
pub fn report_json(value: &impl Serialize, digest: &str) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::Io(e.to_string()))?;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("config_digest".into(), serde_json::Value::String(digest.into()));
    }
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

/// Writes `prefix_NNNN.csv` for each selected level.
pub fn write_snapshots(dir: &Path, prefix: &str, levels: &[Field], offset: usize, stride: usize, digest: &str) -> Result<()> {
    for k in snapshot_levels(levels.len(), stride) {
        write(dir, &format!("{prefix}_{:04}.csv", k + offset), &snapshot_csv(&levels[k], digest))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn snapshot_selection() {
        assert_eq!(snapshot_levels(17, 4), vec![0, 4, 8, 12, 16]);
        assert_eq!(snapshot_levels(6, 4), vec![0, 4, 5]);
        assert_eq!(snapshot_levels(3, 1), vec![0, 1, 2]);
        assert!(snapshot_levels(0, 2).is_empty());
    }

    #[test]
    fn csv_layout() {
        let grid = Grid::new(&[2, 2], &[1.0, 2.0]).unwrap();
        let f = Field::from_values(&grid, vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        assert_eq!(
            snapshot_csv(&f, "ab"),
            "# config_digest: ab\nx,y,value\n0.25,0.5,0.5\n0.75,0.5,-1\n0.25,1.5,2\n0.75,1.5,0\n"
        );
        assert_eq!(
            series_csv(&["level", "mass"], &[vec![0.0, 0.125]], "ab"),
            "# config_digest: ab\nlevel,mass\n0,0.125\n"
        );
    }

    #[test]
    fn json_gets_digest() {
        #[derive(Serialize)]
        struct R {
            a: f64,
        }
        let s = report_json(&R { a: 1.5 }, "ff").unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["config_digest"], "ff");
        assert_eq!(v["a"], 1.5);
    }
}
