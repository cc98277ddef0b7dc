//! CSV point clouds: one point per row, plain decimal coordinates.

use std::fmt::Write as _;
use std::path::Path;

use super::{GeometryError, PointCloud};

/// Parses a cloud. A first row that does not parse as numbers is treated as a
/// header and skipped; blank lines are ignored.
pub fn read_csv_str(text: &str) -> Result<PointCloud, GeometryError> {
    let mut dim = None;
    let mut data = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if dim.is_none() && data.is_empty() && lineno == 0 => continue,
            Err(e) => {
                return Err(GeometryError::Csv(format!("line {}: {e}", lineno + 1)));
            }
        };
        match dim {
            None => dim = Some(row.len()),
            Some(n) if n != row.len() => {
                return Err(GeometryError::Csv(format!(
                    "line {}: expected {n} columns, found {}",
                    lineno + 1,
                    row.len()
                )));
            }
            Some(_) => {}
        }
        data.extend(row);
    }
    let dim = dim.ok_or(GeometryError::Empty)?;
    PointCloud::from_flat(dim, data)
}

pub fn read_csv(path: &Path) -> Result<PointCloud, GeometryError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))?;
    read_csv_str(&text).map_err(|e| match e {
        GeometryError::Csv(msg) => GeometryError::Csv(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Formats a cloud. `Display` for `f64` prints the shortest decimal that
/// round-trips, so reading the output back is bit-exact.
pub fn write_csv_string(cloud: &PointCloud, header: bool) -> String {
    let mut out = String::new();
    if header {
        let names: Vec<String> = (0..cloud.ambient_dim()).map(|k| format!("x{k}")).collect();
        out.push_str(&names.join(","));
        out.push('\n');
    }
    for p in cloud.iter() {
        for (k, v) in p.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(cloud: &PointCloud, path: &Path, header: bool) -> Result<(), GeometryError> {
    std::fs::write(path, write_csv_string(cloud, header))
        .map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))
}
