use std::fmt::Write as _;

use super::CaptureError;
use crate::geometry::Vec3;

/// ASCII PLY with `x y z red green blue` vertex properties.
pub fn write_ply(points: &[Vec3], colors: &[[u8; 3]]) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", points.len());
    out.push_str(
        "property double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
    );
    for (p, c) in points.iter().zip(colors) {
        let _ = writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, c[0], c[1], c[2]);
    }
    out
}

pub fn read_ply(text: &str) -> Result<(Vec<Vec3>, Vec<[u8; 3]>), CaptureError> {
    let bad = |m: &str| CaptureError::Ply(m.to_owned());
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing magic"));
    }
    let mut count = None;
    for line in lines.by_ref() {
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        if let Some(rest) = line.strip_prefix("format ") {
            if !rest.starts_with("ascii") {
                return Err(bad("only ascii PLY is supported"));
            }
        }
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(n.trim().parse::<usize>().map_err(|_| bad("bad vertex count"))?);
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element"))?;
    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    for i in 0..count {
        let line = lines.next().ok_or_else(|| bad(&format!("missing vertex {i}")))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad(&format!("vertex {i} has {} fields", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("vertex {i}")));
        let byte = |s: &str| s.parse::<u8>().map_err(|_| bad(&format!("vertex {i}")));
        points.push(Vec3::new(num(f[0])?, num(f[1])?, num(f[2])?));
        colors.push([byte(f[3])?, byte(f[4])?, byte(f[5])?]);
    }
    Ok((points, colors))
}
