//! Binary STL.

use std::io::{BufWriter, Write};
use std::path::Path;

use super::SurfaceMesh;
use crate::error::{Error, Result};
use crate::geom::Vec3;

const HEADER: &[u8] = b"histo3d binary STL";

pub fn write_stl(path: &Path, mesh: &SurfaceMesh) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = [0u8; 80];
    header[..HEADER.len()].copy_from_slice(HEADER);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    write(&header)?;
    write(&(mesh.triangles.len() as u32).to_le_bytes())?;
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
        let n = (b - a).cross(c - a);
        let len = n.norm();
        let n = if len > 0.0 { n / len } else { Vec3::ZERO };
        for p in [n, a, b, c] {
            for v in p.to_array() {
                write(&(v as f32).to_le_bytes())?;
            }
        }
        write(&0u16.to_le_bytes())?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a binary STL as a triangle soup: `(normal, [a, b, c])` per facet.
pub fn read_stl(path: &Path) -> Result<Vec<([f32; 3], [[f32; 3]; 3])>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: &str| Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 84 {
        return Err(malformed("shorter than the STL header"));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    if bytes.len() != 84 + 50 * count {
        return Err(malformed("length does not match the facet count"));
    }
    let f = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let v = |o: usize| [f(o), f(o + 4), f(o + 8)];
    Ok((0..count)
        .map(|i| {
            let o = 84 + 50 * i;
            (v(o), [v(o + 12), v(o + 24), v(o + 36)])
        })
        .collect())
}
