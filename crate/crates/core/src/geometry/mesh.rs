use std::fs;
use std::path::Path;

use rand::Rng;

use super::{norm, sub, GeometryError, Point3, PointCloud, Result};
use crate::seed;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= nv)) {
            return Err(GeometryError::InvalidArgument(format!(
                "face {f:?} references a vertex outside 0..{nv}"
            )));
        }
        Ok(Self { vertices, faces })
    }

    pub fn triangle(&self, face: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        let u = sub(&b, &a);
        let v = sub(&c, &a);
        let cross = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        0.5 * norm(&cross)
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn vertex_centroid(&self) -> Point3 {
        PointCloud::new(self.vertices.clone()).centroid()
    }
}

/// Loads an OFF or OBJ mesh, chosen by file extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "off" => parse_off(&fs::read_to_string(path)?),
        "obj" => parse_obj(&fs::read_to_string(path)?),
        _ => Err(GeometryError::UnsupportedFormat(path.display().to_string())),
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> GeometryError {
    GeometryError::Parse { line, message: message.into() }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("expected a number, found `{tok}`")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite coordinate `{tok}`")));
    }
    Ok(v)
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("expected an index, found `{tok}`")))
}

/// Splits a polygon into a triangle fan.
fn fan(poly: &[usize], out: &mut Vec<[usize; 3]>) {
    for k in 1..poly.len() - 1 {
        out.push([poly[0], poly[k], poly[k + 1]]);
    }
}

/// Parses OFF text. Vertex lines must hold exactly three coordinates;
/// polygons with more than three corners are fan-triangulated.
pub fn parse_off(text: &str) -> Result<TriangleMesh> {
    // (1-based line number, tokens) for every non-blank, non-comment line
    let mut lines = text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
    });
    let last_line = text.lines().count();

    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let first = header[0];
    if !first.starts_with("OFF") {
        return Err(parse_err(hline, "missing OFF header"));
    }
    // "OFF" may share its line with the counts, including the glued "OFF12 8 0" form
    let mut counts: Vec<&str> = Vec::new();
    if first.len() > 3 {
        counts.push(&first[3..]);
    }
    counts.extend(&header[1..]);
    let (cline, counts) = if counts.is_empty() {
        let (l, toks) = lines
            .next()
            .ok_or_else(|| parse_err(last_line, "missing vertex/face counts"))?;
        (l, toks)
    } else {
        (hline, counts)
    };
    if counts.len() < 2 {
        return Err(parse_err(cline, "expected `vertices faces [edges]` counts"));
    }
    let nv = parse_usize(counts[0], cline)?;
    let nf = parse_usize(counts[1], cline)?;

    let mut vertices = Vec::with_capacity(nv);
    for k in 0..nv {
        let (l, toks) = lines.next().ok_or_else(|| {
            parse_err(last_line + 1, format!("unexpected end of file: vertex {k} of {nv} missing"))
        })?;
        if toks.len() != 3 {
            return Err(parse_err(
                l,
                format!("vertex {k} of {nv}: expected 3 coordinates, found {}", toks.len()),
            ));
        }
        vertices.push([parse_f64(toks[0], l)?, parse_f64(toks[1], l)?, parse_f64(toks[2], l)?]);
    }

    let mut faces = Vec::with_capacity(nf);
    for k in 0..nf {
        let (l, toks) = lines.next().ok_or_else(|| {
            parse_err(last_line + 1, format!("unexpected end of file: face {k} of {nf} missing"))
        })?;
        let corners = parse_usize(toks[0], l)?;
        if corners < 3 || toks.len() < corners + 1 {
            return Err(parse_err(l, format!("face {k}: malformed polygon")));
        }
        let poly = toks[1..=corners]
            .iter()
            .map(|t| {
                let i = parse_usize(t, l)?;
                if i >= nv {
                    return Err(parse_err(l, format!("vertex index {i} out of range 0..{nv}")));
                }
                Ok(i)
            })
            .collect::<Result<Vec<_>>>()?;
        fan(&poly, &mut faces);
    }
    TriangleMesh::new(vertices, faces)
}

/// Parses the position and face records of Wavefront OBJ text. Indices are
/// 1-based (negative values count back from the latest vertex) and stored
/// 0-based. Normals, texture coordinates and groups are ignored.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let l = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<&str> = toks.collect();
                if c.len() < 3 {
                    return Err(parse_err(l, "vertex needs 3 coordinates"));
                }
                vertices.push([parse_f64(c[0], l)?, parse_f64(c[1], l)?, parse_f64(c[2], l)?]);
            }
            Some("f") => {
                let poly = toks
                    .map(|t| {
                        let idx = t.split('/').next().unwrap_or("");
                        let v: i64 = idx
                            .parse()
                            .map_err(|_| parse_err(l, format!("bad face index `{t}`")))?;
                        let n = vertices.len() as i64;
                        let resolved = if v > 0 { v - 1 } else { n + v };
                        if v == 0 || resolved < 0 || resolved >= n {
                            return Err(parse_err(l, format!("face index {v} out of range")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if poly.len() < 3 {
                    return Err(parse_err(l, "face needs at least 3 vertices"));
                }
                fan(&poly, &mut faces);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Centers the vertex centroid at the origin and scales uniformly so the
/// farthest vertex has norm one.
pub fn normalize(mesh: &TriangleMesh) -> Result<TriangleMesh> {
    if mesh.vertices.is_empty() {
        return Err(GeometryError::InvalidArgument("mesh has no vertices".into()));
    }
    let c = mesh.vertex_centroid();
    let centered: Vec<Point3> = mesh.vertices.iter().map(|v| sub(v, &c)).collect();
    let scale = centered.iter().map(norm).fold(0.0, f64::max);
    if scale <= 1e-12 {
        return Err(GeometryError::DegenerateMesh);
    }
    let vertices = centered
        .into_iter()
        .map(|v| [v[0] / scale, v[1] / scale, v[2] / scale])
        .collect();
    Ok(TriangleMesh { vertices, faces: mesh.faces.clone() })
}

/// Area-weighted uniform surface sampling.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(GeometryError::InvalidArgument("n must be at least 1".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(GeometryError::ZeroArea);
    }
    let mut rng = seed::rng(seed);
    let points = (0..n)
        .map(|_| {
            let r = rng.gen::<f64>() * total;
            // zero-area faces have no width in the CDF and are never chosen
            let face = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangle(face);
            let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let mut p = [0.0; 3];
            for k in 0..3 {
                p[k] = a[k] + u * (b[k] - a[k]) + v * (c[k] - a[k]);
            }
            p
        })
        .collect();
    Ok(PointCloud::new(points))
}
