//! Binary little-endian PLY files in the layout used by 3D Gaussian splatting
//! tools: one `vertex` element whose properties include position, normal,
//! spherical-harmonic color, opacity logit, log-scales and a rotation quaternion.
//!
//! Vertex rows are kept as raw bytes, so every property, known or not, is
//! written back exactly as it was read.

use std::path::Path;

use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::gaussian::sigmoid;
use crate::sparsify::top_k_indices;

/// Property names every splat file must provide, all as `float`.
pub fn required_properties() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..45).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(token: &str) -> Option<Self> {
        Some(match token {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlyProperty {
    pub name: String,
    /// Type keyword as spelled in the header.
    pub type_name: String,
    pub scalar: ScalarType,
    /// Byte offset inside a vertex row.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplatPlyRecord {
    /// `comment` and `obj_info` header lines, verbatim.
    pub comments: Vec<String>,
    pub properties: Vec<PlyProperty>,
    pub count: usize,
    pub row_size: usize,
    /// `count` rows of `row_size` bytes.
    pub data: Vec<u8>,
}

impl SplatPlyRecord {
    pub fn property(&self, name: &str) -> Option<&PlyProperty> {
        self.properties.iter().find(|p| p.name == name)
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.row_size..(i + 1) * self.row_size]
    }

    /// Values of a `float` property, one per vertex.
    pub fn column_f32(&self, name: &str) -> Result<Vec<f32>> {
        let p = self.property(name).ok_or_else(|| Error::PlySchema {
            missing: vec![name.to_string()],
        })?;
        if p.scalar != ScalarType::F32 {
            return Err(Error::PlyFormat(format!("property `{name}` is `{}`, expected float", p.type_name)));
        }
        Ok((0..self.count)
            .map(|i| f32::from_le_bytes(self.row(i)[p.offset..p.offset + 4].try_into().unwrap()))
            .collect())
    }

    /// Activated opacities `sigmoid(opacity)`.
    pub fn opacities(&self) -> Result<Vec<f64>> {
        Ok(self.column_f32("opacity")?.into_iter().map(|l| sigmoid(l as f64)).collect())
    }

    /// Keeps the vertices at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> SplatPlyRecord {
        let mut data = Vec::with_capacity(indices.len() * self.row_size);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        SplatPlyRecord {
            comments: self.comments.clone(),
            properties: self.properties.clone(),
            count: indices.len(),
            row_size: self.row_size,
            data,
        }
    }

    fn validate_schema(&self) -> Result<()> {
        let missing: Vec<String> = required_properties().into_iter().filter(|n| self.property(n).is_none()).collect();
        if !missing.is_empty() {
            return Err(Error::PlySchema { missing });
        }
        for name in required_properties() {
            let p = self.property(&name).expect("checked above");
            if p.scalar != ScalarType::F32 {
                return Err(Error::PlyFormat(format!("property `{name}` is `{}`, expected float", p.type_name)));
            }
        }
        Ok(())
    }

    pub fn header(&self) -> String {
        let mut h = String::from("ply\nformat binary_little_endian 1.0\n");
        for c in &self.comments {
            h.push_str(c);
            h.push('\n');
        }
        h.push_str(&format!("element vertex {}\n", self.count));
        for p in &self.properties {
            h.push_str(&format!("property {} {}\n", p.type_name, p.name));
        }
        h.push_str("end_header\n");
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header().into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::PlyFormat(msg.into())
}

/// Parses a splat PLY from memory.
pub fn parse_splat_ply(bytes: &[u8]) -> Result<SplatPlyRecord> {
    const END: &[u8] = b"end_header\n";
    let header_end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .map(|p| p + END.len())
        .ok_or_else(|| format_err("no end_header line"))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| format_err("header is not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(format_err("missing `ply` magic line"));
    }

    let mut comments = Vec::new();
    let mut properties: Vec<PlyProperty> = Vec::new();
    let mut count = None;
    let mut saw_format = false;
    let mut row_size = 0;
    for line in lines {
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("format") => {
                let rest: Vec<&str> = tokens.collect();
                if rest != ["binary_little_endian", "1.0"] {
                    return Err(format_err(format!("unsupported format `{}`", rest.join(" "))));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") => comments.push(line.to_string()),
            Some("element") => {
                let name = tokens.next();
                let n = tokens.next().and_then(|t| t.parse::<usize>().ok());
                match (name, n) {
                    (Some("vertex"), Some(n)) if count.is_none() => count = Some(n),
                    (Some("vertex"), _) => return Err(format_err(format!("bad vertex element line `{line}`"))),
                    (Some(other), _) => return Err(format_err(format!("unsupported element `{other}`"))),
                    (None, _) => return Err(format_err("element line without a name")),
                }
            }
            Some("property") => {
                if count.is_none() {
                    return Err(format_err("property before the vertex element"));
                }
                let type_name = tokens.next().ok_or_else(|| format_err("property without a type"))?;
                if type_name == "list" {
                    return Err(format_err("list properties are not supported"));
                }
                let scalar = ScalarType::parse(type_name).ok_or_else(|| format_err(format!("unknown property type `{type_name}`")))?;
                let name = tokens.next().ok_or_else(|| format_err("property without a name"))?;
                if properties.iter().any(|p| p.name == name) {
                    return Err(format_err(format!("duplicate property `{name}`")));
                }
                properties.push(PlyProperty {
                    name: name.to_string(),
                    type_name: type_name.to_string(),
                    scalar,
                    offset: row_size,
                });
                row_size += scalar.size();
            }
            Some("end_header") => break,
            Some(other) => return Err(format_err(format!("unexpected header keyword `{other}`"))),
            None => return Err(format_err("empty header line")),
        }
    }
    if !saw_format {
        return Err(format_err("missing format line"));
    }
    let count = count.ok_or_else(|| format_err("no vertex element"))?;
    let data = &bytes[header_end..];
    let expected = count.checked_mul(row_size).ok_or_else(|| format_err("vertex count overflows"))?;
    if data.len() != expected {
        return Err(format_err(format!(
            "header declares {count} vertices of {row_size} bytes ({expected} bytes), payload has {}",
            data.len()
        )));
    }
    let record = SplatPlyRecord {
        comments,
        properties,
        count,
        row_size,
        data: data.to_vec(),
    };
    record.validate_schema()?;
    Ok(record)
}

pub fn read_splat_ply(path: impl AsRef<Path>) -> Result<SplatPlyRecord> {
    let path = path.as_ref();
    parse_splat_ply(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_splat_ply(record: &SplatPlyRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, record.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Ranking used when simplifying a splat file.
#[derive(Clone, Debug, PartialEq)]
pub enum PlyScore {
    /// Activated opacity. Ranked through the logit, which orders identically
    /// but does not saturate.
    Opacity,
    /// One score per vertex; larger is kept first.
    External(Vec<f64>),
}

/// Keeps the `kappa` highest-ranked vertices in their original order; ties go
/// to the lower index. Retained rows are copied byte for byte.
pub fn simplify_splat_ply(record: &SplatPlyRecord, kappa: usize, score: &PlyScore) -> Result<SplatPlyRecord> {
    if kappa > record.count {
        return Err(Error::InvalidBudget { kappa, n: record.count });
    }
    let scores: Vec<f64> = match score {
        PlyScore::Opacity => record.column_f32("opacity")?.into_iter().map(f64::from).collect(),
        PlyScore::External(s) => {
            if s.len() != record.count {
                return Err(Error::InvalidArgument(format!("{} scores for {} vertices", s.len(), record.count)));
            }
            s.clone()
        }
    };
    Ok(record.select(&top_k_indices(&scores, kappa)))
}

/// Builds a record with the required schema and the given per-vertex values,
/// in [`required_properties`] order, with one `comment` line per entry of
/// `comments`.
pub fn splat_record_from_rows(rows: &[Vec<f32>], comments: Vec<String>) -> Result<SplatPlyRecord> {
    let comments = comments.into_iter().map(|c| format!("comment {c}")).collect();
    let names = required_properties();
    let mut properties = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        properties.push(PlyProperty {
            name: name.clone(),
            type_name: "float".into(),
            scalar: ScalarType::F32,
            offset: 4 * k,
        });
    }
    let mut data = Vec::with_capacity(rows.len() * names.len() * 4);
    for row in rows {
        if row.len() != names.len() {
            return Err(Error::InvalidArgument(format!("row has {} values, schema has {}", row.len(), names.len())));
        }
        for v in row {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(SplatPlyRecord {
        comments,
        properties,
        count: rows.len(),
        row_size: names.len() * 4,
        data,
    })
}

/// Zeroth-order spherical-harmonic basis constant.
const SH_C0: f64 = 0.282_094_791_773_878_14;

/// Exports the alive Gaussians of a 2D cloud in the splat layout: the image
/// plane becomes z = 0, rotation is a quaternion about the z axis, the third
/// scale is the smaller in-plane scale, and color goes to the DC coefficients.
/// Values are narrowed to `f32`.
pub fn cloud_to_splat_ply(cloud: &GaussianCloud) -> SplatPlyRecord {
    let rows: Vec<Vec<f32>> = (0..cloud.len())
        .filter(|&i| cloud.alive[i])
        .map(|i| {
            let g = cloud.get(i);
            let mut row = vec![g.mu[0], g.mu[1], 0.0, 0.0, 0.0, 0.0];
            row.extend(g.color.iter().map(|c| (c - 0.5) / SH_C0));
            row.extend(std::iter::repeat_n(0.0, 45));
            row.push(g.opacity_logit);
            row.extend([g.log_s[0], g.log_s[1], g.log_s[0].min(g.log_s[1])]);
            let (s, c) = (g.theta / 2.0).sin_cos();
            row.extend([c, 0.0, 0.0, s]);
            row.into_iter().map(|v| v as f32).collect()
        })
        .collect();
    splat_record_from_rows(&rows, vec!["exported by splatspa".into()]).expect("rows follow the schema")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_with_opacity(logit: f32, tag: f32) -> Vec<f32> {
        let n = required_properties().len();
        let mut row: Vec<f32> = (0..n).map(|k| tag + k as f32 * 0.25).collect();
        row[54] = logit;
        row
    }

    #[test]
    fn exported_cloud_parses() {
        let mut cloud = GaussianCloud::from_gaussians(&[
            crate::gaussian::Gaussian2D::isotropic([1.0, 2.0], 0.3),
            crate::gaussian::Gaussian2D::isotropic([3.0, 4.0], -0.2),
        ]);
        cloud.alive[0] = false;
        let rec = parse_splat_ply(&cloud_to_splat_ply(&cloud).to_bytes()).unwrap();
        assert_eq!(rec.count, 1);
        assert_eq!(rec.column_f32("x").unwrap(), vec![3.0]);
        assert_eq!(rec.column_f32("rot_0").unwrap(), vec![1.0]);
    }

    #[test]
    fn schema_has_62_floats() {
        let names = required_properties();
        assert_eq!(names.len(), 62);
        assert_eq!(names[54], "opacity");
    }

    #[test]
    fn minimal_single_vertex() {
        let rec = splat_record_from_rows(&[row_with_opacity(0.5, 1.0)], vec![]).unwrap();
        let parsed = parse_splat_ply(&rec.to_bytes()).unwrap();
        assert_eq!(parsed.count, 1);
        assert_eq!(parsed, rec);
    }

    #[test]
    fn missing_property_is_named() {
        let rec = splat_record_from_rows(&[row_with_opacity(0.5, 1.0)], vec![]).unwrap();
        let text = String::from_utf8(rec.header().into_bytes()).unwrap().replace("property float f_dc_1\n", "");
        let mut bytes = text.into_bytes();
        bytes.extend_from_slice(&rec.data[..rec.row_size - 4]);
        let err = parse_splat_ply(&bytes).unwrap_err();
        match err {
            Error::PlySchema { missing } => assert_eq!(missing, vec!["f_dc_1".to_string()]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_properties_survive() {
        let rec = splat_record_from_rows(&[row_with_opacity(0.1, 2.0)], vec!["made by hand".into()]).unwrap();
        let header = rec.header().replace("end_header\n", "property uchar flag\nproperty double weight\nend_header\n");
        let mut bytes = header.into_bytes();
        bytes.extend_from_slice(&rec.data);
        bytes.push(7);
        bytes.extend_from_slice(&1.25f64.to_le_bytes());
        let parsed = parse_splat_ply(&bytes).unwrap();
        assert_eq!(parsed.row_size, rec.row_size + 9);
        assert_eq!(parsed.comments, vec!["comment made by hand".to_string()]);
        assert_eq!(parsed.to_bytes(), bytes);
    }

    #[test]
    fn payload_size_mismatch_rejected() {
        let rec = splat_record_from_rows(&[row_with_opacity(0.1, 2.0)], vec![]).unwrap();
        let mut bytes = rec.to_bytes();
        bytes.pop();
        assert!(matches!(parse_splat_ply(&bytes), Err(Error::PlyFormat(_))));
    }

    #[test]
    fn ascii_format_rejected() {
        let bytes = b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(parse_splat_ply(bytes), Err(Error::PlyFormat(_))));
    }

    #[test]
    fn simplify_keeps_top_two() {
        let logits: Vec<f32> = [0.9f64, 0.1, 0.5, 0.3].iter().map(|&a| (a / (1.0 - a)).ln() as f32).collect();
        let rows: Vec<Vec<f32>> = logits.iter().enumerate().map(|(i, &l)| row_with_opacity(l, i as f32)).collect();
        let rec = splat_record_from_rows(&rows, vec![]).unwrap();
        let out = simplify_splat_ply(&rec, 2, &PlyScore::Opacity).unwrap();
        assert_eq!(out.count, 2);
        assert_eq!(out.row(0), rec.row(0));
        assert_eq!(out.row(1), rec.row(2));
    }

    #[test]
    fn simplify_full_budget_is_identity() {
        let rows: Vec<Vec<f32>> = (0..5).map(|i| row_with_opacity(i as f32 - 2.0, i as f32)).collect();
        let rec = splat_record_from_rows(&rows, vec![]).unwrap();
        assert_eq!(simplify_splat_ply(&rec, 5, &PlyScore::Opacity).unwrap(), rec);
    }

    #[test]
    fn simplify_over_budget_rejected() {
        let rec = splat_record_from_rows(&[row_with_opacity(0.0, 0.0)], vec![]).unwrap();
        assert!(matches!(simplify_splat_ply(&rec, 2, &PlyScore::Opacity), Err(Error::InvalidBudget { kappa: 2, n: 1 })));
    }

    #[test]
    fn simplify_with_external_scores() {
        let rows: Vec<Vec<f32>> = (0..4).map(|i| row_with_opacity(0.0, i as f32)).collect();
        let rec = splat_record_from_rows(&rows, vec![]).unwrap();
        let out = simplify_splat_ply(&rec, 1, &PlyScore::External(vec![0.0, 0.0, 3.0, 1.0])).unwrap();
        assert_eq!(out.row(0), rec.row(2));
        assert!(simplify_splat_ply(&rec, 1, &PlyScore::External(vec![1.0])).is_err());
    }
}
