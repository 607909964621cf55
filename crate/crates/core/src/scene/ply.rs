//! Binary little-endian PLY in the layout used by common Gaussian-splat
//! exporters: `x y z [nx ny nz] f_dc_0..2 f_rest_* opacity scale_0..2
//! rot_0..3`. Scale is stored as a log, opacity as a logit and `f_rest_*`
//! channel-major. Segmentation logits round-trip through the optional
//! `seg_score` / `seg_dual_score` properties.
//!
//! Unknown vertex properties are skipped with a warning; other elements
//! are skipped entirely.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{sh, SegmentationAttributes, Splat, SplatScene};
use crate::math::{Quat, Vec3};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PropType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PropType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, r: &mut impl Read) -> std::io::Result<f64> {
        Ok(match self {
            Self::I8 => r.read_i8()? as f64,
            Self::U8 => r.read_u8()? as f64,
            Self::I16 => r.read_i16::<LittleEndian>()? as f64,
            Self::U16 => r.read_u16::<LittleEndian>()? as f64,
            Self::I32 => r.read_i32::<LittleEndian>()? as f64,
            Self::U32 => r.read_u32::<LittleEndian>()? as f64,
            Self::F32 => r.read_f32::<LittleEndian>()? as f64,
            Self::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, PropType)>,
}

impl Element {
    fn stride(&self) -> usize {
        self.props.iter().map(|(_, t)| t.size()).sum()
    }
}

const KNOWN_IGNORED: [&str; 3] = ["nx", "ny", "nz"];

pub fn load_ply<T: Scalar>(path: impl AsRef<Path>) -> Result<SplatScene<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(BufReader::new(file), path)
}

/// Parses a PLY stream; `origin` names the source in error messages.
pub fn read_ply<T: Scalar>(mut r: impl BufRead, origin: &Path) -> Result<SplatScene<T>> {
    let perr = |m: String| Error::parse(origin, m);
    let mut line = String::new();
    let mut next_line = |r: &mut dyn BufRead| -> Result<String> {
        line.clear();
        let n = r.read_line(&mut line).map_err(|e| Error::io(origin, e))?;
        if n == 0 {
            return Err(Error::parse(origin, "malformed header: unexpected end of file"));
        }
        Ok(line.trim_end().to_string())
    };

    if next_line(&mut r)? != "ply" {
        return Err(perr("malformed header: missing 'ply' magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_ok = false;
    loop {
        let l = next_line(&mut r)?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", other, _] => return Err(perr(format!("malformed header: unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| perr(format!("malformed header: bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", ..] => {
                return Err(perr("malformed header: list properties are not supported".into()));
            }
            ["property", ty, name] => {
                let ty = PropType::parse(ty).ok_or_else(|| perr(format!("malformed header: unknown type '{ty}'")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr("malformed header: property before element".into()))?;
                el.props.push((name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => return Err(perr(format!("malformed header line: '{l}'"))),
        }
    }
    if !format_ok {
        return Err(perr("malformed header: missing format line".into()));
    }

    // skip elements preceding the vertex block
    let vpos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| perr("malformed header: no vertex element".into()))?;
    for el in &elements[..vpos] {
        let n = (el.count * el.stride()) as u64;
        let skipped = std::io::copy(&mut (&mut r).take(n), &mut std::io::sink()).map_err(|e| Error::io(origin, e))?;
        if skipped != n {
            return Err(perr(format!("truncated payload in element '{}'", el.name)));
        }
    }
    let vertex = &elements[vpos];
    let index: HashMap<&str, usize> = vertex.props.iter().enumerate().map(|(i, (n, _))| (n.as_str(), i)).collect();

    let need = |name: &str| -> Result<usize> {
        index.get(name).copied().ok_or_else(|| perr(format!("missing property: {name}")))
    };
    let pos = [need("x")?, need("y")?, need("z")?];
    let dc = [need("f_dc_0")?, need("f_dc_1")?, need("f_dc_2")?];
    let opacity = need("opacity")?;
    let scale = [need("scale_0")?, need("scale_1")?, need("scale_2")?];
    let rot = [need("rot_0")?, need("rot_1")?, need("rot_2")?, need("rot_3")?];
    let mut rest = Vec::new();
    while let Some(&i) = index.get(format!("f_rest_{}", rest.len()).as_str()) {
        rest.push(i);
    }
    let degree = sh::degree_for_count(rest.len() / 3 + 1)
        .filter(|_| rest.len() % 3 == 0)
        .ok_or_else(|| perr(format!("unsupported number of f_rest properties: {}", rest.len())))?;
    let per_channel = sh::coeff_count(degree) - 1;
    let score = index.get("seg_score").copied();
    let dual = index.get("seg_dual_score").copied();

    let mut used = vec![false; vertex.props.len()];
    for &i in pos.iter().chain(&dc).chain(&scale).chain(&rot).chain(&rest).chain([&opacity]) {
        used[i] = true;
    }
    for i in score.iter().chain(dual.iter()) {
        used[*i] = true;
    }
    for (i, (name, _)) in vertex.props.iter().enumerate() {
        if !used[i] && !KNOWN_IGNORED.contains(&name.as_str()) {
            log::warn!("{}: ignoring unknown vertex property '{name}'", origin.display());
        }
    }

    let t = |v: f64| T::lit(v);
    let mut splats = Vec::with_capacity(vertex.count);
    let mut scores = Vec::new();
    let mut duals = Vec::new();
    let mut row = vec![0.0f64; vertex.props.len()];
    for v in 0..vertex.count {
        for (slot, (name, ty)) in row.iter_mut().zip(&vertex.props) {
            *slot = ty
                .read(&mut r)
                .map_err(|_| perr(format!("truncated payload at vertex {v}, property {name}")))?;
        }
        let mut coeffs = vec![[T::zero(); 3]; per_channel + 1];
        coeffs[0] = [t(row[dc[0]]), t(row[dc[1]]), t(row[dc[2]])];
        for ch in 0..3 {
            for k in 0..per_channel {
                coeffs[k + 1][ch] = t(row[rest[ch * per_channel + k]]);
            }
        }
        let mut splat = Splat {
            mean: Vec3::new(t(row[pos[0]]), t(row[pos[1]]), t(row[pos[2]])),
            rotation: Quat::new(t(row[rot[0]]), t(row[rot[1]]), t(row[rot[2]]), t(row[rot[3]])),
            log_scale: Vec3::new(t(row[scale[0]]), t(row[scale[1]]), t(row[scale[2]])),
            opacity_logit: t(row[opacity]),
            sh: coeffs,
        };
        if splat.rotation.norm() == T::zero() {
            return Err(perr(format!("vertex {v}: zero rotation quaternion")));
        }
        splat.renormalize();
        splats.push(splat);
        if let Some(i) = score {
            scores.push(t(row[i]));
        }
        if let Some(i) = dual {
            duals.push(t(row[i]));
        }
    }
    let seg = score.map(|_| SegmentationAttributes {
        score: scores,
        dual_score: dual.map(|_| duals),
    });
    Ok(SplatScene {
        splats,
        sh_degree: degree,
        seg,
    })
}

pub fn save_ply<T: Scalar>(scene: &SplatScene<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply(scene, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ply<T: Scalar>(scene: &SplatScene<T>, w: &mut impl Write) -> std::io::Result<()> {
    let per_channel = sh::coeff_count(scene.sh_degree) - 1;
    let dual = scene.seg.as_ref().and_then(|s| s.dual_score.as_ref());
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!("element vertex {}\n", scene.len());
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..3 * per_channel).map(|i| format!("f_rest_{i}")));
    names.extend(["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"].map(String::from));
    if scene.seg.is_some() {
        names.push("seg_score".into());
    }
    if dual.is_some() {
        names.push("seg_dual_score".into());
    }
    for n in &names {
        header += &format!("property float {n}\n");
    }
    header += "end_header\n";
    w.write_all(header.as_bytes())?;

    let f = |v: T| v.to_f64_lossy() as f32;
    for (i, s) in scene.splats.iter().enumerate() {
        let mut vals: Vec<f32> = vec![f(s.mean.x), f(s.mean.y), f(s.mean.z), 0.0, 0.0, 0.0];
        vals.extend(s.sh[0].map(f));
        for ch in 0..3 {
            for k in 0..per_channel {
                vals.push(f(s.sh[k + 1][ch]));
            }
        }
        vals.push(f(s.opacity_logit));
        vals.extend(s.log_scale.to_array().map(f));
        vals.extend(s.rotation.to_array().map(f));
        if let Some(seg) = &scene.seg {
            vals.push(f(seg.score[i]));
        }
        if let Some(d) = dual {
            vals.push(f(d[i]));
        }
        for v in vals {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}
