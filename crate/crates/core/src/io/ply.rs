//! PLY point clouds.
//!
//! Written files carry one `vertex` element with `float x, y, z`, then
//! `uchar red, green, blue` when any point has a color and `uchar label`
//! when any point has a label. Binary little-endian is the default; ASCII is
//! available. The reader accepts either encoding (and big-endian binary)
//! with any scalar property types, picking out the properties above by name.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::reconstruct::{CloudPoint, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyEncoding {
    #[default]
    BinaryLittleEndian,
    Ascii,
}

pub fn encode(cloud: &PointCloud, encoding: PlyEncoding) -> Vec<u8> {
    let colors = cloud.has_colors();
    let labels = cloud.has_labels();
    let format = match encoding {
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
        PlyEncoding::Ascii => "ascii",
    };
    let mut out = Vec::new();
    let _ = write!(out, "ply\nformat {format} 1.0\nelement vertex {}\n", cloud.len());
    out.extend_from_slice(b"property float x\nproperty float y\nproperty float z\n");
    if colors {
        out.extend_from_slice(b"property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if labels {
        out.extend_from_slice(b"property uchar label\n");
    }
    out.extend_from_slice(b"end_header\n");
    for p in &cloud.points {
        let xyz = [p.xyz.x as f32, p.xyz.y as f32, p.xyz.z as f32];
        let rgb = p.rgb.unwrap_or([0; 3]);
        let label = p.label.unwrap_or(0);
        match encoding {
            PlyEncoding::BinaryLittleEndian => {
                for x in xyz {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                if colors {
                    out.extend_from_slice(&rgb);
                }
                if labels {
                    out.push(label);
                }
            }
            PlyEncoding::Ascii => {
                let _ = write!(out, "{} {} {}", xyz[0], xyz[1], xyz[2]);
                if colors {
                    let _ = write!(out, " {} {} {}", rgb[0], rgb[1], rgb[2]);
                }
                if labels {
                    let _ = write!(out, " {label}");
                }
                out.push(b'\n');
            }
        }
    }
    out
}

pub fn write(path: &Path, cloud: &PointCloud, encoding: PlyEncoding) -> Result<()> {
    std::fs::write(path, encode(cloud, encoding)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn read(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                (if little { <$t>::from_le_bytes(a) } else { <$t>::from_be_bytes(a) }) as f64
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => num!(i16, 2),
            Self::U16 => num!(u16, 2),
            Self::I32 => num!(i32, 4),
            Self::U32 => num!(u32, 4),
            Self::F32 => num!(f32, 4),
            Self::F64 => num!(f64, 8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Encoding {
    Ascii,
    Binary { little: bool },
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let err = |offset: usize, msg: String| Error::format(path, offset as u64, msg);
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Option<(usize, String)> {
        if *pos >= bytes.len() {
            return None;
        }
        let start = *pos;
        let end = bytes[start..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| start + i);
        *pos = (end + 1).min(bytes.len());
        let line = String::from_utf8_lossy(&bytes[start..end]).trim_end_matches('\r').to_string();
        Some((start, line))
    };
    match next_line(&mut pos) {
        Some((_, l)) if l == "ply" => {}
        _ => return Err(err(0, "missing 'ply' magic".into())),
    }
    let mut encoding = None;
    let mut n_vertices = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    let mut body_start = None;
    while let Some((at, line)) = next_line(&mut pos) {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => {
                body_start = Some(pos);
                break;
            }
            ["format", f, _] => {
                encoding = Some(match *f {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Binary { little: true },
                    "binary_big_endian" => Encoding::Binary { little: false },
                    other => return Err(err(at, format!("unknown format {other:?}"))),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                if n_vertices.is_some() {
                    return Err(err(at, "only a single vertex element is supported".into()));
                }
                if *name != "vertex" {
                    return Err(err(at, format!("unsupported element {name:?}")));
                }
                n_vertices = Some(count.parse::<usize>().map_err(|_| err(at, format!("bad count {count:?}")))?);
                in_vertex = true;
            }
            ["property", "list", ..] => return Err(err(at, "list properties are not supported".into())),
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| err(at, format!("unknown type {ty:?}")))?;
                props.push((name.to_string(), s));
            }
            _ => return Err(err(at, format!("unexpected header line {line:?}"))),
        }
    }
    let body_start = body_start.ok_or_else(|| err(bytes.len(), "missing end_header".into()))?;
    let encoding = encoding.ok_or_else(|| err(0, "missing format line".into()))?;
    let n = n_vertices.ok_or_else(|| err(0, "missing vertex element".into()))?;
    let find = |name: &str| props.iter().position(|(p, _)| p == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(err(0, "vertex element lacks x, y, z".into())),
    };
    let color = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let label = find("label");

    let mut values = vec![0.0; props.len()];
    let mut points = Vec::with_capacity(n);
    let body = &bytes[body_start..];
    let stride: usize = props.iter().map(|(_, s)| s.size()).sum();
    let ascii_text = match encoding {
        Encoding::Ascii => String::from_utf8_lossy(body).into_owned(),
        Encoding::Binary { .. } => String::new(),
    };
    let mut ascii_tokens = ascii_text.split_ascii_whitespace();
    for v in 0..n {
        match encoding {
            Encoding::Binary { little } => {
                let start = v * stride;
                if body.len() < start + stride {
                    return Err(err(
                        body_start + body.len(),
                        format!("truncated: vertex {v} of {n} needs {stride} bytes"),
                    ));
                }
                let mut off = start;
                for (k, (_, s)) in props.iter().enumerate() {
                    values[k] = s.read(&body[off..], little);
                    off += s.size();
                }
            }
            Encoding::Ascii => {
                for (value, (_, s)) in values.iter_mut().zip(&props) {
                    let tok = ascii_tokens
                        .next()
                        .ok_or_else(|| err(bytes.len(), format!("truncated: vertex {v} of {n} is incomplete")))?;
                    let bad = || err(body_start, format!("bad number {tok:?} in vertex {v}"));
                    // Parse at the declared width so ASCII and binary agree.
                    *value = if *s == Scalar::F32 {
                        tok.parse::<f32>().map_err(|_| bad())? as f64
                    } else {
                        tok.parse::<f64>().map_err(|_| bad())?
                    };
                }
            }
        }
        let xyz = Vector3::new(values[ix], values[iy], values[iz]);
        if !xyz.iter().all(|c| c.is_finite()) {
            return Err(err(body_start, format!("vertex {v} has non-finite coordinates")));
        }
        points.push(CloudPoint {
            xyz,
            rgb: color.map(|c| c.map(|i| values[i].clamp(0.0, 255.0) as u8)),
            label: label.map(|i| values[i].clamp(0.0, 255.0) as u8),
        });
    }
    if let Encoding::Binary { .. } = encoding {
        if body.len() > n * stride {
            return Err(err(body_start + n * stride, format!("{} trailing bytes", body.len() - n * stride)));
        }
    }
    Ok(PointCloud { points })
}

pub fn read(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
