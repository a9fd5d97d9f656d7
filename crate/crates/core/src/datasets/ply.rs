//! PLY reading (ASCII and binary little-endian) and writing.
//!
//! Only the `vertex` element is interpreted: `x`, `y`, `z` and an optional
//! integer `gt` label (non-zero = anomalous). Other properties and elements
//! are skipped.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::DatasetError;
use crate::geometry::{Point3, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
    body_start: usize,
}

fn err(offset: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        location: format!("byte {offset}"),
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, DatasetError> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<(usize, String), DatasetError> {
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| start + i)
            .ok_or_else(|| err(start, "header ends before end_header"))?;
        *pos = end + 1;
        let line = std::str::from_utf8(&bytes[start..end]).map_err(|_| err(start, "header is not ASCII"))?;
        Ok((start, line.trim_end_matches('\r').trim().to_string()))
    };
    let (off, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(err(off, "missing 'ply' magic line"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (off, line) = next_line(&mut pos)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    "binary_big_endian" => return Err(err(off, "binary_big_endian PLY is not supported")),
                    other => return Err(err(off, format!("unknown format {other:?}"))),
                });
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| err(off, format!("bad element count {count:?}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", ct, it, _name] => {
                let ct = Scalar::parse(ct).ok_or_else(|| err(off, format!("unknown type {ct:?}")))?;
                let it = Scalar::parse(it).ok_or_else(|| err(off, format!("unknown type {it:?}")))?;
                let el = elements.last_mut().ok_or_else(|| err(off, "property before any element"))?;
                el.properties.push(Property::List(ct, it));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| err(off, format!("unknown type {ty:?}")))?;
                let el = elements.last_mut().ok_or_else(|| err(off, "property before any element"))?;
                el.properties.push(Property::Scalar(name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => return Err(err(off, format!("unrecognized header line {line:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| err(0, "header has no format line"))?;
    Ok(Header {
        encoding,
        elements,
        body_start: pos,
    })
}

struct VertexLayout {
    xyz: [usize; 3],
    gt: Option<usize>,
}

fn vertex_layout(el: &Element, offset: usize) -> Result<VertexLayout, DatasetError> {
    let find = |want: &str| {
        el.properties.iter().position(|p| matches!(p, Property::Scalar(n, _) if n == want))
    };
    let axis = |a: &str| find(a).ok_or_else(|| err(offset, format!("vertex element lacks scalar property {a:?}")));
    Ok(VertexLayout {
        xyz: [axis("x")?, axis("y")?, axis("z")?],
        gt: find("gt"),
    })
}

/// Parses a PLY file held in memory.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud, DatasetError> {
    let header = parse_header(bytes)?;
    let vi = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| err(0, "no vertex element"))?;
    let layout = vertex_layout(&header.elements[vi], 0)?;
    let mut points = Vec::new();
    let mut labels = layout.gt.map(|_| Vec::new());
    let mut row = Vec::new();
    match header.encoding {
        PlyEncoding::Ascii => {
            let mut tokens = AsciiTokens::new(bytes, header.body_start);
            for (ei, el) in header.elements.iter().enumerate().take(vi + 1) {
                for _ in 0..el.count {
                    row.clear();
                    for p in &el.properties {
                        match p {
                            Property::Scalar(..) => row.push(tokens.number()?),
                            Property::List(..) => {
                                let (off, n) = (tokens.offset(), tokens.number()?);
                                if n < 0.0 || n.fract() != 0.0 {
                                    return Err(err(off, format!("bad list length {n}")));
                                }
                                for _ in 0..n as usize {
                                    tokens.number()?;
                                }
                                row.push(n);
                            }
                        }
                    }
                    if ei == vi {
                        push_vertex(&row, &layout, &mut points, labels.as_mut());
                    }
                }
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            let mut cur = header.body_start;
            let take = |cur: &mut usize, n: usize| -> Result<&[u8], DatasetError> {
                if *cur + n > bytes.len() {
                    return Err(err(*cur, format!("payload truncated, needed {n} more bytes")));
                }
                let s = &bytes[*cur..*cur + n];
                *cur += n;
                Ok(s)
            };
            for (ei, el) in header.elements.iter().enumerate().take(vi + 1) {
                for _ in 0..el.count {
                    row.clear();
                    for p in &el.properties {
                        match p {
                            Property::Scalar(_, t) => row.push(t.decode(take(&mut cur, t.size())?)),
                            Property::List(ct, it) => {
                                let n = ct.decode(take(&mut cur, ct.size())?);
                                if n < 0.0 {
                                    return Err(err(cur, format!("negative list length {n}")));
                                }
                                take(&mut cur, n as usize * it.size())?;
                                row.push(n);
                            }
                        }
                    }
                    if ei == vi {
                        push_vertex(&row, &layout, &mut points, labels.as_mut());
                    }
                }
            }
        }
    }
    if points.is_empty() {
        return Err(err(header.body_start, "vertex element is empty"));
    }
    PointCloud::with_labels(points, labels).map_err(|e| err(header.body_start, e.to_string()))
}

fn push_vertex(row: &[f64], layout: &VertexLayout, points: &mut Vec<Point3>, labels: Option<&mut Vec<bool>>) {
    points.push(Point3::new(row[layout.xyz[0]], row[layout.xyz[1]], row[layout.xyz[2]]));
    if let (Some(l), Some(i)) = (labels, layout.gt) {
        l.push(row[i] != 0.0);
    }
}

struct AsciiTokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> AsciiTokens<'a> {
    fn new(bytes: &'a [u8], pos: usize) -> Self {
        Self { bytes, pos }
    }

    fn offset(&mut self) -> usize {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.pos
    }

    fn number(&mut self) -> Result<f64, DatasetError> {
        let start = self.offset();
        if start >= self.bytes.len() {
            return Err(err(start, "payload truncated"));
        }
        let mut end = start;
        while end < self.bytes.len() && !self.bytes[end].is_ascii_whitespace() {
            end += 1;
        }
        self.pos = end;
        let text = std::str::from_utf8(&self.bytes[start..end]).map_err(|_| err(start, "non-ASCII value"))?;
        text.parse().map_err(|_| err(start, format!("not a number: {text:?}")))
    }
}

pub fn load_ply(path: &Path) -> Result<PointCloud, DatasetError> {
    let bytes = std::fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    parse_ply(&bytes).map_err(|e| e.in_file(path))
}

/// Serializes `cloud` with double-precision coordinates, a `gt` property
/// when the cloud is labeled, and optional per-vertex colors.
pub fn write_ply(mut w: impl Write, cloud: &PointCloud, colors: Option<&[[u8; 3]]>, encoding: PlyEncoding) -> std::io::Result<()> {
    if let Some(c) = colors {
        assert_eq!(c.len(), cloud.len(), "one color per vertex");
    }
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {format} 1.0\nelement vertex {}", cloud.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    if colors.is_some() {
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    if cloud.labels().is_some() {
        writeln!(w, "property uchar gt")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points().iter().enumerate() {
        let color = colors.map(|c| c[i]);
        let label = cloud.labels().map(|l| l[i] as u8);
        match encoding {
            PlyEncoding::Ascii => {
                write!(w, "{} {} {}", p.x, p.y, p.z)?;
                if let Some([r, g, b]) = color {
                    write!(w, " {r} {g} {b}")?;
                }
                if let Some(l) = label {
                    write!(w, " {l}")?;
                }
                writeln!(w)?;
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in [p.x, p.y, p.z] {
                    w.write_all(&v.to_le_bytes())?;
                }
                if let Some(c) = color {
                    w.write_all(&c)?;
                }
                if let Some(l) = label {
                    w.write_all(&[l])?;
                }
            }
        }
    }
    w.flush()
}

pub fn save_ply(path: &Path, cloud: &PointCloud, colors: Option<&[[u8; 3]]>, encoding: PlyEncoding) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    write_ply(BufWriter::new(file), cloud, colors, encoding).map_err(|e| DatasetError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, labeled: bool, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| Point3::new(rng.random::<f64>() * 10.0 - 5.0, rng.random(), -rng.random::<f64>() * 1e-7))
            .collect();
        let labels = labeled.then(|| (0..n).map(|_| rng.random_bool(0.1)).collect());
        PointCloud::with_labels(pts, labels).unwrap()
    }

    fn encode(cloud: &PointCloud, enc: PlyEncoding) -> Vec<u8> {
        let mut buf = Vec::new();
        write_ply(&mut buf, cloud, None, enc).unwrap();
        buf
    }

    fn offset_of(e: DatasetError) -> String {
        match e {
            DatasetError::Parse { location, .. } => location,
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn single_vertex_ascii() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0.5 -2 3\n";
        let c = parse_ply(text).unwrap();
        assert_eq!(c.points(), &[Point3::new(0.5, -2.0, 3.0)]);
        assert!(c.labels().is_none());
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        let cloud = random_cloud(1000, true, 1);
        assert_eq!(parse_ply(&encode(&cloud, PlyEncoding::BinaryLittleEndian)).unwrap(), cloud);
    }

    #[test]
    fn ascii_and_binary_agree() {
        let cloud = random_cloud(300, true, 2);
        let a = parse_ply(&encode(&cloud, PlyEncoding::Ascii)).unwrap();
        let b = parse_ply(&encode(&cloud, PlyEncoding::BinaryLittleEndian)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, cloud);
    }

    #[test]
    fn skips_foreign_properties_and_elements() {
        let mut body = b"ply\nformat binary_little_endian 1.0\ncomment made by hand\nelement camera 1\nproperty list uchar int ids\nelement vertex 2\nproperty float x\nproperty uchar red\nproperty float y\nproperty float z\nproperty int gt\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        body.push(2);
        body.extend(7i32.to_le_bytes());
        body.extend(8i32.to_le_bytes());
        for (x, y, z, gt) in [(1.0f32, 2.0f32, 3.0f32, 0i32), (4.0, 5.0, 6.0, 1)] {
            body.extend(x.to_le_bytes());
            body.push(200);
            body.extend(y.to_le_bytes());
            body.extend(z.to_le_bytes());
            body.extend(gt.to_le_bytes());
        }
        let c = parse_ply(&body).unwrap();
        assert_eq!(c.points()[1], Point3::new(4.0, 5.0, 6.0));
        assert_eq!(c.labels(), Some(&[false, true][..]));
    }

    #[test]
    fn errors_report_byte_offsets() {
        let big = b"ply\nformat binary_big_endian 1.0\nelement vertex 1\nend_header\n";
        assert_eq!(offset_of(parse_ply(big).unwrap_err()), "byte 4");
        let cloud = random_cloud(10, false, 3);
        let bytes = encode(&cloud, PlyEncoding::BinaryLittleEndian);
        let header_len = bytes.len() - 10 * 24;
        let cut = &bytes[..bytes.len() - 5];
        assert_eq!(offset_of(parse_ply(cut).unwrap_err()), format!("byte {}", header_len + 9 * 24 + 16));
        let bad = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 zz 3\n";
        assert_eq!(offset_of(parse_ply(bad).unwrap_err()), format!("byte {}", bad.len() - 5));
        assert!(parse_ply(b"ply\nformat ascii 1.0\n").is_err());
        let no_z = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n";
        assert!(parse_ply(no_z).is_err());
    }

    #[test]
    fn colors_are_written_and_ignored_on_read() {
        let cloud = random_cloud(5, false, 4);
        let colors = vec![[255u8, 0, 0]; 5];
        let mut buf = Vec::new();
        write_ply(&mut buf, &cloud, Some(&colors), PlyEncoding::Ascii).unwrap();
        assert!(String::from_utf8_lossy(&buf).contains("property uchar red"));
        assert_eq!(parse_ply(&buf).unwrap(), cloud);
    }
}
