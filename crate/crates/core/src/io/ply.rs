//! Minimal PLY reader/writer covering ASCII and binary encodings.
//!
//! Only scalar properties are kept; list properties (such as mesh faces) are
//! parsed and discarded.

use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::math::logit;
use crate::scene::{BackgroundGaussians, RenderableScene};

/// Zeroth-order spherical-harmonic constant used by 3DGS color storage.
pub const SH_C0: f64 = 0.28209479177387814;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty) => {{
                let a = b.try_into().expect("sized");
                (if little { <$t>::from_le_bytes(a) } else { <$t>::from_be_bytes(a) }) as f64
            }};
        }
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => num!(i16),
            ScalarType::U16 => num!(u16),
            ScalarType::I32 => num!(i32),
            ScalarType::U32 => num!(u32),
            ScalarType::F32 => num!(f32),
            ScalarType::F64 => num!(f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Property {
    Scalar(String, ScalarType),
    List(String, ScalarType, ScalarType),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub name: String,
    /// Names of the scalar properties, in file order.
    pub properties: Vec<String>,
    /// One row of scalar values per element instance.
    pub rows: Vec<Vec<f64>>,
    layout: Vec<Property>,
    count: usize,
}

impl Element {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p == name)
    }

    pub fn has(&self, name: &str) -> bool {
        self.column(name).is_some()
    }

    fn scalar_type(&self, name: &str) -> Option<ScalarType> {
        self.layout.iter().find_map(|p| match p {
            Property::Scalar(n, t) if n == name => Some(*t),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlyData {
    pub encoding: Encoding,
    pub elements: Vec<Element>,
}

impl PlyData {
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }
}

fn bad(detail: impl Into<String>) -> Error {
    Error::format("ply", detail)
}

pub fn parse(bytes: &[u8]) -> Result<PlyData> {
    let end = find_header_end(bytes).ok_or_else(|| bad("missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..end.0]).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = header.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(bad("missing `ply` magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, _] => {
                encoding = Some(match *fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLittleEndian,
                    "binary_big_endian" => Encoding::BinaryBigEndian,
                    other => return Err(bad(format!("unknown format `{other}`"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                properties: Vec::new(),
                rows: Vec::new(),
                layout: Vec::new(),
                count: count.parse().map_err(|_| bad(format!("bad element count `{count}`")))?,
            }),
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let ct = ScalarType::parse(ct).ok_or_else(|| bad(format!("bad type `{ct}`")))?;
                let it = ScalarType::parse(it).ok_or_else(|| bad(format!("bad type `{it}`")))?;
                el.layout.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let ty = ScalarType::parse(ty).ok_or_else(|| bad(format!("bad type `{ty}`")))?;
                el.layout.push(Property::Scalar(name.to_string(), ty));
                el.properties.push(name.to_string());
            }
            ["comment", ..] | ["obj_info", ..] | ["end_header"] | [] => {}
            _ => return Err(bad(format!("unrecognized header line `{line}`"))),
        }
    }
    let encoding = encoding.ok_or_else(|| bad("missing format line"))?;
    let body = &bytes[end.1..];
    match encoding {
        Encoding::Ascii => read_ascii(body, &mut elements)?,
        Encoding::BinaryLittleEndian => read_binary(body, &mut elements, true)?,
        Encoding::BinaryBigEndian => read_binary(body, &mut elements, false)?,
    }
    Ok(PlyData { encoding, elements })
}

/// Byte offsets of the end of the header text and the start of the body.
fn find_header_end(bytes: &[u8]) -> Option<(usize, usize)> {
    let pat = b"end_header";
    let pos = bytes.windows(pat.len()).position(|w| w == pat)?;
    let mut body = pos + pat.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) == Some(&b'\n') {
        body += 1;
    }
    Some((pos, body))
}

fn read_ascii(body: &[u8], elements: &mut [Element]) -> Result<()> {
    let text = std::str::from_utf8(body).map_err(|_| bad("ASCII body is not UTF-8"))?;
    let mut toks = text.split_whitespace();
    let mut next = || -> Result<f64> {
        toks.next()
            .ok_or_else(|| bad("unexpected end of data"))?
            .parse::<f64>()
            .map_err(|_| bad("bad number"))
    };
    for el in elements.iter_mut() {
        for _ in 0..el.count {
            let mut row = Vec::with_capacity(el.properties.len());
            for p in &el.layout {
                match p {
                    Property::Scalar(..) => row.push(next()?),
                    Property::List(..) => {
                        let n = next()? as usize;
                        for _ in 0..n {
                            next()?;
                        }
                    }
                }
            }
            el.rows.push(row);
        }
    }
    Ok(())
}

fn read_binary(body: &[u8], elements: &mut [Element], little: bool) -> Result<()> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = body.get(pos..pos + n).ok_or_else(|| bad("truncated binary body"))?;
        pos += n;
        Ok(s)
    };
    for el in elements.iter_mut() {
        for _ in 0..el.count {
            let mut row = Vec::with_capacity(el.properties.len());
            for p in &el.layout {
                match p {
                    Property::Scalar(_, t) => row.push(t.decode(take(t.size())?, little)),
                    Property::List(_, ct, it) => {
                        let n = ct.decode(take(ct.size())?, little) as usize;
                        take(n * it.size())?;
                    }
                }
            }
            el.rows.push(row);
        }
    }
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<PlyData> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes)
}

/// Positions and optional RGB (in [0,1]) from the `vertex` element.
pub fn point_cloud(data: &PlyData) -> Result<(Vec<Vector3<f64>>, Option<Vec<[f64; 3]>>)> {
    let v = data.element("vertex").ok_or_else(|| bad("no vertex element"))?;
    let (x, y, z) = match (v.column("x"), v.column("y"), v.column("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(bad("vertex element lacks x/y/z")),
    };
    let points = v.rows.iter().map(|r| Vector3::new(r[x], r[y], r[z])).collect();
    let colors = match (v.column("red"), v.column("green"), v.column("blue")) {
        (Some(r), Some(g), Some(b)) => {
            let div = match v.scalar_type("red") {
                Some(ScalarType::F32 | ScalarType::F64) => 1.0,
                Some(ScalarType::U16) => 65535.0,
                _ => 255.0,
            };
            Some(v.rows.iter().map(|row| [row[r] / div, row[g] / div, row[b] / div]).collect())
        }
        _ => None,
    };
    Ok((points, colors))
}

pub fn write_point_cloud(path: impl AsRef<Path>, points: &[Vector3<f64>], colors: Option<&[[f64; 3]]>, encoding: Encoding) -> Result<()> {
    let mut header = format!(
        "ply\nformat {} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        match encoding {
            Encoding::Ascii => "ascii",
            Encoding::BinaryLittleEndian => "binary_little_endian",
            Encoding::BinaryBigEndian => "binary_big_endian",
        },
        points.len()
    );
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    let to_u8 = |c: f64| (c.clamp(0.0, 1.0) * 255.0).round() as u8;
    for (i, p) in points.iter().enumerate() {
        let rgb = colors.map(|c| c[i].map(to_u8));
        match encoding {
            Encoding::Ascii => {
                let mut line = format!("{} {} {}", p.x as f32, p.y as f32, p.z as f32);
                if let Some(c) = rgb {
                    line.push_str(&format!(" {} {} {}", c[0], c[1], c[2]));
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
            Encoding::BinaryLittleEndian | Encoding::BinaryBigEndian => {
                for c in p.iter() {
                    let f = *c as f32;
                    out.extend_from_slice(&if encoding == Encoding::BinaryLittleEndian { f.to_le_bytes() } else { f.to_be_bytes() });
                }
                if let Some(c) = rgb {
                    out.extend_from_slice(&c);
                }
            }
        }
    }
    let path = path.as_ref();
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

const GAUSSIAN_PROPS: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1",
    "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
];

fn gaussian_rows_to_bytes(rows: &[[f32; 17]]) -> Vec<u8> {
    let mut out = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", rows.len());
    for p in GAUSSIAN_PROPS {
        out.push_str(&format!("property float {p}\n"));
    }
    out.push_str("end_header\n");
    let mut bytes = out.into_bytes();
    for row in rows {
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

fn gaussian_row(p: &Vector3<f64>, color: &Vector3<f64>, opacity_logit: f64, log_scale: &Vector3<f64>, q: &[f64; 4]) -> [f32; 17] {
    let dc = color.map(|c| (c - 0.5) / SH_C0);
    [
        p.x, p.y, p.z, 0.0, 0.0, 0.0, dc.x, dc.y, dc.z, opacity_logit, log_scale.x, log_scale.y,
        log_scale.z, q[0], q[1], q[2], q[3],
    ]
    .map(|v| v as f32)
}

/// Background Gaussians as a 3DGS-compatible binary PLY (colors as SH DC terms).
pub fn background_to_bytes(bg: &BackgroundGaussians) -> Vec<u8> {
    let colors = bg.colors();
    let rows: Vec<[f32; 17]> = (0..bg.len())
        .map(|i| gaussian_row(&bg.positions[i], &colors[i], bg.opacity_logits[i], &bg.log_scales[i], &bg.rotations[i]))
        .collect();
    gaussian_rows_to_bytes(&rows)
}

pub fn write_background(path: impl AsRef<Path>, bg: &BackgroundGaussians) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, background_to_bytes(bg)).map_err(|e| Error::io(path, e))
}

/// Reads a 3DGS-style Gaussian PLY. A plain point cloud (x/y/z with optional
/// RGB) is accepted too and initialized with small isotropic Gaussians.
pub fn background_from_ply(data: &PlyData) -> Result<BackgroundGaussians> {
    let v = data.element("vertex").ok_or_else(|| bad("no vertex element"))?;
    let mut bg = BackgroundGaussians::default();
    if GAUSSIAN_PROPS.iter().filter(|p| !p.starts_with('n')).all(|p| v.has(p)) {
        let col: Vec<usize> = GAUSSIAN_PROPS.iter().map(|p| v.column(p).unwrap_or(usize::MAX)).collect();
        for r in &v.rows {
            let g = |k: usize| r[col[k]];
            bg.positions.push(Vector3::new(g(0), g(1), g(2)));
            bg.color_logits.push(Vector3::new(g(6), g(7), g(8)).map(|d| logit(0.5 + SH_C0 * d)));
            bg.opacity_logits.push(g(9));
            bg.log_scales.push(Vector3::new(g(10), g(11), g(12)));
            bg.rotations.push([g(13), g(14), g(15), g(16)]);
        }
        bg.validate()?;
        return Ok(bg);
    }
    let (points, colors) = point_cloud(data)?;
    let scale = initial_point_scale(&points);
    for (i, p) in points.iter().enumerate() {
        let c = colors.as_ref().map_or([0.5; 3], |c| c[i]);
        bg.push(*p, [1.0, 0.0, 0.0, 0.0], Vector3::repeat(scale.ln()), 0.1, Vector3::from(c));
    }
    Ok(bg)
}

/// 1% of the bounding-box diagonal, a coarse stand-in for nearest-neighbour spacing.
fn initial_point_scale(points: &[Vector3<f64>]) -> f64 {
    let Some(first) = points.first() else { return 0.01 };
    let (lo, hi) = points.iter().fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    ((hi - lo).norm() * 0.01).max(1e-4)
}

pub fn read_background(path: impl AsRef<Path>) -> Result<BackgroundGaussians> {
    background_from_ply(&read(path)?)
}

/// Whole renderable scene (background and posed human) as one 3DGS PLY.
/// Covariances are factored back into scale and rotation.
pub fn write_combined(path: impl AsRef<Path>, scene: &RenderableScene) -> Result<()> {
    let rows: Vec<[f32; 17]> = (0..scene.len())
        .map(|i| {
            let (q, s) = factor_covariance(&scene.covariances[i]);
            let o = scene.opacities[i];
            gaussian_row(&scene.positions[i], &scene.colors[i], logit(o), &s, &q)
        })
        .collect();
    let path = path.as_ref();
    std::fs::write(path, gaussian_rows_to_bytes(&rows)).map_err(|e| Error::io(path, e))
}

/// Quaternion `[w, x, y, z]` and log-scales with `R·diag(exp(2s))·Rᵀ = cov`.
pub fn factor_covariance(cov: &Matrix3<f64>) -> ([f64; 4], Vector3<f64>) {
    let eig = SymmetricEigen::new(*cov);
    let mut r = eig.eigenvectors;
    if r.determinant() < 0.0 {
        r.column_mut(2).neg_mut();
    }
    let q = UnitQuaternion::from_matrix(&r);
    let s = eig.eigenvalues.map(|l| 0.5 * l.max(1e-30).ln());
    ([q.w, q.i, q.j, q.k], s)
}

/// Activated color of a stored SH DC triple.
pub fn dc_to_color(dc: &Vector3<f64>) -> Vector3<f64> {
    dc.map(|d| 0.5 + SH_C0 * d)
}
