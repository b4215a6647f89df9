//! UV position texture: every texel whose center falls inside a UV triangle
//! stores the barycentrically interpolated rest-pose surface point and skinning
//! weights. Valid texels become the dense human point set.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::body::{SkinWeights, SkinnedMesh};
use crate::error::{Error, Result};

/// Barycentric coordinates down to this negative value still count as inside.
const INSIDE_EPS: f64 = 1e-12;
/// UV triangles with smaller doubled area are skipped.
const MIN_UV_AREA: f64 = 1e-14;

pub const PTEX_MAGIC: [u8; 8] = *b"SKPTEX\0\0";
pub const PTEX_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Texel {
    pub triangle: u32,
    pub bary: [f64; 3],
    pub position: Vector3<f64>,
    pub weights: SkinWeights,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositionTexture {
    width: usize,
    height: usize,
    texels: Vec<Option<Texel>>,
}

/// One extracted point with its stable texel key.
#[derive(Clone, Debug, PartialEq)]
pub struct TexturePoint {
    /// Row-major index `v * width + u`.
    pub texel_index: usize,
    pub triangle: u32,
    pub bary: [f64; 3],
    pub position: Vector3<f64>,
    pub weights: SkinWeights,
}

/// Barycentric coordinates of `p` in the UV triangle, or `None` when the
/// triangle is degenerate.
pub fn uv_barycentric(uv: &[[f64; 2]; 3], p: [f64; 2]) -> Option<[f64; 3]> {
    let [a, b, c] = *uv;
    let (e1x, e1y) = (b[0] - a[0], b[1] - a[1]);
    let (e2x, e2y) = (c[0] - a[0], c[1] - a[1]);
    let (px, py) = (p[0] - a[0], p[1] - a[1]);
    let d = e1x * e2y - e1y * e2x;
    if d.abs() < MIN_UV_AREA {
        return None;
    }
    let lb = (px * e2y - py * e2x) / d;
    let lc = (e1x * py - e1y * px) / d;
    Some([1.0 - lb - lc, lb, lc])
}

/// Barycentric interpolation of three points. Shared by baking and reprojection
/// so both produce identical bits.
pub fn interpolate_position(corners: [&Vector3<f64>; 3], bary: &[f64; 3]) -> Vector3<f64> {
    corners[0] * bary[0] + corners[1] * bary[1] + corners[2] * bary[2]
}

/// Union of the corner joint sets, blended and renormalized.
pub fn interpolate_weights(corners: [&SkinWeights; 3], bary: &[f64; 3]) -> SkinWeights {
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for (w, &b) in corners.iter().zip(bary) {
        for &(j, wt) in w.iter() {
            *acc.entry(j).or_default() += wt * b;
        }
    }
    let entries: Vec<(usize, f64)> = acc.into_iter().filter(|&(_, w)| w > 0.0).collect();
    let total: f64 = entries.iter().map(|e| e.1).sum();
    SkinWeights(entries.into_iter().map(|(j, w)| (j, w / total)).collect())
}

impl PositionTexture {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn texel(&self, u: usize, v: usize) -> Option<&Texel> {
        self.texels.get(v * self.width + u).and_then(Option::as_ref)
    }

    pub fn valid_count(&self) -> usize {
        self.texels.iter().filter(|t| t.is_some()).count()
    }

    /// Valid texels in row-major order with their texel index.
    pub fn valid_texels(&self) -> impl Iterator<Item = (usize, &Texel)> {
        self.texels
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.as_ref().map(|t| (i, t)))
    }

    pub fn extract_points(&self) -> Result<Vec<TexturePoint>> {
        let pts: Vec<TexturePoint> = self
            .valid_texels()
            .map(|(i, t)| TexturePoint {
                texel_index: i,
                triangle: t.triangle,
                bary: t.bary,
                position: t.position,
                weights: t.weights.clone(),
            })
            .collect();
        if pts.is_empty() {
            return Err(Error::EmptyTexture);
        }
        Ok(pts)
    }

    /// Approximate world-space edge length of each valid texel, from the ratio of
    /// its source triangle's 3D area to UV area.
    pub fn texel_spacing(&self, mesh: &SkinnedMesh) -> Vec<f64> {
        let texel_area = 1.0 / (self.width * self.height) as f64;
        self.valid_texels()
            .map(|(_, t)| {
                let tri = &mesh.triangles()[t.triangle as usize];
                let v = mesh.vertices();
                let [a, b, c] = tri.indices.map(|i| v[i]);
                let area3 = 0.5 * (b - a).cross(&(c - a)).norm();
                let [ua, ub, uc] = tri.uvs;
                let area_uv = 0.5
                    * ((ub[0] - ua[0]) * (uc[1] - ua[1]) - (ub[1] - ua[1]) * (uc[0] - ua[0])).abs();
                (area3 / area_uv * texel_area).sqrt()
            })
            .collect()
    }

    /// Little-endian binary form; see `docs/formats.md`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 12 + self.valid_count() * 80);
        out.extend_from_slice(&PTEX_MAGIC);
        out.extend_from_slice(&PTEX_VERSION.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.valid_count() as u32).to_le_bytes());
        for (i, t) in self.valid_texels() {
            out.extend_from_slice(&(i as u32).to_le_bytes());
            out.extend_from_slice(&t.triangle.to_le_bytes());
            for b in t.bary {
                out.extend_from_slice(&b.to_le_bytes());
            }
            for c in t.position.iter() {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(&(t.weights.len() as u16).to_le_bytes());
            for &(j, w) in t.weights.iter() {
                out.extend_from_slice(&(j as u16).to_le_bytes());
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = crate::io::ByteReader::new(bytes, "position texture");
        if r.take(8)? != PTEX_MAGIC {
            return Err(Error::format("position texture", "bad magic"));
        }
        let version = r.u32()?;
        if version != PTEX_VERSION {
            return Err(Error::format("position texture", format!("unsupported version {version}")));
        }
        let _flags = r.u32()?;
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut texels = vec![None; width * height];
        for _ in 0..count {
            let idx = r.u32()? as usize;
            if idx >= texels.len() {
                return Err(Error::format("position texture", format!("texel index {idx} out of range")));
            }
            let triangle = r.u32()?;
            let bary = [r.f64()?, r.f64()?, r.f64()?];
            let position = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
            let n = r.u16()? as usize;
            let mut w = Vec::with_capacity(n);
            for _ in 0..n {
                w.push((r.u16()? as usize, r.f64()?));
            }
            texels[idx] = Some(Texel {
                triangle,
                bary,
                position,
                weights: SkinWeights(w),
            });
        }
        r.finish()?;
        Ok(PositionTexture {
            width,
            height,
            texels,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Debug view of the position channel, normalized to the point bounding box.
    /// Invalid texels are black.
    pub fn visualize(&self) -> image::RgbImage {
        let (mut lo, mut hi) = (Vector3::repeat(f64::MAX), Vector3::repeat(f64::MIN));
        for (_, t) in self.valid_texels() {
            lo = lo.inf(&t.position);
            hi = hi.sup(&t.position);
        }
        let span = (hi - lo).map(|s| if s > 0.0 { s } else { 1.0 });
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |u, v| {
            match self.texel(u as usize, v as usize) {
                Some(t) => {
                    let n = (t.position - lo).component_div(&span);
                    image::Rgb([
                        (n.x * 255.0).round() as u8,
                        (n.y * 255.0).round() as u8,
                        (n.z * 255.0).round() as u8,
                    ])
                }
                None => image::Rgb([0, 0, 0]),
            }
        })
    }
}

/// Rasterize the mesh's UV layout at `resolution`×`resolution`.
///
/// A texel is valid when its center lies inside a UV triangle; overlaps resolve
/// to the lowest triangle index.
pub fn bake(mesh: &SkinnedMesh, resolution: usize) -> Result<PositionTexture> {
    bake_rect(mesh, resolution, resolution)
}

pub fn bake_rect(mesh: &SkinnedMesh, width: usize, height: usize) -> Result<PositionTexture> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("texture resolution must be at least 1"));
    }
    // Row buckets of candidate triangles, kept in ascending index order.
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); height];
    let mut spans = Vec::with_capacity(mesh.triangles().len());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let vs = tri.uvs.map(|uv| uv[1] * height as f64 - 0.5);
        let us = tri.uvs.map(|uv| uv[0] * width as f64 - 0.5);
        let vmin = vs.iter().cloned().fold(f64::MAX, f64::min).ceil().max(0.0) as usize;
        let vmax = vs.iter().cloned().fold(f64::MIN, f64::max).floor();
        let umin = us.iter().cloned().fold(f64::MAX, f64::min).ceil().max(0.0) as usize;
        let umax = us.iter().cloned().fold(f64::MIN, f64::max).floor();
        spans.push((umin, umax));
        if vmax < 0.0 {
            continue;
        }
        let vmax = (vmax as usize).min(height - 1);
        for row in rows.iter_mut().take(vmax + 1).skip(vmin) {
            row.push(t as u32);
        }
    }
    let verts = mesh.vertices();
    let weights = mesh.weights();
    let texels: Vec<Option<Texel>> = rows
        .par_iter()
        .enumerate()
        .flat_map_iter(|(v, cands)| {
            let mut row: Vec<Option<Texel>> = vec![None; width];
            let cv = (v as f64 + 0.5) / height as f64;
            for &t in cands {
                let tri = &mesh.triangles()[t as usize];
                let (umin, umax) = spans[t as usize];
                if umax < 0.0 {
                    continue;
                }
                let umax = (umax as usize).min(width - 1);
                for (u, slot) in row.iter_mut().enumerate().take(umax + 1).skip(umin) {
                    if slot.is_some() {
                        continue;
                    }
                    let cu = (u as f64 + 0.5) / width as f64;
                    let Some(l) = uv_barycentric(&tri.uvs, [cu, cv]) else { break };
                    if l.iter().any(|&x| x < -INSIDE_EPS) {
                        continue;
                    }
                    let clamped = l.map(|x| x.max(0.0));
                    let s: f64 = clamped.iter().sum();
                    let bary = clamped.map(|x| x / s);
                    let [a, b, c] = tri.indices;
                    *slot = Some(Texel {
                        triangle: t,
                        bary,
                        position: interpolate_position([&verts[a], &verts[b], &verts[c]], &bary),
                        weights: interpolate_weights([&weights[a], &weights[b], &weights[c]], &bary),
                    });
                }
            }
            row
        })
        .collect();
    let tex = PositionTexture {
        width,
        height,
        texels,
    };
    if tex.valid_count() == 0 {
        return Err(Error::EmptyTexture);
    }
    Ok(tex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{Joint, Triangle};

    fn single_triangle(uvs: [[f64; 2]; 3]) -> SkinnedMesh {
        SkinnedMesh::new(
            vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0), Vector3::new(0.0, 2.0, 1.0)],
            vec![Triangle { indices: [0, 1, 2], uvs }],
            vec![SkinWeights::single(0), SkinWeights::single(1), SkinWeights(vec![(0, 0.5), (1, 0.5)])],
            vec![
                Joint { name: "a".into(), parent: None, position: [0.0; 3] },
                Joint { name: "b".into(), parent: Some(0), position: [1.0, 0.0, 0.0] },
            ],
        )
        .unwrap()
    }

    #[test]
    fn right_triangle_at_resolution_two() {
        // Texel (0,0) center (0.25, 0.25): solving a + λb(b-a) + λc(c-a) = p by hand
        // gives λb = λc = 0.25, λa = 0.5.
        let tex = bake(&single_triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), 2).unwrap();
        let t = tex.texel(0, 0).unwrap();
        assert_eq!(t.bary, [0.5, 0.25, 0.25]);
        assert!(tex.texel(1, 0).is_some() && tex.texel(0, 1).is_some());
        // (0.75, 0.75) lies beyond the hypotenuse.
        assert!(tex.texel(1, 1).is_none());
        assert_eq!(tex.valid_count(), 3);
    }

    #[test]
    fn texel_center_on_vertex_reproduces_vertex() {
        let tex = bake(&single_triangle([[0.25, 0.25], [1.0, 0.25], [0.25, 1.0]]), 2).unwrap();
        let t = tex.texel(0, 0).unwrap();
        assert_eq!(t.bary, [1.0, 0.0, 0.0]);
        assert_eq!(t.position, Vector3::new(0.0, 0.0, 0.0));
        assert_eq!(t.weights, SkinWeights::single(0));
    }

    #[test]
    fn degenerate_uvs_give_empty_texture() {
        let mesh = single_triangle([[0.1, 0.1], [0.5, 0.5], [0.9, 0.9]]);
        assert!(matches!(bake(&mesh, 16), Err(Error::EmptyTexture)));
    }

    #[test]
    fn zero_resolution_is_rejected() {
        let mesh = single_triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(bake(&mesh, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn overlap_resolves_to_lowest_triangle() {
        let base = single_triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let tri = base.triangles()[0].clone();
        let flipped = Triangle { indices: [2, 1, 0], uvs: tri.uvs };
        let mesh = SkinnedMesh::new(
            base.vertices().to_vec(),
            vec![tri, flipped],
            base.weights().to_vec(),
            base.joints().to_vec(),
        )
        .unwrap();
        let tex = bake(&mesh, 8).unwrap();
        assert!(tex.valid_texels().all(|(_, t)| t.triangle == 0));
    }

    #[test]
    fn extract_from_empty_texture_fails() {
        let tex = PositionTexture { width: 2, height: 2, texels: vec![None; 4] };
        assert!(matches!(tex.extract_points(), Err(Error::EmptyTexture)));
    }

    #[test]
    fn extract_returns_one_point_per_valid_texel_in_order() {
        let tex = bake(&single_triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), 16).unwrap();
        let pts = tex.extract_points().unwrap();
        assert_eq!(pts.len(), tex.valid_count());
        assert!(pts.windows(2).all(|w| w[0].texel_index < w[1].texel_index));
    }

    #[test]
    fn binary_round_trip_and_bad_magic() {
        let tex = bake(&single_triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), 9).unwrap();
        let bytes = tex.to_bytes();
        assert_eq!(&bytes[..8], b"SKPTEX\0\0");
        assert_eq!(PositionTexture::from_bytes(&bytes).unwrap(), tex);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(PositionTexture::from_bytes(&bad).is_err());
        assert!(PositionTexture::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn weight_interpolation_renormalizes_union() {
        let w = interpolate_weights(
            [&SkinWeights::single(0), &SkinWeights::single(1), &SkinWeights(vec![(0, 0.5), (2, 0.5)])],
            &[0.2, 0.3, 0.5],
        );
        assert_eq!(w.len(), 3);
        assert!((w.sum() - 1.0).abs() < 1e-15);
        assert!((w.get(0) - 0.45).abs() < 1e-15);
    }
}
