use std::path::Path;

use nalgebra::Vector3;

use super::ByteReader;
use crate::body::SkinWeights;
use crate::error::{Error, Result};
use crate::scene::HumanGaussians;

pub const HUMAN_MAGIC: [u8; 8] = *b"SKHUMAN\0";
pub const HUMAN_VERSION: u32 = 1;

fn put_vec(out: &mut Vec<u8>, v: &Vector3<f64>) {
    for c in v.iter() {
        out.extend_from_slice(&c.to_le_bytes());
    }
}

impl HumanGaussians {
    /// Little-endian binary keyed by texture size and valid-texel count; see `docs/formats.md`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::with_capacity(28 + self.len() * 120);
        out.extend_from_slice(&HUMAN_MAGIC);
        out.extend_from_slice(&HUMAN_VERSION.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&(self.texture_width as u32).to_le_bytes());
        out.extend_from_slice(&(self.texture_height as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for i in 0..self.len() {
            out.extend_from_slice(&(self.texel_indices[i] as u32).to_le_bytes());
            put_vec(&mut out, &self.rest_positions[i]);
            out.extend_from_slice(&self.rest_log_scales[i].to_le_bytes());
            put_vec(&mut out, &self.offsets[i]);
            put_vec(&mut out, &self.color_logits[i]);
            out.extend_from_slice(&self.log_scales[i].to_le_bytes());
            out.extend_from_slice(&self.opacity_logits[i].to_le_bytes());
            let w = &self.lbs_weights[i];
            out.extend_from_slice(&(w.len() as u16).to_le_bytes());
            for &(j, x) in w.iter() {
                out.extend_from_slice(&(j as u16).to_le_bytes());
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "human attributes");
        if r.take(8)? != HUMAN_MAGIC {
            return Err(Error::format("human attributes", "bad magic"));
        }
        let version = r.u32()?;
        if version != HUMAN_VERSION {
            return Err(Error::format("human attributes", format!("unsupported version {version}")));
        }
        let _flags = r.u32()?;
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let n = r.u32()? as usize;
        let mut h = HumanGaussians {
            texture_width: width,
            texture_height: height,
            ..Default::default()
        };
        let vec = |r: &mut ByteReader| -> Result<Vector3<f64>> { Ok(Vector3::new(r.f64()?, r.f64()?, r.f64()?)) };
        for _ in 0..n {
            h.texel_indices.push(r.u32()? as usize);
            h.rest_positions.push(vec(&mut r)?);
            h.rest_log_scales.push(r.f64()?);
            h.offsets.push(vec(&mut r)?);
            h.color_logits.push(vec(&mut r)?);
            h.log_scales.push(r.f64()?);
            h.opacity_logits.push(r.f64()?);
            let k = r.u16()? as usize;
            let mut w = Vec::with_capacity(k);
            for _ in 0..k {
                w.push((r.u16()? as usize, r.f64()?));
            }
            h.lbs_weights.push(SkinWeights(w));
        }
        r.finish()?;
        Ok(h)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let h = HumanGaussians {
            texture_width: 4,
            texture_height: 2,
            texel_indices: vec![1, 6],
            rest_positions: vec![Vector3::new(0.1, 0.2, 0.3), Vector3::new(-1.0, 0.0, 2.0)],
            rest_log_scales: vec![-4.0, -4.5],
            offsets: vec![Vector3::zeros(), Vector3::new(0.01, 0.0, 0.0)],
            color_logits: vec![Vector3::new(0.5, -0.5, 1.0), Vector3::zeros()],
            log_scales: vec![0.0, 0.1],
            opacity_logits: vec![2.0, -1.0],
            lbs_weights: vec![SkinWeights::single(3), SkinWeights(vec![(0, 0.25), (2, 0.75)])],
        };
        let bytes = h.to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"SKHUMAN\0");
        assert_eq!(HumanGaussians::from_bytes(&bytes).unwrap(), h);
        assert!(HumanGaussians::from_bytes(&bytes[..20]).is_err());
    }
}
