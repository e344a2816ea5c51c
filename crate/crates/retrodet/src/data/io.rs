//! RCCLIP1 clip files and the plain-text corpus manifest.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{ClipSample, DataError};
use crate::tensor::{Dims5, Mask2, Tensor5};

pub const CLIP_MAGIC: &[u8; 7] = b"RCCLIP1";

/// Layout: magic, then L, H, W, C as u32 LE, f32 LE frame data in
/// (C, L, H, W) order, mask as H*W bytes, tag as u32-length-prefixed UTF-8.
pub fn clip_bytes(sample: &ClipSample) -> Vec<u8> {
    let d = sample.clip.dims();
    let mut out = Vec::new();
    out.extend_from_slice(CLIP_MAGIC);
    for v in [d.l, d.h, d.w, d.c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &v in sample.clip.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(sample.mask.data());
    out.extend_from_slice(&(sample.tag.len() as u32).to_le_bytes());
    out.extend_from_slice(sample.tag.as_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.bytes.len() {
            return Err(DataError::Parse { offset: self.pos, what: format!("truncated while reading {what}") });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_clip(bytes: &[u8]) -> Result<ClipSample, DataError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(7, "magic")? != CLIP_MAGIC {
        return Err(DataError::Parse { offset: 0, what: "bad magic".into() });
    }
    let l = cur.u32("L")? as usize;
    let h = cur.u32("H")? as usize;
    let w = cur.u32("W")? as usize;
    let c = cur.u32("C")? as usize;
    if l < 2 || h == 0 || w == 0 || c == 0 {
        return Err(DataError::Parse { offset: 7, what: format!("bad dims L={l} H={h} W={w} C={c}") });
    }
    let count = c
        .checked_mul(l)
        .and_then(|x| x.checked_mul(h))
        .and_then(|x| x.checked_mul(w))
        .ok_or(DataError::Parse { offset: 7, what: "dim overflow".into() })?;
    let raw = cur.take(count * 4, "frame data")?;
    let data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let clip = Tensor5::from_vec(Dims5::new(1, c, l, h, w), data)?;
    let mask_off = cur.pos;
    let mask_bytes = cur.take(h * w, "mask")?.to_vec();
    let mask = Mask2::from_vec(1, h, w, mask_bytes)
        .map_err(|e| DataError::Parse { offset: mask_off, what: e.to_string() })?;
    let tag_len = cur.u32("tag length")? as usize;
    let tag_off = cur.pos;
    let tag = std::str::from_utf8(cur.take(tag_len, "tag")?)
        .map_err(|e| DataError::Parse { offset: tag_off, what: format!("tag not UTF-8: {e}") })?
        .to_string();
    if cur.pos != bytes.len() {
        return Err(DataError::Parse { offset: cur.pos, what: "trailing bytes".into() });
    }
    Ok(ClipSample { clip, mask, tag })
}

pub fn save_clip(sample: &ClipSample, path: &Path) -> Result<(), DataError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&clip_bytes(sample))?;
    Ok(())
}

pub fn load_clip(path: &Path) -> Result<ClipSample, DataError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_clip(&bytes)
}

/// One relative clip path per line; '#' starts a comment.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>, DataError> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(text
        .lines()
        .map(|line| line.split('#').next().unwrap_or("").trim())
        .filter(|line| !line.is_empty())
        .map(|line| base.join(line))
        .collect())
}

pub fn write_manifest(paths: &[String], path: &Path) -> Result<(), DataError> {
    let mut f = std::fs::File::create(path)?;
    for p in paths {
        writeln!(f, "{p}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_clip, Background, ObjectSpec, SceneSpec, Shape};

    fn sample() -> ClipSample {
        let spec = SceneSpec {
            canvas: (16, 16),
            background: Background::NoiseField,
            objects: vec![ObjectSpec {
                shape: Shape::Rect,
                size: 4.0,
                pos: (8.0, 6.0),
                velocity: (0.0, 1.0),
                intensity: [0.8, 0.2, 0.4],
            }],
            brightness_drift: 0.0,
            noise_sigma: 0.0,
            tag: "noise".into(),
            seed: 5,
        };
        generate_clip(&spec, 3).unwrap()
    }

    #[test]
    fn clip_round_trip_is_byte_identical() {
        let s = sample();
        let bytes = clip_bytes(&s);
        let back = read_clip(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(clip_bytes(&back), bytes);
    }

    #[test]
    fn clip_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.rcclip");
        let s = sample();
        save_clip(&s, &path).unwrap();
        assert_eq!(load_clip(&path).unwrap(), s);
    }

    #[test]
    fn parse_errors_name_the_offset() {
        let s = sample();
        let bytes = clip_bytes(&s);
        match read_clip(&bytes[..bytes.len() - 3]) {
            Err(DataError::Parse { offset, .. }) => assert!(offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(matches!(read_clip(&bad), Err(DataError::Parse { offset: 0, .. })));
    }

    #[test]
    fn manifest_skips_comments_and_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.txt");
        std::fs::write(&path, "# corpus\na.rcclip\n\nb.rcclip # trailing\n").unwrap();
        let entries = read_manifest(&path).unwrap();
        assert_eq!(entries, vec![dir.path().join("a.rcclip"), dir.path().join("b.rcclip")]);
    }
}
