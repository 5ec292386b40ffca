//! File formats: scene JSON, PFM float images, 16-bit PNM previews and
//! partition JSON.
//!
//! PFM rows run bottom to top, which matches the `y`-major storage of
//! [`Image`]. PNM previews run top to bottom and are flipped on export.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::generator::{Image, Leaf, Scene};
use crate::geometry::PixelSet;
use crate::partitions::Partition;
use crate::specfun::RadiusLaw;

pub const SCENE_FORMAT: &str = "deadleaves-scene";
pub const PARTITION_FORMAT: &str = "deadleaves-partition";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    format: String,
    version: u32,
    side: usize,
    seed: u64,
    law: RadiusLaw,
    leaves: Vec<Leaf>,
    /// Row `y` holds labels of pixels `(0..side, y)`.
    labels: Vec<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<Value>,
}

pub fn scene_to_json(scene: &Scene, config: Option<&Value>) -> Result<String> {
    let file = SceneFile {
        format: SCENE_FORMAT.into(),
        version: 1,
        side: scene.side,
        seed: scene.seed,
        law: scene.law,
        leaves: scene.leaves.clone(),
        labels: scene.labels.chunks(scene.side.max(1)).map(<[u32]>::to_vec).collect(),
        config: config.cloned(),
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

/// Parses and validates a scene; also returns the echoed config, if any.
pub fn scene_from_json(text: &str) -> Result<(Scene, Option<Value>)> {
    let file: SceneFile = serde_json::from_str(text)?;
    if file.format != SCENE_FORMAT || file.version != 1 {
        return Err(Error::Format(format!("unsupported scene format {} v{}", file.format, file.version)));
    }
    if file.labels.len() != file.side || file.labels.iter().any(|r| r.len() != file.side) {
        return Err(Error::Format(format!("label array is not {0}x{0}", file.side)));
    }
    let scene = Scene {
        side: file.side,
        labels: file.labels.concat(),
        leaves: file.leaves,
        law: file.law,
        seed: file.seed,
    };
    scene.validate()?;
    Ok((scene, file.config))
}

pub fn write_scene(path: &Path, scene: &Scene, config: Option<&Value>) -> Result<()> {
    fs::write(path, scene_to_json(scene, config)?)?;
    Ok(())
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    Ok(scene_from_json(&fs::read_to_string(path)?)?.0)
}

/// Little-endian PFM (`Pf` for one channel, `PF` for three), `f32` samples.
pub fn image_to_pfm(img: &Image) -> Result<Vec<u8>> {
    let tag = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::InvalidParameter(format!("PFM holds 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{tag}\n{0} {0}\n-1.0\n", img.side).into_bytes();
    out.reserve(img.values.len() * 4);
    for v in &img.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Header<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { line: self.line, column: self.col, message: message.into() }
    }

    fn advance(&mut self) {
        if self.bytes[self.pos] == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        self.pos += 1;
    }

    fn token(&mut self) -> Result<&'a str> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.advance();
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.advance();
        }
        if start == self.pos {
            return Err(self.err("unexpected end of header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| self.err("header is not ASCII"))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let t = self.token()?;
        t.parse().map_err(|_| self.err(format!("bad {what} {t:?}")))
    }

    /// Consumes the single whitespace byte ending the header.
    fn end(&mut self) -> Result<usize> {
        if self.pos >= self.bytes.len() || !self.bytes[self.pos].is_ascii_whitespace() {
            return Err(self.err("missing header terminator"));
        }
        Ok(self.pos + 1)
    }
}

pub fn image_from_pfm(bytes: &[u8]) -> Result<Image> {
    let mut h = Header { bytes, pos: 0, line: 1, col: 1 };
    let channels = match h.token()? {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(h.err(format!("unknown magic {t:?}"))),
    };
    let w: usize = h.number("width")?;
    let ht: usize = h.number("height")?;
    let scale: f64 = h.number("scale")?;
    if w != ht {
        return Err(h.err(format!("image must be square, got {w}x{ht}")));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(h.err("scale must be non-zero"));
    }
    let data = &bytes[h.end()?..];
    let n = w * ht * channels;
    if data.len() != n * 4 {
        return Err(Error::Format(format!("expected {} data bytes after offset {}, found {}", n * 4, bytes.len() - data.len(), data.len())));
    }
    let values = data
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            (if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
        })
        .collect();
    Image::new(w, channels, values)
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, image_to_pfm(img)?)?;
    Ok(())
}

pub fn read_image(path: &Path) -> Result<Image> {
    image_from_pfm(&fs::read(path)?)
}

/// 16-bit binary PGM (`P5`) or PPM (`P6`), top row first.
pub fn image_to_pnm16(img: &Image) -> Result<Vec<u8>> {
    let tag = match img.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::InvalidParameter(format!("PNM holds 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{tag}\n{0} {0}\n65535\n", img.side).into_bytes();
    for y in (0..img.side).rev() {
        for x in 0..img.side {
            for v in img.pixel(x, y) {
                out.extend_from_slice(&((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_preview(path: &Path, img: &Image) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&image_to_pnm16(img)?)?;
    Ok(())
}

/// Partition as lists of integer pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    #[serde(default = "partition_format")]
    pub format: String,
    pub blocks: Vec<Vec<[i64; 2]>>,
}

fn partition_format() -> String {
    PARTITION_FORMAT.into()
}

impl PartitionFile {
    pub fn from_partition(m: &Partition, a: &PixelSet) -> Result<Self> {
        Ok(PartitionFile { format: partition_format(), blocks: m.to_coords(a)? })
    }

    /// Pixel set spanned by the blocks.
    pub fn pixels(&self) -> Result<PixelSet> {
        PixelSet::new(
            self.blocks.iter().flatten().map(|&[x, y]| crate::geometry::Point2::new(x as f64, y as f64)).collect(),
        )
    }

    pub fn to_partition(&self, a: &PixelSet) -> Result<Partition> {
        if self.format != PARTITION_FORMAT {
            return Err(Error::Format(format!("unsupported partition format {}", self.format)));
        }
        Partition::from_coords(a, &self.blocks)
    }
}

pub fn read_partition(path: &Path) -> Result<PartitionFile> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate_scene, render_image, ColorTextureModel};

    fn scene() -> Scene {
        generate_scene(&RadiusLaw::new(1.5, 4.0, 16.0).unwrap(), 21).unwrap()
    }

    #[test]
    fn scene_round_trip() {
        let s = scene();
        let cfg = serde_json::json!({"seed": 21});
        let (back, c) = scene_from_json(&scene_to_json(&s, Some(&cfg)).unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(c, Some(cfg));
    }

    #[test]
    fn label_gap_rejected() {
        let s = scene();
        let mut v: Value = serde_json::from_str(&scene_to_json(&s, None).unwrap()).unwrap();
        let top = s.leaves.len() as u64;
        for row in v["labels"].as_array_mut().unwrap() {
            for l in row.as_array_mut().unwrap() {
                if l.as_u64() == Some(top) {
                    *l = Value::from(top + 1);
                }
            }
        }
        let leaves = v["leaves"].as_array_mut().unwrap();
        leaves.push(leaves[top as usize - 1].clone());
        let err = scene_from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn malformed_json_reports_position() {
        match scene_from_json("{\n  \"format\": oops\n}") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn image_round_trip() {
        let s = scene();
        for ch in [1, 3] {
            let img = render_image(&s, &ColorTextureModel::gaussian_iso(ch, 0.5, 0.2, 0.05), 4).unwrap();
            let back = image_from_pfm(&image_to_pfm(&img).unwrap()).unwrap();
            assert_eq!((back.side, back.channels), (img.side, img.channels));
            for (a, b) in img.values.iter().zip(&back.values) {
                assert!((a - b).abs() <= 1e-7, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn truncated_pfm_rejected() {
        let img = Image::new(2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut bytes = image_to_pfm(&img).unwrap();
        bytes.pop();
        assert!(matches!(image_from_pfm(&bytes), Err(Error::Format(_))));
        assert!(matches!(image_from_pfm(b"P7\n2 2\n-1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(image_from_pfm(b"Pf\n2 x\n-1\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn preview_is_flipped() {
        let img = Image::new(2, 1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let bytes = image_to_pnm16(&img).unwrap();
        let body = &bytes[bytes.len() - 8..];
        assert_eq!(body, &[0xff, 0xff, 0xff, 0xff, 0, 0, 0, 0]);
    }

    #[test]
    fn partition_round_trip() {
        let a = PixelSet::grid(3, 3).unwrap();
        let m = Partition::from_labels(&[0, 0, 1, 0, 2, 2, 0, 2, 2]).unwrap();
        let f = PartitionFile::from_partition(&m, &a).unwrap();
        let text = serde_json::to_string(&f).unwrap();
        let g: PartitionFile = serde_json::from_str(&text).unwrap();
        assert_eq!(g.pixels().unwrap(), a);
        assert_eq!(g.to_partition(&a).unwrap().canonical(), m.canonical());
    }
}
