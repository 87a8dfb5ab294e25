//! Dataset directory format: `manifest.tsv` plus one GLIM file per image.
//!
//! A GLIM file is a 16-byte header (`b"GLIM"`, then little-endian `u32`
//! version, height and width) followed by `height * width` little-endian
//! `f32` values in row-major order.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::classes::GlanceClass;
use crate::data::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::persist::atomic::{read_file, write_atomic};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: &[u8; 4] = b"GLIM";
pub const IMAGE_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.tsv";
const HEADER: &str = "id\tsubject\tdomain\tclass\tlabeled\tsplit\tface\teye";

pub fn encode_image(img: &Tensor<f32>) -> Vec<u8> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut out = Vec::with_capacity(16 + 4 * img.len());
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&IMAGE_VERSION.to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("four bytes"))
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor<f32>> {
    let fail = |offset: usize, detail: String| Err(Error::Format { offset: offset as u64, detail });
    if bytes.len() < 16 {
        return fail(bytes.len(), format!("image header needs 16 bytes, file has {}", bytes.len()));
    }
    if &bytes[..4] != IMAGE_MAGIC {
        return fail(0, format!("bad image magic {:?}", &bytes[..4]));
    }
    let version = u32_at(bytes, 4);
    if version != IMAGE_VERSION {
        return fail(4, format!("image version {version} is not supported (expected {IMAGE_VERSION})"));
    }
    let (h, w) = (u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize);
    let expected = h.checked_mul(w).and_then(|n| n.checked_mul(4)).and_then(|n| n.checked_add(16));
    if expected != Some(bytes.len()) || h == 0 || w == 0 {
        return fail(
            bytes.len().min(16),
            format!("{h}x{w} image needs {expected:?} bytes, file has {}", bytes.len()),
        );
    }
    let data = bytes[16..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk"))).collect();
    Tensor::new([h, w, 1], data)
}

fn image_names(id: u64) -> (String, String) {
    (format!("face/{id:06}.glim"), format!("eye/{id:06}.glim"))
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    let mut manifest = String::from(HEADER);
    manifest.push('\n');
    for s in &ds.samples {
        let (face, eye) = image_names(s.id);
        write_atomic(&dir.join(&face), &encode_image(&s.face))?;
        write_atomic(&dir.join(&eye), &encode_image(&s.eye))?;
        writeln!(
            manifest,
            "{}\t{}\t{}\t{}\t{}\t{}\t{face}\t{eye}",
            s.id,
            s.subject,
            s.domain,
            s.class.code(),
            u8::from(s.labeled),
            s.split
        )
        .expect("writing to a String");
    }
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    let text = String::from_utf8(read_file(&path)?)
        .map_err(|e| Error::Format { offset: e.utf8_error().valid_up_to() as u64, detail: "manifest is not UTF-8".into() })?;
    let mut lines = text.lines();
    let mut offset = 0u64;
    match lines.next() {
        Some(h) if h == HEADER => offset += h.len() as u64 + 1,
        other => return Err(Error::Format { offset: 0, detail: format!("unexpected manifest header {other:?}") }),
    }
    let mut samples = Vec::new();
    let mut size = None;
    for line in lines {
        let bad = |detail: String| Error::Format { offset, detail };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 8 {
            return Err(bad(format!("expected 8 columns, got {}", cols.len())));
        }
        let int = |i: usize| cols[i].parse::<u64>().map_err(|e| bad(format!("column {i}: {e}")));
        let labeled = match cols[4] {
            "0" => false,
            "1" => true,
            v => return Err(bad(format!("labeled flag {v:?} is not 0 or 1"))),
        };
        let class = GlanceClass::from_code(u8::try_from(int(3)?).map_err(|e| bad(e.to_string()))?)
            .map_err(|e| bad(e.to_string()))?;
        let split = cols[5].parse().map_err(|e: Error| bad(e.to_string()))?;
        let face = decode_image(&read_file(&dir.join(cols[6]))?)?;
        let eye = decode_image(&read_file(&dir.join(cols[7]))?)?;
        let s = face.shape()[0];
        if face.shape() != [s, s, 1] || eye.shape() != face.shape() || size.is_some_and(|z| z != s) {
            return Err(bad(format!("images for sample {} have inconsistent sizes", cols[0])));
        }
        size = Some(s);
        samples.push(Sample {
            id: int(0)?,
            face,
            eye,
            class,
            subject: u32::try_from(int(1)?).map_err(|e| bad(e.to_string()))?,
            domain: u32::try_from(int(2)?).map_err(|e| bad(e.to_string()))?,
            labeled,
            split,
        });
        offset += line.len() as u64 + 1;
    }
    let image_size = size.ok_or_else(|| Error::Format { offset, detail: "manifest lists no samples".into() })?;
    Ok(Dataset { image_size, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip_and_header_errors() {
        let img = Tensor::new([2, 3, 1], vec![0.5, -1.0, f32::MIN_POSITIVE, 1.0, -0.0, 0.25]).unwrap();
        let bytes = encode_image(&img);
        assert_eq!(bytes.len(), 16 + 24);
        let back = decode_image(&bytes).unwrap();
        assert_eq!(
            back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            img.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_image(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_image(&bad), Err(Error::Format { offset: 4, .. })));
        assert!(matches!(decode_image(&bytes[..30]), Err(Error::Format { .. })));
    }
}
