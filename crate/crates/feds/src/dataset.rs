//! Word-image datasets on disk.
//!
//! A dataset directory holds one binary (`P5`) 8-bit PGM per sample under
//! `images/` and a `labels.tsv` index:
//!
//! ```text
//! index	filename	transcription
//! 0	images/00000.pgm	k7qa
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use feds_core::recognizer::WordImage;
use feds_core::Tensor;

use crate::{FormatError, Result};

pub const LABELS_FILE: &str = "labels.tsv";
const HEADER: &str = "index\tfilename\ttranscription";

/// Encodes an image as an 8-bit binary PGM, rounding `v * 255`.
pub fn encode_pgm(pixels: &Tensor) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", pixels.cols(), pixels.rows()).into_bytes();
    out.extend(
        pixels
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

/// Decodes an 8-bit binary PGM to values `byte / 255`.
pub fn decode_pgm(buf: &[u8]) -> Result<Tensor> {
    // Magic, width, height and maxval, separated by whitespace, with
    // `#` comments allowed between them.
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < buf.len() && (buf[pos].is_ascii_whitespace() || buf[pos] == b'#') {
            if buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FormatError::malformed("pgm", "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(FormatError::malformed("pgm", format!("unsupported magic {:?}", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| FormatError::malformed("pgm", format!("bad header field {s:?}")))
    };
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(FormatError::malformed("pgm", format!("maxval {max} is not 255")));
    }
    let data = buf.get(pos + 1..).unwrap_or_default();
    if data.len() != w * h {
        return Err(FormatError::malformed(
            "pgm",
            format!("{} pixel bytes for {w}x{h}", data.len()),
        ));
    }
    let values = data.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Tensor::from_vec(h, w, values)?)
}

fn image_name(index: usize) -> String {
    format!("images/{index:05}.pgm")
}

/// Writes `samples` into `dir`, creating it if needed.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[WordImage]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    let mut labels = String::from(HEADER);
    labels.push('\n');
    for (i, s) in samples.iter().enumerate() {
        if s.label.contains(['\t', '\n', '\r']) {
            return Err(FormatError::malformed("label", format!("sample {i} contains a tab or newline")));
        }
        let name = image_name(i);
        fs::write(dir.join(&name), encode_pgm(&s.pixels))?;
        labels.push_str(&format!("{i}\t{name}\t{}\n", s.label));
    }
    fs::File::create(dir.join(LABELS_FILE))?.write_all(labels.as_bytes())?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`], in index order.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<WordImage>> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(LABELS_FILE))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(FormatError::malformed("labels.tsv", "missing header row"));
    }
    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        let mut parts = line.splitn(3, '\t');
        let (Some(index), Some(file), Some(label)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(FormatError::malformed("labels.tsv", format!("row {} has fewer than 3 fields", row + 1)));
        };
        if index.parse::<usize>().ok() != Some(row) {
            return Err(FormatError::malformed("labels.tsv", format!("row {} has index {index:?}", row + 1)));
        }
        let pixels = decode_pgm(&fs::read(dir.join(file))?)?;
        out.push(WordImage {
            pixels,
            label: label.to_owned(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_quantisation() {
        let t = Tensor::from_vec(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        let b = encode_pgm(&t);
        assert_eq!(&b[..11], b"P5\n3 1\n255\n");
        assert_eq!(&b[11..], &[0, 128, 255]);
        let back = decode_pgm(&b).unwrap();
        assert_eq!(back.data(), &[0.0, 128.0 / 255.0, 1.0]);
    }

    #[test]
    fn pgm_comments_and_errors() {
        let b = b"P5\n# made by hand\n2 1\n255\n\x00\xff";
        assert_eq!(decode_pgm(b).unwrap().data(), &[0.0, 1.0]);
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }
}
