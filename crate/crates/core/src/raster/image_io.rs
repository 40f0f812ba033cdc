//! Binary PGM (P5) and PFM image files.

use std::io::{BufRead, BufReader, Read};

use super::render::{BinaryMask, NormalMap};
use crate::{Error, Result};

/// Encodes a mask as 8-bit P5 with foreground written as 255.
pub fn mask_to_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&v| if v != 0 { 255u8 } else { 0 }));
    out
}

/// Grayscale image as `(width, height, values in [0, 1])`.
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Float image, row-major from the top row, `channels` interleaved.
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

fn header_tokens<R: BufRead>(reader: &mut R, n: usize) -> Result<Vec<String>> {
    let mut tokens = Vec::new();
    let mut line = String::new();
    while tokens.len() < n {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Parse {
                line: 0,
                message: "truncated image header".into(),
            });
        }
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(str::to_owned));
    }
    Ok(tokens)
}

fn header_usize(tok: &str) -> Result<usize> {
    tok.parse().map_err(|_| Error::Parse {
        line: 0,
        message: format!("invalid header field '{tok}'"),
    })
}

pub fn read_pgm(bytes: &[u8]) -> Result<Gray> {
    let mut reader = BufReader::new(bytes);
    let tokens = header_tokens(&mut reader, 4)?;
    if tokens[0] != "P5" || tokens.len() != 4 {
        return Err(Error::Parse {
            line: 1,
            message: "expected a binary P5 header on separate lines".into(),
        });
    }
    let (width, height, maxval) = (header_usize(&tokens[1])?, header_usize(&tokens[2])?, header_usize(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse {
            line: 0,
            message: format!("unsupported maxval {maxval}"),
        });
    }
    let mut data = vec![0u8; width * height];
    reader.read_exact(&mut data)?;
    Ok(Gray {
        width,
        height,
        values: data.iter().map(|&v| v as f64 / maxval as f64).collect(),
    })
}

/// PFM with little-endian samples. Rows are stored bottom-to-top.
pub fn write_pfm(img: &FloatImage) -> Vec<u8> {
    let tag = if img.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    for y in (0..img.height).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_pfm(bytes: &[u8]) -> Result<FloatImage> {
    let mut reader = BufReader::new(bytes);
    let tokens = header_tokens(&mut reader, 4)?;
    let channels = match tokens[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => {
            return Err(Error::Parse {
                line: 1,
                message: format!("not a PFM file (magic '{other}')"),
            })
        }
    };
    let width = header_usize(&tokens[1])?;
    let height = header_usize(&tokens[2])?;
    let scale: f64 = tokens[3].parse().map_err(|_| Error::Parse {
        line: 3,
        message: "invalid scale".into(),
    })?;
    let little = scale < 0.0;
    let row = width * channels;
    let mut raw = vec![0u8; row * height * 4];
    reader.read_exact(&mut raw)?;
    let mut data = vec![0f32; row * height];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        // file row r is image row height - 1 - r
        let (r, c) = (i / row, i % row);
        data[(height - 1 - r) * row + c] = v;
    }
    Ok(FloatImage {
        width,
        height,
        channels,
        data,
    })
}

/// Normal map as a 3-channel PFM plus its foreground mask as PGM.
pub fn normal_map_to_files(map: &NormalMap) -> (Vec<u8>, Vec<u8>) {
    let img = FloatImage {
        width: map.width,
        height: map.height,
        channels: 3,
        data: map
            .normals
            .iter()
            .flat_map(|n| [n.x as f32, n.y as f32, n.z as f32])
            .collect(),
    };
    (write_pfm(&img), mask_to_pgm(&map.mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::ViewAngle;

    #[test]
    fn pgm_mask_scaling() {
        let mut m = BinaryMask::new(3, 2, ViewAngle::FRONT);
        m.data[4] = 1;
        let bytes = mask_to_pgm(&m);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 0, 0, 0, 255, 0]);
        let back = read_pgm(&bytes).unwrap();
        assert_eq!(back.values, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn pfm_layout_is_bottom_up_little_endian() {
        let img = FloatImage {
            width: 1,
            height: 2,
            channels: 1,
            data: vec![1.0, 2.0],
        };
        let bytes = write_pfm(&img);
        let header = b"Pf\n1 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], [2.0f32.to_le_bytes(), 1.0f32.to_le_bytes()].concat());
        let back = read_pfm(&bytes).unwrap();
        assert_eq!(back.data, img.data);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(read_pfm(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(read_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
