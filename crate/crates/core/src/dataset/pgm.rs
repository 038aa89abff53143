//! Binary PGM (P5) reading and writing. 8-bit files carry intensity, 16-bit
//! files (big-endian samples, maxval above 255) carry millimeter depth.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{DepthImage, IntensityImage, Raster};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

struct Header<'a> {
    rest: &'a [u8],
}

impl<'a> Header<'a> {
    fn skip_space(&mut self) {
        loop {
            match self.rest.first() {
                Some(c) if c.is_ascii_whitespace() => self.rest = &self.rest[1..],
                Some(b'#') => {
                    let end = self.rest.iter().position(|&c| c == b'\n').unwrap_or(self.rest.len());
                    self.rest = &self.rest[end..];
                }
                _ => return,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let end = self.rest.iter().position(|c| !c.is_ascii_digit()).unwrap_or(self.rest.len());
        if end == 0 {
            return Err(Error::Format(format!("pgm header: missing {what}")));
        }
        let text = std::str::from_utf8(&self.rest[..end]).expect("ascii digits");
        self.rest = &self.rest[end..];
        text.parse()
            .map_err(|_| Error::Format(format!("pgm header: {what} {text:?} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Pgm> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("not a binary PGM (expected P5 magic)".into()));
    }
    let mut h = Header { rest: &bytes[2..] };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("pgm has empty size {width}x{height}")));
    }
    if maxval == 0 || maxval > u16::MAX as usize {
        return Err(Error::Format(format!("pgm maxval {maxval} outside 1..=65535")));
    }
    match h.rest.first() {
        Some(c) if c.is_ascii_whitespace() => h.rest = &h.rest[1..],
        _ => return Err(Error::Format("pgm header not terminated by whitespace".into())),
    }
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("pgm dimensions overflow".into()))?;
    let need = n * bytes_per;
    if h.rest.len() < need {
        return Err(Error::Format(format!(
            "pgm raster truncated: {} of {need} bytes",
            h.rest.len()
        )));
    }
    let raster = &h.rest[..need];
    let samples: Vec<u16> = if bytes_per == 2 {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        raster.iter().map(|&b| b as u16).collect()
    };
    if let Some(v) = samples.iter().find(|&&v| v as usize > maxval) {
        return Err(Error::Format(format!("pgm sample {v} exceeds maxval {maxval}")));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn encode(pgm: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", pgm.width, pgm.height, pgm.maxval).into_bytes();
    if pgm.maxval > 255 {
        for v in &pgm.samples {
            out.extend_from_slice(&v.to_be_bytes());
        }
    } else {
        out.extend(pgm.samples.iter().map(|&v| v as u8));
    }
    out
}

pub fn read_depth(path: &Path) -> Result<DepthImage> {
    let pgm = decode(&fs::read(path)?)?;
    if pgm.maxval <= 255 {
        return Err(Error::Format(format!(
            "depth image must be 16-bit, found maxval {}",
            pgm.maxval
        )));
    }
    DepthImage::new(pgm.width, pgm.height, pgm.samples)
}

pub fn read_intensity(path: &Path) -> Result<IntensityImage> {
    let pgm = decode(&fs::read(path)?)?;
    if pgm.maxval != 255 {
        return Err(Error::Format(format!(
            "intensity image must be 8-bit with maxval 255, found maxval {}",
            pgm.maxval
        )));
    }
    let bytes: Vec<u8> = pgm.samples.iter().map(|&v| v as u8).collect();
    IntensityImage::from_u8(pgm.width, pgm.height, &bytes)
}

fn write(path: &Path, pgm: &Pgm) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(pgm))?;
    Ok(())
}

pub fn write_depth(path: &Path, img: &DepthImage) -> Result<()> {
    write(
        path,
        &Pgm {
            width: img.width(),
            height: img.height(),
            maxval: u16::MAX,
            samples: img.data().to_vec(),
        },
    )
}

pub fn write_intensity(path: &Path, img: &IntensityImage) -> Result<()> {
    write(
        path,
        &Pgm {
            width: img.width(),
            height: img.height(),
            maxval: 255,
            samples: img.to_u8().into_iter().map(u16::from).collect(),
        },
    )
}
