//! Binary PPM (P6) frames.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::FrameImage;

pub fn encode_ppm(frame: &FrameImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend_from_slice(frame.pixels());
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<FrameImage> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::Format("bad PPM header".into()))?);
    }
    if fields[0] != "P6" {
        return Err(Error::Format(format!("unsupported image magic `{}`", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PPM header field `{s}`")));
    let (w, h, max) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if max != 255 {
        return Err(Error::Format(format!("unsupported PPM max value {max}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(Error::Format("truncated PPM raster".into()));
    }
    FrameImage::new(w, h, bytes[pos..pos + need].to_vec())
}

pub fn write_ppm(frame: &FrameImage, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(frame)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_ppm(path: &Path) -> Result<FrameImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_ppm(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
