//! Binary PGM (P5) writer for mask visualization: 0 or 255 per pixel.

use std::fs;
use std::io;
use std::path::Path;

pub fn write_pgm(path: &Path, w: usize, h: usize, pixels: &[bool]) -> io::Result<()> {
    assert_eq!(pixels.len(), w * h, "pixel count does not match {w}x{h}");
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&p| if p { 255u8 } else { 0u8 }));
    fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_payload_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        write_pgm(&path, 2, 2, &[true, false, false, true]).expect("write");
        assert_eq!(fs::read(&path).unwrap(), b"P5\n2 2\n255\n\xff\x00\x00\xff");
    }
}
