use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::DenseTensor;

/// Encodes an `H x W` map in `[0, 1]` as binary PGM (`P5`, maxval 255).
/// Each byte is `round(255 * v)` with halves rounded up.
pub fn encode_pgm(map: &DenseTensor) -> Result<Vec<u8>> {
    if map.rank() != 2 {
        return Err(Error::shape("write_pgm", map.shape(), &[0, 0]));
    }
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w);
    for (index, &value) in map.data().iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Range { index, value });
        }
        out.push((value as f64 * 255.0 + 0.5).floor() as u8);
    }
    Ok(out)
}

pub fn write_pgm(map: &DenseTensor, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_pgm(map)?;
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_curve_csv(points: &[(f64, f64)]) -> Result<String> {
    let mut out = String::from("fraction,probability\n");
    let mut prev = 0.0;
    for (row, &(fraction, probability)) in points.iter().enumerate() {
        if !(0.0..=1.0).contains(&fraction) || fraction < prev {
            return Err(Error::Order { row });
        }
        prev = fraction;
        out.push_str(&format!("{fraction:.6},{probability:.6}\n"));
    }
    Ok(out)
}

/// Writes `fraction,probability` rows with six decimals and LF endings.
pub fn write_curve_csv(points: &[(f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    let text = encode_curve_csv(points)?;
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
