//! On-disk containers: complex grids (CIMG/CSPC), masks, measurement
//! vectors, label maps, and PGM magnitude exports.
//!
//! All integers and floats are little-endian; complex samples are stored
//! as interleaved (re, im) f32 pairs in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex;

use crate::error::{CoreError, Result};
use crate::model::{ComplexImage, MaskKind, MeasurementVector, PhaseHistory, SamplingMask};
use crate::scalar::Scalar;
use crate::semantics::{Label, LabelMap};

const MAGIC_CIMG: &[u8; 8] = b"CIMG0001";
const MAGIC_CSPC: &[u8; 8] = b"CSPC0001";
const MAGIC_MASK: &[u8; 8] = b"MASK0001";
const MAGIC_CVEC: &[u8; 8] = b"CVEC0001";
const MAGIC_LMAP: &[u8; 8] = b"LMAP0001";

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_magic(r: &mut impl Read, want: &[u8; 8]) -> Result<()> {
    let mut got = [0u8; 8];
    r.read_exact(&mut got)?;
    if &got != want {
        return Err(CoreError::Format(format!(
            "bad magic: expected {:?}, got {:?}",
            String::from_utf8_lossy(want),
            String::from_utf8_lossy(&got)
        )));
    }
    Ok(())
}

fn write_complex_grid<T: Scalar>(
    w: &mut impl Write,
    magic: &[u8; 8],
    rows: usize,
    cols: usize,
    data: &[Complex<T>],
) -> Result<()> {
    w.write_all(magic)?;
    write_u32(w, rows as u32)?;
    write_u32(w, cols as u32)?;
    for z in data {
        w.write_all(&(z.re.as_f64() as f32).to_le_bytes())?;
        w.write_all(&(z.im.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_complex_grid<T: Scalar>(
    r: &mut impl Read,
    magic: &[u8; 8],
) -> Result<(usize, usize, Vec<Complex<T>>)> {
    read_magic(r, magic)?;
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| CoreError::Format("grid size overflow".into()))?;
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex::new(T::of_f64(re as f64), T::of_f64(im as f64))
        })
        .collect();
    Ok((rows, cols, data))
}

pub fn write_cimg<T: Scalar>(path: &Path, img: &ComplexImage<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_complex_grid(&mut w, MAGIC_CIMG, img.rows(), img.cols(), img.as_slice())
}

pub fn read_cimg<T: Scalar>(path: &Path) -> Result<ComplexImage<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let (rows, cols, data) = read_complex_grid(&mut r, MAGIC_CIMG)?;
    ComplexImage::new(rows, cols, data)
}

pub fn write_cspc<T: Scalar>(path: &Path, ph: &PhaseHistory<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_complex_grid(&mut w, MAGIC_CSPC, ph.rows(), ph.cols(), ph.as_slice())
}

pub fn read_cspc<T: Scalar>(path: &Path) -> Result<PhaseHistory<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let (rows, cols, data) = read_complex_grid(&mut r, MAGIC_CSPC)?;
    PhaseHistory::new(rows, cols, data)
}

/// Mask file: magic, rows, cols, then row-major bits packed MSB-first,
/// padded to a whole byte. The mask kind and rates are not persisted;
/// readers get `Mask1` with the empirical rate.
pub fn write_mask(path: &Path, mask: &SamplingMask) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC_MASK)?;
    write_u32(&mut w, mask.rows() as u32)?;
    write_u32(&mut w, mask.cols() as u32)?;
    let mut byte = 0u8;
    let mut nbits = 0;
    for &kept in mask.kept() {
        byte = (byte << 1) | kept as u8;
        nbits += 1;
        if nbits == 8 {
            w.write_all(&[byte])?;
            byte = 0;
            nbits = 0;
        }
    }
    if nbits > 0 {
        w.write_all(&[byte << (8 - nbits)])?;
    }
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<SamplingMask> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, MAGIC_MASK)?;
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let n = rows * cols;
    let mut bytes = vec![0u8; n.div_ceil(8)];
    r.read_exact(&mut bytes)?;
    let kept: Vec<bool> = (0..n)
        .map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1 == 1)
        .collect();
    let rate = kept.iter().filter(|&&k| k).count() as f64 / n as f64;
    SamplingMask::from_parts(rows, cols, kept, MaskKind::Mask1, (rate, 1.0, 1.0))
}

/// Measurement file: the generating mask followed by the value vector.
pub fn write_measurement<T: Scalar>(path: &Path, m: &MeasurementVector<T>) -> Result<()> {
    write_mask(path, m.mask())?;
    let mut w = BufWriter::new(File::options().append(true).open(path)?);
    w.write_all(MAGIC_CVEC)?;
    write_u32(&mut w, m.len() as u32)?;
    for z in m.values() {
        w.write_all(&(z.re.as_f64() as f32).to_le_bytes())?;
        w.write_all(&(z.im.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_measurement<T: Scalar>(path: &Path) -> Result<MeasurementVector<T>> {
    let mask = read_mask(path)?;
    let mut r = BufReader::new(File::open(path)?);
    // skip past the mask section
    let mut skip = vec![0u8; 8 + 8 + (mask.rows() * mask.cols()).div_ceil(8)];
    r.read_exact(&mut skip)?;
    read_magic(&mut r, MAGIC_CVEC)?;
    let count = read_u32(&mut r)? as usize;
    if count != mask.popcount() {
        return Err(CoreError::Format(format!(
            "measurement count {count} does not match mask population {}",
            mask.popcount()
        )));
    }
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex::new(T::of_f64(re as f64), T::of_f64(im as f64))
        })
        .collect();
    MeasurementVector::new(values, mask)
}

/// Label map file: magic, rows, cols, one byte per cell.
pub fn write_lmap(path: &Path, labels: &LabelMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC_LMAP)?;
    write_u32(&mut w, labels.rows() as u32)?;
    write_u32(&mut w, labels.cols() as u32)?;
    let bytes: Vec<u8> = labels.as_slice().iter().map(|&l| l as u8).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_lmap(path: &Path) -> Result<LabelMap> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, MAGIC_LMAP)?;
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let mut bytes = vec![0u8; rows * cols];
    r.read_exact(&mut bytes)?;
    let labels = bytes
        .into_iter()
        .map(Label::from_u8)
        .collect::<Result<Vec<_>>>()?;
    LabelMap::new(rows, cols, labels)
}

/// Magnitude scaling for PGM export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PgmScale {
    /// Linear map of [0, max] onto the pixel range.
    Linear,
    /// dB map of [max - range_db, max] onto the pixel range.
    Db { range_db: f64 },
}

/// Default dynamic range for dB exports.
pub const DEFAULT_DB_RANGE: f64 = 40.0;

/// Write the magnitude image as a binary PGM (P5), 8- or 16-bit.
pub fn write_pgm_magnitude<T: Scalar>(
    path: &Path,
    img: &ComplexImage<T>,
    scale: PgmScale,
    sixteen_bit: bool,
) -> Result<()> {
    let mags: Vec<f64> = img.magnitudes().iter().map(|m| m.as_f64()).collect();
    let peak = mags.iter().cloned().fold(0.0f64, f64::max);
    let maxval: u32 = if sixteen_bit { 65535 } else { 255 };
    let normalized = |m: f64| -> f64 {
        if peak <= 0.0 {
            return 0.0;
        }
        match scale {
            PgmScale::Linear => m / peak,
            PgmScale::Db { range_db } => {
                let db = 20.0 * (m / peak).max(1e-300).log10();
                ((db + range_db) / range_db).clamp(0.0, 1.0)
            }
        }
    };
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n{}\n", img.cols(), img.rows(), maxval)?;
    for &m in &mags {
        let v = (normalized(m) * maxval as f64).round() as u32;
        if sixteen_bit {
            w.write_all(&(v.min(65535) as u16).to_be_bytes())?;
        } else {
            w.write_all(&[v.min(255) as u8])?;
        }
    }
    Ok(())
}

/// Write a label map as an 8-bit PGM: shadow 0, background 128, target 255.
pub fn write_pgm_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", labels.cols(), labels.rows())?;
    let bytes: Vec<u8> = labels
        .as_slice()
        .iter()
        .map(|&l| match l {
            Label::Shadow => 0u8,
            Label::Background => 128,
            Label::Target => 255,
        })
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{default_scene_spec, synth_scene};
    use crate::model::{make_mask3, measurement_forward};
    use num_complex::Complex64;

    fn tmpdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "tarim-io-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn cimg_roundtrip() {
        let dir = tmpdir();
        let spec = default_scene_spec(16, 24, 3);
        let (img, _) = synth_scene::<f64>(&spec).unwrap();
        let p = dir.join("a.cimg");
        write_cimg(&p, &img).unwrap();
        let back = read_cimg::<f64>(&p).unwrap();
        assert_eq!(back.rows(), 16);
        assert_eq!(back.cols(), 24);
        // stored as f32: roundtrip to f32 precision
        for (a, b) in img.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).norm() < 1e-6 * (1.0 + a.norm()));
        }
        // exact for f32 sources
        let img32 = read_cimg::<f32>(&p).unwrap();
        write_cimg(&dir.join("b.cimg"), &img32).unwrap();
        let again = read_cimg::<f32>(&dir.join("b.cimg")).unwrap();
        assert_eq!(img32.as_slice(), again.as_slice());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tmpdir();
        let p = dir.join("bad.cimg");
        std::fs::write(&p, b"NOPE0001aaaaaaaaaaaaaaaa").unwrap();
        assert!(matches!(read_cimg::<f64>(&p), Err(CoreError::Format(_))));
    }

    #[test]
    fn mask_roundtrip_preserves_cells() {
        let dir = tmpdir();
        let mask = make_mask3(20, 30, 0.6, 0.4, 9).unwrap();
        let p = dir.join("m.mask");
        write_mask(&p, &mask).unwrap();
        let back = read_mask(&p).unwrap();
        assert_eq!(back.rows(), 20);
        assert_eq!(back.cols(), 30);
        assert_eq!(back.kept(), mask.kept());
    }

    #[test]
    fn measurement_roundtrip() {
        let dir = tmpdir();
        let spec = default_scene_spec(16, 16, 5);
        let (img, _) = synth_scene::<f64>(&spec).unwrap();
        let mask = crate::model::make_mask1(16, 16, 0.5, 2).unwrap();
        let m = measurement_forward(&img, &mask).unwrap();
        let p = dir.join("m.meas");
        write_measurement(&p, &m).unwrap();
        let back = read_measurement::<f64>(&p).unwrap();
        assert_eq!(back.len(), m.len());
        assert_eq!(back.mask().kept(), mask.kept());
        for (a, b) in m.values().iter().zip(back.values()) {
            assert!((a - b).norm() < 1e-6 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn lmap_roundtrip() {
        let dir = tmpdir();
        let spec = default_scene_spec(16, 16, 7);
        let (_, labels) = synth_scene::<f64>(&spec).unwrap();
        let p = dir.join("l.lmap");
        write_lmap(&p, &labels).unwrap();
        let back = read_lmap(&p).unwrap();
        assert_eq!(back.as_slice(), labels.as_slice());
    }

    #[test]
    fn pgm_headers_and_sizes() {
        let dir = tmpdir();
        let img = ComplexImage::new(
            2,
            3,
            vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.5, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.25, 0.0),
                Complex64::new(0.1, 0.0),
                Complex64::new(2.0, 0.0),
            ],
        )
        .unwrap();
        let p8 = dir.join("a.pgm");
        write_pgm_magnitude(&p8, &img, PgmScale::Linear, false).unwrap();
        let bytes = std::fs::read(&p8).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 6);
        // peak maps to 255, zero to 0
        assert_eq!(bytes[header.len() + 5], 255);
        assert_eq!(bytes[header.len() + 2], 0);

        let p16 = dir.join("b.pgm");
        write_pgm_magnitude(
            &p16,
            &img,
            PgmScale::Db {
                range_db: DEFAULT_DB_RANGE,
            },
            true,
        )
        .unwrap();
        let bytes16 = std::fs::read(&p16).unwrap();
        let header16 = b"P5\n3 2\n65535\n";
        assert_eq!(&bytes16[..header16.len()], header16);
        assert_eq!(bytes16.len(), header16.len() + 12);
    }

    #[test]
    fn pgm_label_encoding() {
        let dir = tmpdir();
        let labels =
            LabelMap::new(1, 3, vec![Label::Shadow, Label::Background, Label::Target]).unwrap();
        let p = dir.join("l.pgm");
        write_pgm_labels(&p, &labels).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let n = bytes.len();
        assert_eq!(&bytes[n - 3..], &[0u8, 128, 255]);
    }
}
