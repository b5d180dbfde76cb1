//! Binary weight file, little-endian throughout:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `MODW`                           |
//! | 4      | 4    | format version (u32, currently 1)      |
//! | 8      | 1    | mode (0 magnitude, 1 real-imag)        |
//! | 9      | 3    | reserved, zero                         |
//! | 12     | 4    | n_bands (u32)                          |
//! | 16     | 4    | n_coeffs (u32)                         |
//! | 20     | 8k   | log-parameters (f64), band-major       |
//!
//! In real-imag mode each node stores `re` then `im`.

use std::path::Path;

use super::{ModulationWeights, WeightMode};
use crate::error::{Error, Result};

pub const WEIGHT_FILE_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MODW";
const HEADER_LEN: usize = 20;

pub fn save_weights(w: &ModulationWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * w.params().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&WEIGHT_FILE_VERSION.to_le_bytes());
    buf.push(match w.mode() {
        WeightMode::Magnitude => 0,
        WeightMode::RealImag => 1,
    });
    buf.extend_from_slice(&[0; 3]);
    for dim in [w.n_bands(), w.n_coeffs()] {
        let dim = u32::try_from(dim).map_err(|_| Error::invalid("weight dimensions exceed u32"))?;
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    for p in w.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModulationWeights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |detail: String| Error::Corrupt {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(corrupt("not a modulation weight file".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != WEIGHT_FILE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: WEIGHT_FILE_VERSION,
        });
    }
    let mode = match bytes[8] {
        0 => WeightMode::Magnitude,
        1 => WeightMode::RealImag,
        m => return Err(corrupt(format!("unknown mode byte {m}"))),
    };
    if bytes[9..12] != [0, 0, 0] {
        return Err(corrupt("reserved header bytes are not zero".into()));
    }
    let (n_bands, n_coeffs) = (u32_at(12) as usize, u32_at(16) as usize);
    let n_params = n_bands
        .checked_mul(n_coeffs)
        .and_then(|n| n.checked_mul(mode.params_per_coeff()))
        .ok_or_else(|| corrupt("dimensions overflow".into()))?;
    let expected = n_params
        .checked_mul(8)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| corrupt("dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(corrupt(format!(
            "expected {expected} bytes for {n_bands} x {n_coeffs}, found {}",
            bytes.len()
        )));
    }
    let params = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ModulationWeights::from_params(mode, n_bands, n_coeffs, params)
        .map_err(|e| corrupt(e.to_string()))
}

/// Loads and checks the weights against the expected band and coefficient
/// counts.
pub fn load_weights_for(
    path: impl AsRef<Path>,
    n_bands: usize,
    n_coeffs: usize,
) -> Result<ModulationWeights> {
    let w = load_weights(path)?;
    w.check_dims(n_bands, n_coeffs)?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(mode: WeightMode) -> ModulationWeights {
        let n = 3 * 5 * mode.params_per_coeff();
        let p = (0..n).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        ModulationWeights::from_params(mode, 3, 5, p).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for mode in [WeightMode::Magnitude, WeightMode::RealImag] {
            let w = sample(mode);
            let path = dir.path().join("w.bin");
            save_weights(&w, &path).unwrap();
            let back = load_weights(&path).unwrap();
            assert_eq!(back.mode(), mode);
            assert!(w
                .params()
                .iter()
                .zip(back.params())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn header_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        save_weights(&sample(WeightMode::Magnitude), &path).unwrap();
        assert!(matches!(
            load_weights_for(&path, 4, 5),
            Err(Error::Dimension { .. })
        ));

        let good = std::fs::read(&path).unwrap();
        let mut bad = good.clone();
        bad[4] = 2;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_weights(&path),
            Err(Error::Version { found: 2, .. })
        ));

        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load_weights(&path), Err(Error::Corrupt { .. })));

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_weights(&path), Err(Error::Corrupt { .. })));

        assert!(matches!(
            load_weights(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
