//! CSV persistence for fingerprints: one row per trace.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fingerprint::FingerprintVector;

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintRecord {
    pub label: String,
    pub fingerprint: FingerprintVector,
}

fn mask_to_hex(mask: &[bool]) -> String {
    let mut s = String::with_capacity(mask.len().div_ceil(4));
    for chunk in mask.chunks(4) {
        let mut v = 0u8;
        for (i, &b) in chunk.iter().enumerate() {
            if b {
                v |= 1 << (3 - i);
            }
        }
        s.push(char::from_digit(v as u32, 16).unwrap());
    }
    s
}

fn hex_to_mask(hex: &str, n: usize) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(n);
    for c in hex.chars() {
        let v = c.to_digit(16).ok_or_else(|| Error::Data(format!("bad band mask digit {c:?}")))?;
        for i in 0..4 {
            out.push(v & (1 << (3 - i)) != 0);
        }
    }
    if out.len() < n {
        return Err(Error::Data(format!("band mask covers {} of {n} bands", out.len())));
    }
    out.truncate(n);
    Ok(out)
}

pub fn save_fingerprints(path: impl AsRef<Path>, records: &[FingerprintRecord]) -> Result<()> {
    let nb = records.first().map_or(0, |r| r.fingerprint.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..nb).map(|k| format!("band_{k}")));
    header.push("band_mask_hex".into());
    header.push("n_segments".into());
    w.write_record(&header)?;
    for r in records {
        if r.fingerprint.len() != nb {
            return Err(Error::Shape(format!(
                "fingerprint for {} has {} bands, expected {nb}",
                r.label,
                r.fingerprint.len()
            )));
        }
        let mut row = vec![r.label.clone()];
        // 17 significant digits round-trips any f64
        row.extend(r.fingerprint.p.iter().map(|v| format!("{v:.16e}")));
        row.push(mask_to_hex(&r.fingerprint.band_mask));
        row.push(r.fingerprint.n_segments.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_fingerprints(path: impl AsRef<Path>) -> Result<Vec<FingerprintRecord>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::Data(format!("fingerprint file {} not found", path.display())));
    }
    let mut rd = csv::Reader::from_path(path)?;
    let header = rd.headers()?.clone();
    if header.len() < 3 || &header[0] != "label" || &header[header.len() - 1] != "n_segments" {
        return Err(Error::Data(format!("{} is not a fingerprint file", path.display())));
    }
    let nb = header.len() - 3;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != nb + 3 {
            return Err(Error::Data(format!("row has {} fields, expected {}", rec.len(), nb + 3)));
        }
        let p = (0..nb)
            .map(|k| rec[1 + k].parse::<f64>().map_err(|_| Error::Data(format!("bad value {:?}", &rec[1 + k]))))
            .collect::<Result<Vec<_>>>()?;
        let band_mask = hex_to_mask(&rec[nb + 1], nb)?;
        let n_segments = rec[nb + 2].parse().map_err(|_| Error::Data(format!("bad n_segments {:?}", &rec[nb + 2])))?;
        out.push(FingerprintRecord {
            label: rec[0].to_string(),
            fingerprint: FingerprintVector { p, band_mask, n_segments },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mask_hex_examples() {
        assert_eq!(mask_to_hex(&[true, false, false, true, true]), "98");
        assert_eq!(hex_to_mask("98", 5).unwrap(), vec![true, false, false, true, true]);
        assert!(hex_to_mask("9", 5).is_err());
        assert!(hex_to_mask("z", 1).is_err());
    }

    #[test]
    fn header_layout() {
        let rec = FingerprintRecord {
            label: "x".into(),
            fingerprint: FingerprintVector { p: vec![0.5, 0.0], band_mask: vec![true, false], n_segments: 3 },
        };
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("fp.csv");
        save_fingerprints(&f, &[rec]).unwrap();
        let text = std::fs::read_to_string(&f).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "label,band_0,band_1,band_mask_hex,n_segments");
        assert_eq!(lines.next().unwrap(), "x,5.0000000000000000e-1,0.0000000000000000e0,8,3");
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(vals in proptest::collection::vec(0.0f64..1e6, 1..20), bits in any::<u32>(), n in 0usize..9) {
            let mask: Vec<bool> = (0..vals.len()).map(|k| bits >> (k % 32) & 1 == 1).collect();
            let rec = FingerprintRecord {
                label: "room01".into(),
                fingerprint: FingerprintVector { p: vals, band_mask: mask, n_segments: n },
            };
            let dir = tempfile::tempdir().unwrap();
            let f = dir.path().join("fp.csv");
            save_fingerprints(&f, std::slice::from_ref(&rec)).unwrap();
            let back = load_fingerprints(&f).unwrap();
            prop_assert_eq!(back, vec![rec]);
        }
    }
}
