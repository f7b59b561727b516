//! Channel file format.
//!
//! A single JSON document:
//!
//! ```json
//! {"version": 1, "K": 2, "N": 4, "count": 3, "layout": "complex-rowmajor",
//!  "encoding": "base64", "data": "..."}
//! ```
//!
//! `data` holds `count` complex `N x K` matrices, each row-major, as
//! interleaved `(re, im)` float64 pairs. With `"encoding": "array"` it is a
//! plain JSON number array; with `"base64"` it is the little-endian bytes.
//! An empty file denotes an empty list.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{realify_matrix, ChannelMatrix, ModelTag};
use crate::error::{Error, Result};

const LAYOUT: &str = "complex-rowmajor";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelFileEncoding {
    #[default]
    Base64,
    Array,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Body {
    Encoded(String),
    Values(Vec<f64>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelFile {
    version: u32,
    #[serde(rename = "K")]
    users: usize,
    #[serde(rename = "N")]
    antennas: usize,
    count: usize,
    layout: String,
    #[serde(default)]
    encoding: ChannelFileEncoding,
    data: Body,
}

/// Serializes channels to the channel-file JSON text.
pub fn write_channels(channels: &[ChannelMatrix], encoding: ChannelFileEncoding) -> Result<String> {
    let Some(first) = channels.first() else {
        return Ok(String::new());
    };
    let (k, n) = (first.users(), first.antennas());
    let mut values = Vec::with_capacity(channels.len() * 2 * n * k);
    for h in channels {
        if h.users() != k || h.antennas() != n {
            return Err(Error::Dimension(format!(
                "mixed channel sizes: {}x{} and {}x{}",
                n,
                k,
                h.antennas(),
                h.users()
            )));
        }
        if !h.is_complex_structured(0.0) {
            return Err(Error::InvalidArgument(
                "channel is not the realification of a complex matrix".into(),
            ));
        }
        let hc = h.to_complex();
        for i in 0..n {
            for j in 0..k {
                values.push(hc[(i, j)].re);
                values.push(hc[(i, j)].im);
            }
        }
    }
    let data = match encoding {
        ChannelFileEncoding::Array => Body::Values(values),
        ChannelFileEncoding::Base64 => {
            let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            Body::Encoded(STANDARD.encode(bytes))
        }
    };
    let file = ChannelFile {
        version: 1,
        users: k,
        antennas: n,
        count: channels.len(),
        layout: LAYOUT.into(),
        encoding,
        data,
    };
    Ok(serde_json::to_string(&file)?)
}

/// Parses channel-file JSON text.
pub fn read_channels(text: &str) -> Result<Vec<ChannelMatrix>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let file: ChannelFile = serde_json::from_str(text)
        .map_err(|e| Error::Format(format!("channel file: {e}")))?;
    if file.version != 1 {
        return Err(Error::Format(format!("unsupported version {}", file.version)));
    }
    if file.layout != LAYOUT {
        return Err(Error::Format(format!("unsupported layout {:?}", file.layout)));
    }
    let values = match (file.encoding, file.data) {
        (ChannelFileEncoding::Array, Body::Values(v)) => v,
        (ChannelFileEncoding::Base64, Body::Encoded(s)) => {
            let bytes = STANDARD
                .decode(s.as_bytes())
                .map_err(|e| Error::Format(format!("base64 body: {e}")))?;
            if bytes.len() % 8 != 0 {
                return Err(Error::Format("base64 body is not a whole number of float64".into()));
            }
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect()
        }
        (enc, _) => {
            return Err(Error::Format(format!("body does not match encoding {enc:?}")));
        }
    };
    let (k, n) = (file.users, file.antennas);
    if file.count > 0 && (k == 0 || n == 0) {
        return Err(Error::Format(format!("invalid dimensions K={k}, N={n}")));
    }
    let per = 2 * n * k;
    if values.len() != per * file.count {
        return Err(Error::Format(format!(
            "expected {} values for {} channels of {}x{}, found {}",
            per * file.count,
            file.count,
            n,
            k,
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("channel file body".into()));
    }
    values
        .chunks_exact(per.max(1))
        .take(file.count)
        .map(|chunk| {
            let hc = nalgebra::DMatrix::from_fn(n, k, |i, j| {
                let at = 2 * (i * k + j);
                nalgebra::Complex::new(chunk[at], chunk[at + 1])
            });
            ChannelMatrix::from_real(realify_matrix(&hc), ModelTag::Imported, 0)
        })
        .collect()
}

pub fn export_channels(
    path: impl AsRef<Path>,
    channels: &[ChannelMatrix],
    encoding: ChannelFileEncoding,
) -> Result<()> {
    let text = write_channels(channels, encoding)?;
    std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn import_channels(path: impl AsRef<Path>) -> Result<Vec<ChannelMatrix>> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    read_channels(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_rayleigh;

    #[test]
    fn single_complex_matrix_becomes_four_by_two() {
        let text = r#"{"version":1,"K":1,"N":2,"count":1,"layout":"complex-rowmajor",
                      "encoding":"array","data":[1.0,2.0,3.0,-4.0]}"#;
        let hs = read_channels(text).unwrap();
        assert_eq!(hs.len(), 1);
        assert_eq!(hs[0].entries().shape(), (4, 2));
        assert_eq!(hs[0].model(), ModelTag::Imported);
        assert_eq!(hs[0].entries()[(1, 0)], 3.0);
        assert_eq!(hs[0].entries()[(3, 0)], -4.0);
        assert_eq!(hs[0].entries()[(1, 1)], 4.0);
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(read_channels("").unwrap().is_empty());
        assert!(read_channels("  \n").unwrap().is_empty());
    }

    #[test]
    fn round_trip_is_bitwise_in_both_encodings() {
        let hs = vec![sample_rayleigh(4, 8, 7).unwrap(), sample_rayleigh(4, 8, 8).unwrap()];
        for enc in [ChannelFileEncoding::Base64, ChannelFileEncoding::Array] {
            let back = read_channels(&write_channels(&hs, enc).unwrap()).unwrap();
            assert_eq!(back.len(), 2);
            for (a, b) in hs.iter().zip(&back) {
                assert!(a.entries().iter().zip(b.entries().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(matches!(read_channels("{not json"), Err(Error::Format(_))));
        let short = r#"{"version":1,"K":1,"N":2,"count":1,"layout":"complex-rowmajor","encoding":"array","data":[1.0]}"#;
        assert!(matches!(read_channels(short), Err(Error::Format(_))));
        let layout = r#"{"version":1,"K":1,"N":1,"count":1,"layout":"real","encoding":"array","data":[1.0,0.0]}"#;
        assert!(read_channels(layout).is_err());
        let nan = r#"{"version":1,"K":1,"N":1,"count":1,"layout":"complex-rowmajor","encoding":"base64","data":"AAAAAAAA+H8AAAAAAAAAAA=="}"#;
        assert!(matches!(read_channels(nan), Err(Error::NonFinite(_))));
    }
}
