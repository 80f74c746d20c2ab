//! WFDB header parsing and format-212 signal decoding.
//!
//! Only single-segment records whose signals are stored in format 212 are
//! accepted; that covers the MIT-BIH family. Format 212 packs two
//! 12-bit two's-complement samples into three bytes:
//!
//! ```text
//! b0 b1 b2  ->  s0 = ((b1 & 0x0F) << 8) | b0
//!               s1 = ((b1 & 0xF0) << 4) | b2
//! ```
//!
//! with each value sign-extended from 12 bits. Samples of an `n_sig`-channel
//! record are interleaved frame by frame.

use crate::{EcgRecord, Error, Result};

/// Parsed `.hea` content for a single-segment record.
#[derive(Debug, Clone)]
pub struct WfdbHeader {
    pub record_name: String,
    pub n_sig: usize,
    pub fs: f64,
    /// Samples per signal; 0 when the header leaves it unspecified.
    pub n_samples: usize,
    pub signals: Vec<SignalSpec>,
}

#[derive(Debug, Clone)]
pub struct SignalSpec {
    pub file_name: String,
    pub format: u32,
    /// ADC units per millivolt.
    pub gain: f64,
    /// ADC value corresponding to 0 mV.
    pub baseline: i32,
    pub adc_res: u32,
    pub adc_zero: i32,
    /// Trailing free-text field, conventionally the lead name.
    pub description: Option<String>,
}

/// Which signal of a multi-channel record to keep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelSelect {
    Index(usize),
    /// First signal whose description contains the given lead label
    /// (case-insensitive); falls back to channel 0 when none matches.
    Lead(String),
}

impl Default for ChannelSelect {
    fn default() -> Self {
        ChannelSelect::Lead("II".to_string())
    }
}

impl WfdbHeader {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));

        let record_line = lines
            .next()
            .ok_or_else(|| Error::Parse("empty header".into()))?;
        let mut toks = record_line.split_whitespace();
        let name_field = toks
            .next()
            .ok_or_else(|| Error::Parse("missing record name".into()))?;
        if name_field.contains('/') {
            return Err(Error::Parse(format!(
                "multi-segment record '{name_field}' not supported"
            )));
        }
        let n_sig: usize = toks
            .next()
            .ok_or_else(|| Error::Parse("missing signal count".into()))?
            .parse()
            .map_err(|_| Error::Parse("bad signal count".into()))?;
        // fs may carry a counter-frequency suffix ("360/360"); keep the first part.
        let fs = match toks.next() {
            Some(f) => f
                .split('/')
                .next()
                .unwrap_or(f)
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad sampling rate '{f}'")))?,
            None => 250.0, // WFDB default
        };
        if fs <= 0.0 {
            return Err(Error::Parse(format!("non-positive sampling rate {fs}")));
        }
        let n_samples: usize = match toks.next() {
            Some(t) => t
                .parse()
                .map_err(|_| Error::Parse(format!("bad sample count '{t}'")))?,
            None => 0,
        };

        let mut signals = Vec::with_capacity(n_sig);
        for _ in 0..n_sig {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("missing signal specification line".into()))?;
            signals.push(parse_signal_line(line)?);
        }

        Ok(WfdbHeader {
            record_name: name_field.to_string(),
            n_sig,
            fs,
            n_samples,
            signals,
        })
    }

    fn pick_channel(&self, select: &ChannelSelect) -> Result<usize> {
        match select {
            ChannelSelect::Index(i) => {
                if *i >= self.n_sig {
                    Err(Error::ChannelOutOfRange {
                        channel: *i,
                        n_sig: self.n_sig,
                    })
                } else {
                    Ok(*i)
                }
            }
            ChannelSelect::Lead(lead) => {
                let want = lead.to_ascii_lowercase();
                Ok(self
                    .signals
                    .iter()
                    .position(|s| {
                        s.description
                            .as_deref()
                            .map(|d| d.to_ascii_lowercase().contains(&want))
                            .unwrap_or(false)
                    })
                    .unwrap_or(0))
            }
        }
    }
}

fn parse_signal_line(line: &str) -> Result<SignalSpec> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() < 2 {
        return Err(Error::Parse(format!("bad signal line '{line}'")));
    }
    let file_name = toks[0].to_string();
    // Format may carry a samples-per-frame multiplier ("212x2"); reject those.
    let fmt_tok = toks[1];
    if fmt_tok.contains('x') || fmt_tok.contains(':') || fmt_tok.contains('+') {
        return Err(Error::Parse(format!(
            "unsupported format modifier in '{fmt_tok}'"
        )));
    }
    let format: u32 = fmt_tok
        .parse()
        .map_err(|_| Error::Parse(format!("bad format code '{fmt_tok}'")))?;

    // gain token: "200", "200(1024)", "200/mV", "200(1024)/mV"
    let mut gain = 200.0;
    let mut paren_baseline: Option<i32> = None;
    if let Some(tok) = toks.get(2) {
        let no_units = tok.split('/').next().unwrap_or(tok);
        let (g, b) = match no_units.find('(') {
            Some(open) => {
                let close = no_units
                    .find(')')
                    .ok_or_else(|| Error::Parse(format!("unbalanced '(' in '{tok}'")))?;
                let b: i32 = no_units[open + 1..close]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad baseline in '{tok}'")))?;
                (&no_units[..open], Some(b))
            }
            None => (no_units, None),
        };
        gain = g
            .parse()
            .map_err(|_| Error::Parse(format!("bad gain '{tok}'")))?;
        paren_baseline = b;
    }
    let adc_res: u32 = toks.get(3).and_then(|t| t.parse().ok()).unwrap_or(12);
    let adc_zero: i32 = toks.get(4).and_then(|t| t.parse().ok()).unwrap_or(0);
    // toks[5] init_value, toks[6] checksum, toks[7] block_size are ignored;
    // anything past them is the description.
    let description = if toks.len() > 8 {
        Some(toks[8..].join(" "))
    } else {
        None
    };

    Ok(SignalSpec {
        file_name,
        format,
        gain,
        baseline: paren_baseline.unwrap_or(adc_zero),
        adc_res,
        adc_zero,
        description,
    })
}

/// Decode a format-212 byte stream into raw ADC integers.
fn decode_212(bytes: &[u8], n_values: usize) -> Result<Vec<i32>> {
    let need_bytes = (n_values * 3).div_ceil(2);
    if bytes.len() < need_bytes {
        return Err(Error::Truncated {
            expected: need_bytes,
            got: bytes.len(),
        });
    }
    let mut out = Vec::with_capacity(n_values);
    for chunk in bytes.chunks(3) {
        if out.len() >= n_values {
            break;
        }
        let b0 = chunk[0] as i32;
        let b1 = *chunk.get(1).unwrap_or(&0) as i32;
        let b2 = *chunk.get(2).unwrap_or(&0) as i32;
        out.push(sign_extend_12(((b1 & 0x0F) << 8) | b0));
        if out.len() < n_values {
            out.push(sign_extend_12(((b1 & 0xF0) << 4) | b2));
        }
    }
    Ok(out)
}

fn sign_extend_12(v: i32) -> i32 {
    if v & 0x800 != 0 {
        v - 0x1000
    } else {
        v
    }
}

/// Read one channel of a WFDB format-212 record and convert it to millivolts
/// via `(adc - baseline) / gain`.
pub fn read_wfdb(header_text: &str, dat_bytes: &[u8], select: ChannelSelect) -> Result<EcgRecord> {
    let header = WfdbHeader::parse(header_text)?;
    if header.n_sig == 0 {
        return Err(Error::EmptyInput("record declares zero signals".into()));
    }
    let channel = header.pick_channel(&select)?;
    let spec = &header.signals[channel];
    if spec.format != 212 {
        return Err(Error::UnsupportedFormat(spec.format));
    }
    if spec.gain == 0.0 {
        return Err(Error::ZeroGain);
    }

    let n_per_signal = if header.n_samples > 0 {
        header.n_samples
    } else {
        // Infer from the dat size: 2 values per 3 bytes, n_sig values per frame.
        (bytes_to_values(dat_bytes.len())) / header.n_sig
    };
    if n_per_signal == 0 {
        return Err(Error::EmptyInput(format!(
            "record {} has no samples",
            header.record_name
        )));
    }
    let total = n_per_signal * header.n_sig;
    let adc = decode_212(dat_bytes, total)?;

    let samples: Vec<f64> = adc
        .iter()
        .skip(channel)
        .step_by(header.n_sig)
        .map(|&v| (v - spec.baseline) as f64 / spec.gain)
        .collect();

    let fs = header.fs.round() as u32;
    let mut rec = EcgRecord::new(samples, fs, header.record_name.clone())?;
    if let Some(d) = &spec.description {
        rec.lead = d.clone();
    }
    Ok(rec)
}

fn bytes_to_values(n_bytes: usize) -> usize {
    (n_bytes / 3) * 2 + if n_bytes % 3 >= 2 { 1 } else { 0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent bit-layout encoder used as the oracle for decode tests.
    pub(super) fn encode_212(values: &[i32]) -> Vec<u8> {
        let mut out = Vec::with_capacity(values.len().div_ceil(2) * 3);
        for pair in values.chunks(2) {
            let a = (pair[0] & 0xFFF) as u32;
            let b = (*pair.get(1).unwrap_or(&0) & 0xFFF) as u32;
            out.push((a & 0xFF) as u8);
            out.push(((a >> 8) as u8 & 0x0F) | (((b >> 8) as u8 & 0x0F) << 4));
            out.push((b & 0xFF) as u8);
        }
        out
    }

    const HEADER: &str = "r1 1 250 4\nr1.dat 212 200 12 0 0 0 0 II\n";

    #[test]
    fn zero_packing_decodes_to_zero_mv() {
        let rec = read_wfdb("r1 1 250 2\nr1.dat 212 200 12 0 0 0 0 II\n", &[0, 0, 0], ChannelSelect::Index(0)).unwrap();
        assert_eq!(rec.samples, vec![0.0, 0.0]);
    }

    #[test]
    fn known_pair_round_trips() {
        let bytes = encode_212(&[100, -200, 30, -5]);
        let rec = read_wfdb(HEADER, &bytes, ChannelSelect::Index(0)).unwrap();
        let adc: Vec<i32> = rec.samples.iter().map(|v| (v * 200.0).round() as i32).collect();
        assert_eq!(adc, vec![100, -200, 30, -5]);
    }

    #[test]
    fn fs_is_taken_from_header() {
        let hdr = "m1 1 125 2\nm1.dat 212 200 12 0 0 0 0 II\n";
        let rec = read_wfdb(hdr, &encode_212(&[1, 2]), ChannelSelect::Index(0)).unwrap();
        assert_eq!(rec.fs, 125);
    }

    #[test]
    fn gain_and_baseline_convert_to_mv() {
        let hdr = "r1 1 250 2\nr1.dat 212 100(50) 12 0 0 0 0 V5\n";
        let rec = read_wfdb(hdr, &encode_212(&[150, 50]), ChannelSelect::Index(0)).unwrap();
        assert_eq!(rec.samples, vec![1.0, 0.0]);
        assert_eq!(rec.lead, "V5");
    }

    #[test]
    fn lead_selection_prefers_matching_description() {
        let hdr = "r2 2 250 2\nr2.dat 212 200 12 0 0 0 0 V5\nr2.dat 212 200 12 0 0 0 0 MLII\n";
        // Frames interleave channels: ch0=7, ch1=9, ch0=8, ch1=10.
        let bytes = encode_212(&[7, 9, 8, 10]);
        let rec = read_wfdb(hdr, &bytes, ChannelSelect::default()).unwrap();
        assert_eq!(rec.lead, "MLII");
        assert_eq!(rec.samples, vec![9.0 / 200.0, 10.0 / 200.0]);
    }

    #[test]
    fn truncated_dat_is_an_error() {
        let e = read_wfdb(HEADER, &[0, 0, 0], ChannelSelect::Index(0));
        assert!(matches!(e, Err(Error::Truncated { .. })));
    }

    #[test]
    fn non_212_format_is_rejected() {
        let hdr = "r1 1 250 2\nr1.dat 16 200 12 0 0 0 0 II\n";
        let e = read_wfdb(hdr, &[0; 4], ChannelSelect::Index(0));
        assert!(matches!(e, Err(Error::UnsupportedFormat(16))));
    }

    #[test]
    fn zero_gain_is_rejected() {
        let hdr = "r1 1 250 2\nr1.dat 212 0 12 0 0 0 0 II\n";
        let e = read_wfdb(hdr, &[0, 0, 0], ChannelSelect::Index(0));
        assert!(matches!(e, Err(Error::ZeroGain)));
    }

    #[test]
    fn channel_out_of_range_is_rejected() {
        let e = read_wfdb(HEADER, &[0, 0, 0], ChannelSelect::Index(3));
        assert!(matches!(e, Err(Error::ChannelOutOfRange { .. })));
    }

    proptest! {
        /// encode -> decode is the identity for every 12-bit two's-complement pair.
        #[test]
        fn encode_decode_identity(a in -2048i32..2048, b in -2048i32..2048) {
            let bytes = encode_212(&[a, b]);
            let decoded = decode_212(&bytes, 2).unwrap();
            prop_assert_eq!(decoded, vec![a, b]);
        }

        #[test]
        fn encode_decode_identity_long(values in prop::collection::vec(-2048i32..2048, 1..64)) {
            let bytes = encode_212(&values);
            let decoded = decode_212(&bytes, values.len()).unwrap();
            prop_assert_eq!(decoded, values);
        }
    }
}
