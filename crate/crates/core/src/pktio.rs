//! Packet corpus input/output.
//!
//! Three input encodings: hex text (one packet per line, `#` comments),
//! raw binary with 2-byte big-endian length prefixes, and classic pcap
//! (microsecond timestamps, either byte order; the nanosecond variant is
//! rejected with a pointed message).

use std::io::{BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

const PCAP_MAGIC_BE: u32 = 0xA1B2_C3D4;
const PCAP_MAGIC_LE: u32 = 0xD4C3_B2A1;
const PCAP_NSEC_BE: u32 = 0xA1B2_3C4D;
const PCAP_NSEC_LE: u32 = 0x4D3C_B2A1;
/// Sanity bound on a single captured record.
const MAX_RECORD_BYTES: u32 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketFormat {
    Hex,
    Raw,
    Pcap,
}

impl FromStr for PacketFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hex" => Ok(PacketFormat::Hex),
            "raw" => Ok(PacketFormat::Raw),
            "pcap" => Ok(PacketFormat::Pcap),
            other => Err(format!("unknown packet format `{other}` (hex, raw, pcap)")),
        }
    }
}

impl std::fmt::Display for PacketFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PacketFormat::Hex => "hex",
            PacketFormat::Raw => "raw",
            PacketFormat::Pcap => "pcap",
        })
    }
}

#[derive(Debug, Error)]
pub enum PktIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: odd number of hex digits")]
    OddHexDigits { line: usize },
    #[error("line {line}: invalid hex character `{ch}`")]
    BadHexChar { line: usize, ch: char },
    #[error("record {index}: stream ends inside a length-prefixed packet")]
    TruncatedRaw { index: usize },
    #[error("file too short for a pcap global header")]
    PcapHeaderTooShort,
    #[error("unrecognized capture magic 0x{magic:08X}; expected classic pcap 0xA1B2C3D4")]
    BadMagic { magic: u32 },
    #[error("nanosecond pcap (magic 0xA1B23C4D) is not supported; convert the capture to classic microsecond pcap")]
    NanosecondPcap,
    #[error("pcap record {index} is truncated")]
    TruncatedPcapRecord { index: usize },
    #[error("pcap record {index} claims {len} bytes, above the {MAX_RECORD_BYTES}-byte cap")]
    OversizedPcapRecord { index: usize, len: u32 },
}

pub fn read_packets(
    reader: &mut dyn BufRead,
    format: PacketFormat,
) -> Result<Vec<Vec<u8>>, PktIoError> {
    match format {
        PacketFormat::Hex => read_hex(reader),
        PacketFormat::Raw => {
            let mut data = Vec::new();
            reader.read_to_end(&mut data)?;
            read_raw(&data)
        }
        PacketFormat::Pcap => {
            let mut data = Vec::new();
            reader.read_to_end(&mut data)?;
            read_pcap(&data)
        }
    }
}

fn read_hex(reader: &mut dyn BufRead) -> Result<Vec<Vec<u8>>, PktIoError> {
    let mut packets = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = lineno_trim(&line);
        if line.is_empty() {
            continue;
        }
        let digits: Vec<char> = line.chars().filter(|c| !c.is_whitespace()).collect();
        if let Some(&ch) = digits.iter().find(|c| !c.is_ascii_hexdigit()) {
            return Err(PktIoError::BadHexChar {
                line: lineno + 1,
                ch,
            });
        }
        if !digits.len().is_multiple_of(2) {
            return Err(PktIoError::OddHexDigits { line: lineno + 1 });
        }
        let bytes = digits
            .chunks(2)
            .map(|pair| {
                let hi = pair[0].to_digit(16).unwrap() as u8;
                let lo = pair[1].to_digit(16).unwrap() as u8;
                (hi << 4) | lo
            })
            .collect();
        packets.push(bytes);
    }
    Ok(packets)
}

fn lineno_trim(line: &str) -> &str {
    let body = match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    };
    body.trim()
}

fn read_raw(data: &[u8]) -> Result<Vec<Vec<u8>>, PktIoError> {
    let mut packets = Vec::new();
    let mut pos = 0usize;
    let mut index = 0usize;
    while pos < data.len() {
        if pos + 2 > data.len() {
            return Err(PktIoError::TruncatedRaw { index });
        }
        let len = u16::from_be_bytes([data[pos], data[pos + 1]]) as usize;
        pos += 2;
        if pos + len > data.len() {
            return Err(PktIoError::TruncatedRaw { index });
        }
        packets.push(data[pos..pos + len].to_vec());
        pos += len;
        index += 1;
    }
    Ok(packets)
}

fn read_pcap(data: &[u8]) -> Result<Vec<Vec<u8>>, PktIoError> {
    if data.len() < 24 {
        return Err(PktIoError::PcapHeaderTooShort);
    }
    let magic = u32::from_be_bytes([data[0], data[1], data[2], data[3]]);
    let big_endian = match magic {
        PCAP_MAGIC_BE => true,
        PCAP_MAGIC_LE => false,
        PCAP_NSEC_BE | PCAP_NSEC_LE => return Err(PktIoError::NanosecondPcap),
        other => return Err(PktIoError::BadMagic { magic: other }),
    };
    let read_u32 = |buf: &[u8]| {
        let b = [buf[0], buf[1], buf[2], buf[3]];
        if big_endian {
            u32::from_be_bytes(b)
        } else {
            u32::from_le_bytes(b)
        }
    };
    let mut packets = Vec::new();
    let mut pos = 24usize;
    let mut index = 0usize;
    while pos < data.len() {
        if pos + 16 > data.len() {
            return Err(PktIoError::TruncatedPcapRecord { index });
        }
        let incl_len = read_u32(&data[pos + 8..pos + 12]);
        if incl_len > MAX_RECORD_BYTES {
            return Err(PktIoError::OversizedPcapRecord {
                index,
                len: incl_len,
            });
        }
        pos += 16;
        let end = pos + incl_len as usize;
        if end > data.len() {
            return Err(PktIoError::TruncatedPcapRecord { index });
        }
        packets.push(data[pos..end].to_vec());
        pos = end;
        index += 1;
    }
    Ok(packets)
}

/// Writes packets as lowercase hex, one per line.
pub fn write_hex(packets: &[Vec<u8>], writer: &mut dyn Write) -> Result<(), PktIoError> {
    for p in packets {
        for b in p {
            write!(writer, "{b:02x}")?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::BufReader;

    #[test]
    fn hex_round_trip() {
        let packets = vec![vec![0xDE, 0xAD], vec![0x00], vec![0x01, 0x02, 0x03]];
        let mut buf = Vec::new();
        write_hex(&packets, &mut buf).unwrap();
        let mut reader = BufReader::new(buf.as_slice());
        assert_eq!(
            read_packets(&mut reader, PacketFormat::Hex).unwrap(),
            packets
        );
    }

    #[test]
    fn hex_comments_and_blank_lines() {
        let text = "# corpus\n\ndead beef  # trailing comment\n  0102\n";
        let mut reader = BufReader::new(text.as_bytes());
        let packets = read_packets(&mut reader, PacketFormat::Hex).unwrap();
        assert_eq!(packets, vec![vec![0xDE, 0xAD, 0xBE, 0xEF], vec![1, 2]]);
    }

    #[test]
    fn hex_errors_carry_line_numbers() {
        let mut reader = BufReader::new("00\nzz\n".as_bytes());
        match read_packets(&mut reader, PacketFormat::Hex) {
            Err(PktIoError::BadHexChar { line: 2, ch: 'z' }) => {}
            other => panic!("unexpected: {other:?}"),
        }
        let mut reader = BufReader::new("012\n".as_bytes());
        assert!(matches!(
            read_packets(&mut reader, PacketFormat::Hex),
            Err(PktIoError::OddHexDigits { line: 1 })
        ));
    }

    #[test]
    fn raw_framing() {
        let mut data = Vec::new();
        data.extend_from_slice(&[0, 3, 9, 8, 7]);
        data.extend_from_slice(&[0, 1, 0xAA]);
        let mut reader = BufReader::new(data.as_slice());
        let packets = read_packets(&mut reader, PacketFormat::Raw).unwrap();
        assert_eq!(packets, vec![vec![9, 8, 7], vec![0xAA]]);

        let mut reader = BufReader::new(&[0u8, 5, 1, 2][..]);
        assert!(matches!(
            read_packets(&mut reader, PacketFormat::Raw),
            Err(PktIoError::TruncatedRaw { index: 0 })
        ));
    }

    fn pcap_bytes(big_endian: bool, magic: u32, packets: &[&[u8]]) -> Vec<u8> {
        let put32 = |out: &mut Vec<u8>, v: u32| {
            if big_endian {
                out.extend_from_slice(&v.to_be_bytes());
            } else {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        let mut out = Vec::new();
        out.extend_from_slice(&magic.to_be_bytes());
        if big_endian {
            out.extend_from_slice(&[0, 2, 0, 4]); // version 2.4
        } else {
            out.extend_from_slice(&[2, 0, 4, 0]);
        }
        put32(&mut out, 0); // thiszone
        put32(&mut out, 0); // sigfigs
        put32(&mut out, 65535); // snaplen
        put32(&mut out, 1); // linktype
        for (i, p) in packets.iter().enumerate() {
            put32(&mut out, i as u32); // ts_sec
            put32(&mut out, 0); // ts_usec
            put32(&mut out, p.len() as u32);
            put32(&mut out, p.len() as u32);
            out.extend_from_slice(p);
        }
        out
    }

    #[test]
    fn pcap_both_endiannesses() {
        for be in [true, false] {
            let magic = if be { PCAP_MAGIC_BE } else { PCAP_MAGIC_LE };
            let data = pcap_bytes(be, magic, &[&[1, 2, 3], &[4, 5]]);
            let mut reader = BufReader::new(data.as_slice());
            let packets = read_packets(&mut reader, PacketFormat::Pcap).unwrap();
            assert_eq!(packets, vec![vec![1, 2, 3], vec![4, 5]]);
        }
    }

    #[test]
    fn pcap_nanosecond_rejected_with_clear_message() {
        let data = pcap_bytes(true, PCAP_NSEC_BE, &[&[1]]);
        let mut reader = BufReader::new(data.as_slice());
        let err = read_packets(&mut reader, PacketFormat::Pcap).unwrap_err();
        assert!(matches!(err, PktIoError::NanosecondPcap));
        assert!(err.to_string().contains("nanosecond"));
    }

    #[test]
    fn pcap_bad_magic_and_truncation() {
        let mut reader = BufReader::new(&[0u8; 24][..]);
        assert!(matches!(
            read_packets(&mut reader, PacketFormat::Pcap),
            Err(PktIoError::BadMagic { .. })
        ));

        let mut data = pcap_bytes(true, PCAP_MAGIC_BE, &[&[1, 2, 3]]);
        data.truncate(data.len() - 1);
        let mut reader = BufReader::new(data.as_slice());
        assert!(matches!(
            read_packets(&mut reader, PacketFormat::Pcap),
            Err(PktIoError::TruncatedPcapRecord { index: 0 })
        ));
    }
}
