//! Classic pcap file reading and writing.
//!
//! Reads all four standard magics (microsecond/nanosecond resolution in
//! either byte order) and normalizes timestamps to microseconds. Writes
//! little-endian microsecond files (magic 0xa1b2c3d4, version 2.4,
//! link type 1) readable by any standard consumer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use pktlm_core::dissect::RawPacket;
use thiserror::Error;

pub const MAGIC_USEC: u32 = 0xa1b2_c3d4;
pub const MAGIC_NSEC: u32 = 0xa1b2_3c4d;
const LINKTYPE_ETHERNET: u32 = 1;
const SNAPLEN: u32 = 65535;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("pcap: {0}")]
    Io(#[from] std::io::Error),
    #[error("pcap: truncated global header")]
    ShortHeader,
    #[error("pcap: unknown magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("pcap: truncated record header at index {index}")]
    TruncatedHeader { index: usize },
    #[error("pcap: record {index} claims {claimed} bytes but only {remaining} remain")]
    TruncatedRecord { index: usize, claimed: usize, remaining: usize },
    #[error("pcap: record {index} original length {orig} below captured length {cap}")]
    BadLengths { index: usize, orig: u32, cap: u32 },
    #[error("pcap: packet {index} exceeds the 65535-byte frame limit")]
    Oversize { index: usize },
}

struct ByteOrderExt {
    swapped: bool,
    nanosecond: bool,
}

fn parse_magic(magic_le: u32) -> Option<ByteOrderExt> {
    match magic_le {
        MAGIC_USEC => Some(ByteOrderExt { swapped: false, nanosecond: false }),
        MAGIC_NSEC => Some(ByteOrderExt { swapped: false, nanosecond: true }),
        0xd4c3_b2a1 => Some(ByteOrderExt { swapped: true, nanosecond: false }),
        0x4d3c_b2a1 => Some(ByteOrderExt { swapped: true, nanosecond: true }),
        _ => None,
    }
}

fn read_u32(buf: &[u8], swapped: bool) -> u32 {
    let b: [u8; 4] = buf.try_into().unwrap();
    if swapped {
        u32::from_be_bytes(b)
    } else {
        u32::from_le_bytes(b)
    }
}

/// Parse pcap bytes into packets. Exposed for in-memory tests; file access
/// goes through [`read_pcap`].
pub fn parse_pcap_bytes(data: &[u8]) -> Result<Vec<RawPacket>, PcapError> {
    if data.len() < 24 {
        return Err(PcapError::ShortHeader);
    }
    let magic = u32::from_le_bytes(data[0..4].try_into().unwrap());
    let order = parse_magic(magic).ok_or(PcapError::BadMagic(magic))?;
    let mut packets = Vec::new();
    let mut off = 24usize;
    let mut index = 0usize;
    while off < data.len() {
        if data.len() - off < 16 {
            return Err(PcapError::TruncatedHeader { index });
        }
        let ts_sec = read_u32(&data[off..off + 4], order.swapped);
        let ts_frac = read_u32(&data[off + 4..off + 8], order.swapped);
        let incl_len = read_u32(&data[off + 8..off + 12], order.swapped) as usize;
        let orig_len = read_u32(&data[off + 12..off + 16], order.swapped);
        off += 16;
        if incl_len > data.len() - off {
            return Err(PcapError::TruncatedRecord {
                index,
                claimed: incl_len,
                remaining: data.len() - off,
            });
        }
        if orig_len < incl_len as u32 {
            return Err(PcapError::BadLengths { index, orig: orig_len, cap: incl_len as u32 });
        }
        let ts_usec = if order.nanosecond { ts_frac / 1000 } else { ts_frac };
        packets.push(RawPacket {
            ts_sec: ts_sec as u64,
            ts_usec,
            bytes: data[off..off + incl_len].to_vec(),
            original_length: orig_len,
        });
        off += incl_len;
        index += 1;
    }
    Ok(packets)
}

/// Read a pcap file; one packet per record, order preserved, timestamps
/// normalized to microseconds.
pub fn read_pcap(path: impl AsRef<Path>) -> Result<Vec<RawPacket>, PcapError> {
    let mut data = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut data)?;
    parse_pcap_bytes(&data)
}

/// Serialize packets to pcap bytes (little-endian, microsecond magic).
pub fn pcap_bytes(packets: &[RawPacket]) -> Result<Vec<u8>, PcapError> {
    let mut out = Vec::with_capacity(24 + packets.iter().map(|p| 16 + p.bytes.len()).sum::<usize>());
    out.extend_from_slice(&MAGIC_USEC.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&0i32.to_le_bytes()); // thiszone
    out.extend_from_slice(&0u32.to_le_bytes()); // sigfigs
    out.extend_from_slice(&SNAPLEN.to_le_bytes());
    out.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
    for (index, p) in packets.iter().enumerate() {
        if p.bytes.len() > 65535 {
            return Err(PcapError::Oversize { index });
        }
        out.extend_from_slice(&(p.ts_sec as u32).to_le_bytes());
        out.extend_from_slice(&p.ts_usec.to_le_bytes());
        out.extend_from_slice(&(p.bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&p.original_length.to_le_bytes());
        out.extend_from_slice(&p.bytes);
    }
    Ok(out)
}

/// Write packets to a pcap file; returns the byte count written.
pub fn write_pcap(packets: &[RawPacket], path: impl AsRef<Path>) -> Result<u64, PcapError> {
    let bytes = pcap_bytes(packets)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(bytes.len() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent byte-level writer used as the read oracle: a file
    /// assembled by hand, big-endian variant included.
    fn hand_written_file(nanosecond: bool, swapped: bool) -> Vec<u8> {
        let magic: u32 = match (swapped, nanosecond) {
            (false, false) => 0xa1b2c3d4,
            (false, true) => 0xa1b23c4d,
            (true, false) => 0xd4c3b2a1,
            (true, true) => 0x4d3cb2a1,
        };
        let put32 = |out: &mut Vec<u8>, v: u32| {
            if swapped {
                out.extend_from_slice(&v.to_be_bytes());
            } else {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        let put16 = |out: &mut Vec<u8>, v: u16| {
            if swapped {
                out.extend_from_slice(&v.to_be_bytes());
            } else {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        let mut out = Vec::new();
        out.extend_from_slice(&magic.to_le_bytes());
        put16(&mut out, 2);
        put16(&mut out, 4);
        put32(&mut out, 0);
        put32(&mut out, 0);
        put32(&mut out, 65535);
        put32(&mut out, 1);
        // three records of lengths 1, 2, 3
        for (i, len) in [(0u32, 1usize), (1, 2), (2, 3)] {
            put32(&mut out, 100 + i);
            put32(&mut out, if nanosecond { 5000 } else { 5 });
            put32(&mut out, len as u32);
            put32(&mut out, len as u32 + 10);
            out.extend(std::iter::repeat(0xabu8).take(len));
        }
        out
    }

    #[test]
    fn empty_file_is_empty_list() {
        let bytes = pcap_bytes(&[]).unwrap();
        assert_eq!(bytes.len(), 24);
        assert!(parse_pcap_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn header_plus_one_packet_size_arithmetic() {
        let p = RawPacket::new(0, 0, vec![0u8; 60]);
        let bytes = pcap_bytes(&[p]).unwrap();
        assert_eq!(bytes.len(), 24 + 16 + 60);
    }

    #[test]
    fn reads_all_four_magics() {
        for nanosecond in [false, true] {
            for swapped in [false, true] {
                let file = hand_written_file(nanosecond, swapped);
                let pkts = parse_pcap_bytes(&file).unwrap();
                assert_eq!(pkts.len(), 3, "ns={} swapped={}", nanosecond, swapped);
                for (i, p) in pkts.iter().enumerate() {
                    assert_eq!(p.ts_sec, 100 + i as u64);
                    assert_eq!(p.ts_usec, 5); // ns variant divides by 1000
                    assert_eq!(p.bytes.len(), i + 1);
                    assert_eq!(p.original_length as usize, i + 11);
                }
            }
        }
    }

    #[test]
    fn truncated_record_errors_with_index() {
        let mut file = hand_written_file(false, false);
        // claim more bytes than remain for record 0
        file[24 + 8..24 + 12].copy_from_slice(&1000u32.to_le_bytes());
        match parse_pcap_bytes(&file) {
            Err(PcapError::TruncatedRecord { index: 0, .. }) => {}
            other => panic!("unexpected: {:?}", other),
        }
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let mut file = hand_written_file(false, false);
        file[0] = 0x00;
        assert!(matches!(parse_pcap_bytes(&file), Err(PcapError::BadMagic(_))));
    }

    #[test]
    fn file_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pcap");
        let packets = vec![
            RawPacket::new(1000, 250, vec![1, 2, 3]),
            RawPacket::new(1000, 500, vec![4; 80]),
        ];
        let n = write_pcap(&packets, &path).unwrap();
        assert_eq!(n, 24 + 16 + 3 + 16 + 80);
        let back = read_pcap(&path).unwrap();
        assert_eq!(back, packets);
    }

    #[test]
    fn oversize_packet_rejected() {
        let p = RawPacket::new(0, 0, vec![0u8; 70000]);
        assert!(matches!(pcap_bytes(&[p]), Err(PcapError::Oversize { index: 0 })));
    }
}
