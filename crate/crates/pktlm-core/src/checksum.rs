//! Internet ones-complement checksums for IPv4 headers and TCP segments.

/// Ones-complement sum over 16-bit big-endian words, with odd trailing byte
/// padded by zero. Returns the folded 16-bit sum (not yet complemented).
fn ones_complement_sum(chunks: &[&[u8]]) -> u16 {
    let mut sum: u32 = 0;
    let mut carry_byte: Option<u8> = None;
    for chunk in chunks {
        for &b in chunk.iter() {
            match carry_byte.take() {
                None => carry_byte = Some(b),
                Some(hi) => {
                    sum += u32::from(u16::from_be_bytes([hi, b]));
                }
            }
        }
    }
    if let Some(hi) = carry_byte {
        sum += u32::from(u16::from_be_bytes([hi, 0]));
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    sum as u16
}

/// IPv4 header checksum over `header` with its checksum field (bytes 10..12)
/// treated as zero.
pub fn ipv4_header_checksum(header: &[u8]) -> u16 {
    debug_assert!(header.len() >= 20);
    !ones_complement_sum(&[&header[..10], &[0, 0], &header[12..]])
}

/// TCP checksum with the IPv4 pseudo-header. `segment` is the TCP header
/// plus payload; its checksum field (bytes 16..18) is treated as zero.
pub fn tcp_checksum(src: [u8; 4], dst: [u8; 4], segment: &[u8]) -> u16 {
    debug_assert!(segment.len() >= 20);
    let len = segment.len() as u16;
    let pseudo = [
        src[0], src[1], src[2], src[3],
        dst[0], dst[1], dst[2], dst[3],
        0, 6,
        (len >> 8) as u8, (len & 0xff) as u8,
    ];
    !ones_complement_sum(&[&pseudo, &segment[..16], &[0, 0], &segment[18..]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    // Independent oracle: sum all words as u64 then fold once at the end,
    // a different route than the incremental fold above.
    fn oracle_sum(bytes: &[u8]) -> u16 {
        let mut words: Vec<u16> = Vec::new();
        let mut i = 0;
        while i + 1 < bytes.len() {
            words.push(u16::from_be_bytes([bytes[i], bytes[i + 1]]));
            i += 2;
        }
        if bytes.len() % 2 == 1 {
            words.push(u16::from_be_bytes([bytes[bytes.len() - 1], 0]));
        }
        let mut total: u64 = words.iter().map(|&w| w as u64).sum();
        while total >> 16 != 0 {
            total = (total & 0xffff) + (total >> 16);
        }
        total as u16
    }

    #[test]
    fn ipv4_checksum_matches_rfc_worked_example() {
        // Classic worked example: header checksum comes out 0xb861.
        let header: [u8; 20] = [
            0x45, 0x00, 0x00, 0x73, 0x00, 0x00, 0x40, 0x00, 0x40, 0x11, 0x00, 0x00, 0xc0, 0xa8,
            0x00, 0x01, 0xc0, 0xa8, 0x00, 0xc7,
        ];
        assert_eq!(ipv4_header_checksum(&header), 0xb861);
    }

    #[test]
    fn ipv4_checksum_matches_independent_fold() {
        let mut header = [0u8; 20];
        let mut state = 0x12345678u64;
        for b in header.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *b = (state >> 56) as u8;
        }
        header[0] = 0x45;
        let mut zeroed = header;
        zeroed[10] = 0;
        zeroed[11] = 0;
        assert_eq!(ipv4_header_checksum(&header), !oracle_sum(&zeroed));
    }

    #[test]
    fn verifying_a_checksummed_header_yields_zero_sum() {
        let mut header: [u8; 20] = [
            0x45, 0x00, 0x00, 0x28, 0xab, 0xcd, 0x00, 0x00, 0x40, 0x06, 0x00, 0x00, 0x0a, 0x00,
            0x00, 0x01, 0x0a, 0x00, 0x00, 0x02,
        ];
        let c = ipv4_header_checksum(&header);
        header[10] = (c >> 8) as u8;
        header[11] = (c & 0xff) as u8;
        // Sum over a header with a correct checksum is 0xffff.
        assert_eq!(oracle_sum(&header), 0xffff);
    }

    #[test]
    fn tcp_checksum_covers_pseudo_header_and_odd_payload() {
        let mut segment = alloc::vec![0u8; 21]; // 20 header + 1 payload byte
        segment[0] = 0xc3; // sport hi
        segment[1] = 0x50;
        segment[13] = 0x18; // flags PSH|ACK
        segment[20] = 0xab;
        let c = tcp_checksum([10, 0, 0, 1], [10, 0, 0, 2], &segment);
        // Verify by recomputing with the checksum in place: folded sum of
        // pseudo-header + segment must be 0xffff.
        segment[16] = (c >> 8) as u8;
        segment[17] = (c & 0xff) as u8;
        let len = segment.len() as u16;
        let mut all = alloc::vec![
            10, 0, 0, 1, 10, 0, 0, 2, 0, 6, (len >> 8) as u8, (len & 0xff) as u8
        ];
        all.extend_from_slice(&segment);
        assert_eq!(oracle_sum(&all), 0xffff);
    }
}
