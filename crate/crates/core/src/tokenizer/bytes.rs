//! Reversible byte ↔ printable-character mapping for byte-level BPE.
//!
//! Printable Latin-1 bytes map to themselves; the remaining 68 bytes are
//! shifted into `U+0100..`, so no token string ever contains whitespace or a
//! control character. A plain space becomes `Ġ`.

use std::sync::OnceLock;

struct Tables {
    to_char: [char; 256],
    to_byte: std::collections::HashMap<char, u8>,
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let printable = |b: u32| {
            (u32::from(b'!')..=u32::from(b'~')).contains(&b)
                || (0xA1..=0xAC).contains(&b)
                || (0xAE..=0xFF).contains(&b)
        };
        let mut to_char = ['\0'; 256];
        let mut shifted = 0u32;
        for b in 0..256u32 {
            let code = if printable(b) {
                b
            } else {
                shifted += 1;
                255 + shifted
            };
            to_char[b as usize] = char::from_u32(code).expect("valid scalar");
        }
        let to_byte = to_char
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect();
        Tables { to_char, to_byte }
    })
}

pub fn byte_to_char(b: u8) -> char {
    tables().to_char[b as usize]
}

pub fn encode_bytes(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| byte_to_char(b)).collect()
}

/// Inverse of [`encode_bytes`]; `None` if any char is outside the mapping.
pub fn decode_token(token: &str) -> Option<Vec<u8>> {
    let map = &tables().to_byte;
    token.chars().map(|c| map.get(&c).copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mapping_is_a_bijection() {
        let mut seen = std::collections::HashSet::new();
        for b in 0..=255u8 {
            let c = byte_to_char(b);
            assert!(seen.insert(c));
            assert!(!c.is_whitespace() && !c.is_control(), "byte {b:#x} -> {c:?}");
            assert_eq!(decode_token(&c.to_string()), Some(vec![b]));
        }
        assert_eq!(byte_to_char(b' '), 'Ġ');
        assert_eq!(byte_to_char(b'\n'), 'Ċ');
        assert_eq!(byte_to_char(b'a'), 'a');
    }
}
