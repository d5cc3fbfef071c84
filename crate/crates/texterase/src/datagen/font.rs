//! Built-in 5x7 bitmap font covering A-Z, 0-9 and space.
//!
//! Each glyph row is the low 5 bits of a byte, most significant bit
//! leftmost. The font exists so data generation needs no font files.

use ndarray::Array2;

use crate::error::{Error, Result};

pub const GLYPH_WIDTH: usize = 5;
pub const GLYPH_HEIGHT: usize = 7;

/// Inter-glyph spacing in font columns.
const GLYPH_GAP: usize = 1;

#[rustfmt::skip]
const LETTERS: [[u8; 7]; 26] = [
    [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11], // A
    [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E], // B
    [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E], // C
    [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E], // D
    [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F], // E
    [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10], // F
    [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F], // G
    [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11], // H
    [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E], // I
    [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C], // J
    [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11], // K
    [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F], // L
    [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11], // M
    [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11], // N
    [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E], // O
    [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10], // P
    [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D], // Q
    [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11], // R
    [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E], // S
    [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04], // T
    [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E], // U
    [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04], // V
    [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A], // W
    [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11], // X
    [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04], // Y
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F], // Z
];

#[rustfmt::skip]
const DIGITS: [[u8; 7]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E], // 0
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E], // 1
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F], // 2
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E], // 3
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02], // 4
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E], // 5
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E], // 6
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08], // 7
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E], // 8
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C], // 9
];

/// Row bitmap of one character, uppercased; `None` if unsupported.
pub fn glyph_bitmap(ch: char) -> Option<[u8; 7]> {
    let up = ch.to_ascii_uppercase();
    match up {
        'A'..='Z' => Some(LETTERS[up as usize - 'A' as usize]),
        '0'..='9' => Some(DIGITS[up as usize - '0' as usize]),
        ' ' => Some([0; 7]),
        '.' => Some([0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C]),
        ',' => Some([0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08]),
        '-' => Some([0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00]),
        '+' => Some([0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00]),
        ':' => Some([0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00]),
        '/' => Some([0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10]),
        '%' => Some([0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13]),
        '=' => Some([0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00]),
        '(' => Some([0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02]),
        ')' => Some([0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08]),
        _ => None,
    }
}

/// Render a string into a `(7, 5n + gap(n-1))` binary bitmap.
pub fn text_bitmap(text: &str) -> Result<Array2<u8>> {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return Err(Error::Data("cannot render empty text".into()));
    }
    let glyphs: Vec<[u8; 7]> = chars
        .iter()
        .map(|&c| {
            glyph_bitmap(c).ok_or_else(|| Error::Data(format!("unrenderable glyph {c:?}")))
        })
        .collect::<Result<_>>()?;
    let width = chars.len() * GLYPH_WIDTH + (chars.len() - 1) * GLYPH_GAP;
    let mut out = Array2::zeros((GLYPH_HEIGHT, width));
    for (gi, rows) in glyphs.iter().enumerate() {
        let x0 = gi * (GLYPH_WIDTH + GLYPH_GAP);
        for (y, &row) in rows.iter().enumerate() {
            for x in 0..GLYPH_WIDTH {
                if row >> (GLYPH_WIDTH - 1 - x) & 1 == 1 {
                    out[[y, x0 + x]] = 1;
                }
            }
        }
    }
    Ok(out)
}
