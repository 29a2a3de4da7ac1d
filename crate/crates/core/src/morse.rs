//! International Morse code for the letters A-Z.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MorseSymbol {
    Dot,
    Dash,
}

use MorseSymbol::{Dash as L, Dot as S};

// ITU-R M.1677-1, letters only.
const TABLE: [&[MorseSymbol]; 26] = [
    &[S, L],       // A
    &[L, S, S, S], // B
    &[L, S, L, S], // C
    &[L, S, S],    // D
    &[S],          // E
    &[S, S, L, S], // F
    &[L, L, S],    // G
    &[S, S, S, S], // H
    &[S, S],       // I
    &[S, L, L, L], // J
    &[L, S, L],    // K
    &[S, L, S, S], // L
    &[L, L],       // M
    &[L, S],       // N
    &[L, L, L],    // O
    &[S, L, L, S], // P
    &[L, L, S, L], // Q
    &[S, L, S],    // R
    &[S, S, S],    // S
    &[L],          // T
    &[S, S, L],    // U
    &[S, S, S, L], // V
    &[S, L, L],    // W
    &[L, S, S, L], // X
    &[L, S, L, L], // Y
    &[L, L, S, S], // Z
];

pub const NUM_LETTERS: usize = 26;

/// Dot/dash code of one uppercase letter.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MorseSequence {
    letter: char,
    symbols: &'static [MorseSymbol],
}

impl MorseSequence {
    pub fn letter(&self) -> char {
        self.letter
    }

    pub fn symbols(&self) -> &[MorseSymbol] {
        self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Class index 0..26 of the letter.
    pub fn class(&self) -> usize {
        letter_class(self.letter).expect("sequence letters are A-Z")
    }
}

impl fmt::Display for MorseSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in self.symbols {
            f.write_str(match s {
                MorseSymbol::Dot => ".",
                MorseSymbol::Dash => "-",
            })?;
        }
        Ok(())
    }
}

/// Case-insensitive letter lookup.
pub fn encode_letter(letter: char) -> Result<MorseSequence> {
    let class = letter_class(letter).ok_or(Error::NonLetterInput(letter))?;
    Ok(MorseSequence { letter: class_letter(class), symbols: TABLE[class] })
}

pub fn decode_sequence(symbols: &[MorseSymbol]) -> Result<char> {
    TABLE
        .iter()
        .position(|code| *code == symbols)
        .map(class_letter)
        .ok_or_else(|| Error::UnknownCode(symbols.iter().map(|s| if *s == S { '.' } else { '-' }).collect()))
}

/// `A` -> 0 ... `Z` -> 25, case-insensitive.
pub fn letter_class(letter: char) -> Option<usize> {
    letter.is_ascii_alphabetic().then(|| (letter.to_ascii_uppercase() as u8 - b'A') as usize)
}

pub fn class_letter(class: usize) -> char {
    assert!(class < NUM_LETTERS, "class {class} out of range");
    (b'A' + class as u8) as char
}

pub fn alphabet() -> impl Iterator<Item = MorseSequence> {
    (0..NUM_LETTERS).map(|c| encode_letter(class_letter(c)).expect("A-Z encode"))
}
