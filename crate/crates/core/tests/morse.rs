use std::collections::HashSet;

use nanet_core::morse::{alphabet, decode_sequence, encode_letter, MorseSymbol, NUM_LETTERS};
use nanet_core::Error;
use proptest::prelude::*;

const ITU: [&str; 26] = [
    ".-", "-...", "-.-.", "-..", ".", "..-.", "--.", "....", "..", ".---", "-.-", ".-..", "--", "-.", "---", ".--.",
    "--.-", ".-.", "...", "-", "..-", "...-", ".--", "-..-", "-.--", "--..",
];

fn parse(code: &str) -> Vec<MorseSymbol> {
    code.chars().map(|c| if c == '.' { MorseSymbol::Dot } else { MorseSymbol::Dash }).collect()
}

#[test]
fn matches_itu_table() {
    for (i, code) in ITU.iter().enumerate() {
        let letter = (b'A' + i as u8) as char;
        let seq = encode_letter(letter).unwrap();
        assert_eq!(seq.to_string(), *code, "{letter}");
        assert_eq!(seq.symbols(), parse(code).as_slice());
        assert_eq!(seq.class(), i);
    }
}

#[test]
fn round_trip_every_letter() {
    for seq in alphabet() {
        assert_eq!(decode_sequence(seq.symbols()).unwrap(), seq.letter());
    }
    assert_eq!(alphabet().count(), NUM_LETTERS);
}

#[test]
fn codes_are_pairwise_distinct() {
    let codes: HashSet<String> = alphabet().map(|s| s.to_string()).collect();
    assert_eq!(codes.len(), 26);
}

#[test]
fn rejects_non_letters_and_unknown_codes() {
    assert_eq!(encode_letter('3').unwrap_err(), Error::NonLetterInput('3'));
    assert_eq!(encode_letter('é').unwrap_err(), Error::NonLetterInput('é'));
    assert!(matches!(decode_sequence(&parse("......")), Err(Error::UnknownCode(c)) if c == "......"));
    assert!(matches!(decode_sequence(&[]), Err(Error::UnknownCode(_))));
}

proptest! {
    #[test]
    fn lowercase_encodes_like_uppercase(c in proptest::char::range('a', 'z')) {
        let lower = encode_letter(c).unwrap();
        let upper = encode_letter(c.to_ascii_uppercase()).unwrap();
        prop_assert_eq!(lower.symbols(), upper.symbols());
        prop_assert_eq!(decode_sequence(lower.symbols()).unwrap(), c.to_ascii_uppercase());
    }

    #[test]
    fn decode_inverts_encode_on_any_symbol_string(bits in proptest::collection::vec(any::<bool>(), 1..6)) {
        let symbols: Vec<MorseSymbol> = bits.iter().map(|&b| if b { MorseSymbol::Dash } else { MorseSymbol::Dot }).collect();
        if let Ok(letter) = decode_sequence(&symbols) {
            let seq = encode_letter(letter).unwrap();
            prop_assert_eq!(seq.symbols(), symbols.as_slice());
        }
    }
}
