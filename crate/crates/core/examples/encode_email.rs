//! How an email becomes model input.

use charphish::encoder::EncoderConfig;
use charphish::{Alphabet, EncodedEmail, Label};

fn main() {
    let alphabet = Alphabet::default();
    let encoder = EncoderConfig { max_len: 48, include_subject: true };
    let text = encoder.model_text("Invoice", "Pay now: http://x.example, merci bien à vous");
    let email = EncodedEmail::new("demo", &text, Label::Phishing, &alphabet, encoder.max_len);
    println!("text:     {text:?}");
    println!("indices:  {:?}", email.indices);
    println!("length:   {} of {}", email.original_length, encoder.max_len);
    // Characters outside the alphabet share the pad index.
    println!("decoded:  {:?}", alphabet.decode(&email.indices).unwrap());
}
