//! Save and reload a checkpoint; show that damaged files are rejected.

use charphish::encoder::EncodedEmail;
use charphish::models::CheckpointMeta;
use charphish::{Alphabet, Label, Model, ModelKind, NetworkSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::temp_dir().join("charphish-example.cpnn");
    let model = Model::<f32>::build(&NetworkSpec::preset(ModelKind::CharGru, 128), 1)?;
    let meta = CheckpointMeta { config_digest: "example".into(), epoch: 0, seed: 1, ..CheckpointMeta::default() };
    model.save(&path, &meta)?;
    let (back, meta) = Model::load(&path)?;
    println!("{} bytes, kind {}, digest {}", std::fs::metadata(&path)?.len(), back.kind(), meta.config_digest);

    let email = EncodedEmail::new("x", "hello", Label::Clean, &Alphabet::default(), 128);
    assert_eq!(model.forward(std::slice::from_ref(&email))?, back.forward(std::slice::from_ref(&email))?);
    println!("forward pass identical after reload");

    let mut bytes = std::fs::read(&path)?;
    bytes.truncate(bytes.len() - 8);
    println!("truncated: {}", Model::from_checkpoint_bytes(&bytes).unwrap_err());
    bytes[0] = b'X';
    println!("bad magic: {}", Model::from_checkpoint_bytes(&bytes).unwrap_err());
    Ok(())
}
