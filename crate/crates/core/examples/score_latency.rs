//! Single-sample inference time for each architecture at a long input.

use std::time::Instant;

use charphish::{Alphabet, EncodedEmail, Label, Model, ModelKind, NetworkSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t = 1500;
    let text = "Dear customer, your account needs attention. ".repeat(40);
    let email = EncodedEmail::new("x", &text, Label::Clean, &Alphabet::default(), t);
    for kind in ModelKind::ALL {
        let model = Model::<f32>::build(&NetworkSpec::preset(kind, t), 0)?;
        let prep = model.prepare()?;
        model.predict_one(&prep, &email)?;
        let n = 20;
        let start = Instant::now();
        for _ in 0..n {
            model.predict_one(&prep, &email)?;
        }
        println!("{kind:<11} {:>7} params  {:.2} ms/sample", model.param_count(), start.elapsed().as_secs_f64() * 1e3 / n as f64);
    }
    Ok(())
}
