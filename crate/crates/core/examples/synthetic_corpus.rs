use charphish::fixtures::{generate, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec::with_samples(4, 200, 42);
    for s in generate(&spec)? {
        println!("[{}] {}  subject {:?}", s.email.label, s.email.id, s.email.subject);
        println!("    {}", s.email.body);
        for m in &s.motifs {
            println!("    motif {:?} at {:?} ({})", m.motif, m.span, if m.phishing { "phishing" } else { "clean" });
        }
    }
    Ok(())
}
