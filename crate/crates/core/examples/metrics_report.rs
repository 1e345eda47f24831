use charphish::pipeline::{confusion, Metrics};
use charphish::Label::{Clean, Phishing};

fn main() {
    let c = confusion([(Clean, Clean), (Clean, Phishing), (Phishing, Phishing), (Phishing, Phishing), (Phishing, Clean)]);
    println!("confusion (rows true, cols predicted): {c:?}");
    let m = Metrics::from_confusion(&c).unwrap();
    println!("accuracy {:.4}", m.accuracy);
    for label in [Clean, Phishing] {
        let k = m.class(label);
        println!("{:>9}: precision {:.4} recall {:.4} f1 {:.4} support {}", label.name(), k.precision, k.recall, k.f1, k.support);
    }
    println!("f1 weighted {:.4}, macro {:.4}", m.f1.weighted, m.f1.macro_avg);
}
