use quick_xml::events::Event;
use quick_xml::Reader;

/// Parses the page as XML and returns the concatenated text of its
/// `.email` div.
pub fn email_text(html: &str) -> String {
    let mut reader = Reader::from_str(html);
    let (mut depth, mut inside, mut text) = (0usize, None, String::new());
    loop {
        match reader.read_event().expect("well-formed page") {
            Event::Start(e) => {
                depth += 1;
                let is_email = e.attributes().flatten().any(|a| a.key.as_ref() == "class" && a.value == "email");
                if is_email {
                    inside = Some(depth);
                }
            }
            Event::End(_) => {
                if inside == Some(depth) {
                    inside = None;
                }
                depth -= 1;
            }
            Event::Text(t) if inside.is_some() => text.push_str(&t.xml10_content()),
            Event::GeneralRef(r) if inside.is_some() => {
                text.push_str(&quick_xml::escape::unescape(&format!("&{};", r.into_inner())).unwrap());
            }
            Event::Eof => break,
            _ => {}
        }
    }
    assert_eq!(depth, 0);
    text
}
