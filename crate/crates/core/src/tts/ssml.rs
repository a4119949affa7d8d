use super::VoiceSpec;

pub fn xml_escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Single-voice SSML document for `text`.
pub fn build_ssml(text: &str, voice: &VoiceSpec) -> String {
    format!(
        concat!(
            r#"<speak version="1.0" xmlns="http://www.w3.org/2001/10/synthesis" xml:lang="{lang}">"#,
            r#"<voice name="{name}">{body}</voice></speak>"#
        ),
        lang = xml_escape(voice.locale.as_str()),
        name = xml_escape(&voice.speaker_id),
        body = xml_escape(text),
    )
}
