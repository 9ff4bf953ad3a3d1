use serde::{Deserialize, Serialize};

const REWRITE_MARKER: &str = "rewritten as:";
const RESPONSE_MARKER: &str = "response:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub rewrite: String,
    pub pseudo_response: String,
}

/// A generator output that could not be parsed. The raw text is kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unparseable {
    pub reason: String,
    pub raw_text: String,
}

fn find_ci(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    // ASCII lowercasing keeps byte offsets aligned with the original text.
    haystack.to_ascii_lowercase()[from..].find(needle).map(|p| p + from)
}

/// Extracts the rewrite (after "rewritten as:", up to "Response:") and the
/// pseudo-response (after "Response:"). Markers match case-insensitively.
pub fn parse_output(raw: &str) -> Result<ParsedOutput, Unparseable> {
    let fail = |reason: &str| Unparseable { reason: reason.into(), raw_text: raw.to_owned() };
    let start =
        find_ci(raw, REWRITE_MARKER, 0).ok_or_else(|| fail("missing \"rewritten as:\" marker"))? + REWRITE_MARKER.len();
    let mid = find_ci(raw, RESPONSE_MARKER, start).ok_or_else(|| fail("missing \"Response:\" marker"))?;
    let rewrite = raw[start..mid].trim();
    if rewrite.is_empty() {
        return Err(fail("empty rewrite"));
    }
    Ok(ParsedOutput {
        rewrite: rewrite.to_owned(),
        pseudo_response: raw[mid + RESPONSE_MARKER.len()..].trim().to_owned(),
    })
}

/// Formats a (reason, rewrite, response) triple in the generator output layout.
pub fn format_output(reason: &str, rewrite: &str, response: &str) -> String {
    format!("Rewrite: {reason} So the question should be rewritten as: {rewrite}\nResponse: {response}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_reference_layout() {
        let raw =
            "Rewrite: reason. So the question should be rewritten as: Who made the dime?\nResponse: John R. Sinnock.";
        let p = parse_output(raw).unwrap();
        assert_eq!(p.rewrite, "Who made the dime?");
        assert_eq!(p.pseudo_response, "John R. Sinnock.");
    }

    #[test]
    fn gibberish_is_unparseable() {
        let e = parse_output("gibberish").unwrap_err();
        assert_eq!(e.raw_text, "gibberish");
    }

    #[test]
    fn empty_response_is_kept() {
        let p = parse_output("... rewritten as: where is zorvak?\nResponse:   ").unwrap();
        assert_eq!(p.rewrite, "where is zorvak?");
        assert_eq!(p.pseudo_response, "");
    }

    #[test]
    fn markers_are_case_insensitive() {
        let p = parse_output("REWRITTEN AS: a b\nRESPONSE: c").unwrap();
        assert_eq!((p.rewrite.as_str(), p.pseudo_response.as_str()), ("a b", "c"));
    }

    #[test]
    fn response_marker_before_rewrite_is_ignored() {
        assert!(parse_output("Response: x. rewritten as: y").is_err());
        assert!(parse_output("rewritten as:  \nResponse: x").is_err());
    }

    #[test]
    fn non_ascii_text_survives() {
        let p = parse_output("Ärger, rewritten as: Qui a créé la pièce ?\nResponse: Ça dépend.").unwrap();
        assert_eq!(p.rewrite, "Qui a créé la pièce ?");
        assert_eq!(p.pseudo_response, "Ça dépend.");
    }

    proptest! {
        #[test]
        fn format_then_parse_is_identity(
            rewrite in "[A-Za-z0-9 ?,.']{0,40}[A-Za-z0-9?]",
            response in "([A-Za-z0-9?,.'][A-Za-z0-9 ?,.']{0,60}[A-Za-z0-9.])?",
        ) {
            let rewrite = rewrite.trim().to_string();
            prop_assume!(!rewrite.is_empty());
            prop_assume!(!rewrite.to_ascii_lowercase().contains("response:"));
            let raw = format_output("Some reason.", &rewrite, &response);
            let p = parse_output(&raw).unwrap();
            prop_assert_eq!(p.rewrite, rewrite);
            prop_assert_eq!(p.pseudo_response, response);
        }
    }
}
