//! Shared helpers for the two XML documents: escaping on the way out and a strict
//! element walker on the way in.

use roxmltree::{Document, Node};

/// Characters allowed in an XML 1.0 document.
pub fn is_xml_char(c: char) -> bool {
    matches!(c, '\u{9}' | '\u{A}' | '\u{D}' | '\u{20}'..='\u{D7FF}' | '\u{E000}'..='\u{FFFD}' | '\u{10000}'..='\u{10FFFF}')
}

pub fn is_xml_text(s: &str) -> bool {
    s.chars().all(is_xml_char)
}

/// Escapes element text. `\r` is written as a character reference so parsers do not fold it.
pub fn escape_text(out: &mut String, s: &str) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
}

/// Escapes an attribute value, protecting whitespace from attribute normalization.
pub fn escape_attr(out: &mut String, s: &str) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\t' => out.push_str("&#9;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
}

pub fn text_element(out: &mut String, name: &str, text: &str) {
    out.push('<');
    out.push_str(name);
    out.push('>');
    escape_text(out, text);
    out.push_str("</");
    out.push_str(name);
    out.push('>');
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Position {
    pub line: u32,
    pub column: u32,
}

pub fn position(doc: &Document<'_>, node: Node<'_, '_>) -> Position {
    let pos = doc.text_pos_at(node.range().start);
    Position {
        line: pos.row,
        column: pos.col,
    }
}

/// Child elements of `node`; `Err` carries the first stray non-whitespace text node.
pub fn element_children<'a, 'input>(node: Node<'a, 'input>) -> Result<Vec<Node<'a, 'input>>, Node<'a, 'input>> {
    let mut out = Vec::new();
    for child in node.children() {
        if child.is_element() {
            out.push(child);
        } else if child.is_text() && !child.text().unwrap_or("").chars().all(|c| c.is_ascii_whitespace()) {
            return Err(child);
        }
    }
    Ok(out)
}

/// Concatenated text content of a text-only element, or `None` if it has element children.
pub fn text_only(node: Node<'_, '_>) -> Option<String> {
    let mut out = String::new();
    for child in node.children() {
        if child.is_element() {
            return None;
        }
        if child.is_text() {
            out.push_str(child.text().unwrap_or(""));
        }
    }
    Some(out)
}
