//! Line classification and enumerated-list recovery.

use std::sync::LazyLock;

use regex::Regex;

static NUMBERED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^(\s*)(?:\*\*)?(?:(?:sub-?claim|atomic fact|atomic component|fact|component|part|question|q)\s*#?\s*)?(?:(\d{1,3})(?:\*\*)?(?:[.)](?:\s+|$)|:\s*|\s+(?:\*\*)?-\s+|$)|\((\d{1,3})\)(?:\*\*)?(?:[.:]?\s+|$))(.*)$",
    )
    .unwrap()
});
static BULLET: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\s*)[-*•+]\s+(.*)$").unwrap());
static HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*(?:#{1,6}\s|(?:\*\*)?\s*step\s*\d+)").unwrap());
static BOLD_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\*\*[^*]+\*\*:?\s*$").unwrap());
// Keys that belong to a list item even after a blank line.
static ITEM_KEY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^\s*(?:[-*]\s*)?(?:\*\*)?(?:evidence|attribution|quote|label|classification|status|entailment|judge?ment|source|document|claim|answer|comparison|match|reason|explanation)\b[^:\n]{0,25}:",
    )
    .unwrap()
});

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Marker {
    Number(u32),
    Bullet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum LineKind {
    Blank,
    Header,
    Item { marker: Marker, body: String },
    Text,
}

#[derive(Debug, Clone)]
pub(crate) struct Line<'a> {
    pub text: &'a str,
    pub indent: usize,
    pub kind: LineKind,
}

fn indent_of(text: &str) -> usize {
    text.chars()
        .take_while(|c| c.is_whitespace())
        .map(|c| if c == '\t' { 4 } else { 1 })
        .sum()
}

pub(crate) fn classify_line(text: &str) -> Line<'_> {
    let indent = indent_of(text);
    let kind = if text.trim().is_empty() {
        LineKind::Blank
    } else if HEADER.is_match(text) {
        LineKind::Header
    } else if let Some(c) = NUMBERED.captures(text) {
        let number = c
            .get(2)
            .or_else(|| c.get(3))
            .and_then(|m| m.as_str().parse().ok())
            .unwrap_or(0);
        LineKind::Item {
            marker: Marker::Number(number),
            body: c.get(4).map_or("", |m| m.as_str()).trim().to_string(),
        }
    } else if BOLD_LINE.is_match(text) {
        LineKind::Header
    } else if let Some(c) = BULLET.captures(text) {
        LineKind::Item {
            marker: Marker::Bullet,
            body: c.get(2).map_or("", |m| m.as_str()).trim().to_string(),
        }
    } else if text.trim_end().ends_with(':') && text.trim().chars().count() <= 80 && !KEYED_VALUE.is_match(text) {
        LineKind::Header
    } else {
        LineKind::Text
    };
    Line { text, indent, kind }
}

// "Key: value" lines end in ':' only when the value is empty; those are headers.
static KEYED_VALUE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r":\s*\S.*:\s*$").unwrap());

/// Classifies every line of `text`. A numbered line ending in ':' that
/// introduces a list starting at 1 ("2. Answers based on the document:")
/// is a heading, not an item.
pub(crate) fn classify_lines(text: &str) -> Vec<Line<'_>> {
    let mut lines: Vec<Line<'_>> = text.lines().map(classify_line).collect();
    for i in 0..lines.len() {
        let LineKind::Item { marker: Marker::Number(_), body } = &lines[i].kind else {
            continue;
        };
        if !body.trim_end().trim_end_matches('*').ends_with(':') {
            continue;
        }
        let next = lines[i + 1..].iter().find(|l| l.kind != LineKind::Blank);
        if let Some(Line {
            kind: LineKind::Item { marker: Marker::Number(1), .. },
            ..
        }) = next
        {
            lines[i].kind = LineKind::Header;
        }
    }
    lines
}

/// One enumerated entry: its first line plus continuation lines.
#[derive(Debug, Clone)]
pub(crate) struct ListItem {
    pub number: Option<u32>,
    pub head: String,
    pub continuation: Vec<String>,
}

impl ListItem {
    pub fn block(&self) -> String {
        let mut s = self.head.clone();
        for line in &self.continuation {
            s.push('\n');
            s.push_str(line);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ItemList {
    pub numbered: bool,
    pub indent: usize,
    pub start_line: usize,
    pub items: Vec<ListItem>,
    /// Nearest non-blank, non-item line above the list.
    pub context_line: Option<usize>,
}

impl ItemList {
    fn accepts(&self, marker: Marker, indent: usize) -> bool {
        match marker {
            Marker::Number(n) => {
                let last = self.items.last().and_then(|i| i.number).unwrap_or(0);
                self.numbered && n == last + 1 && indent <= self.indent + 1
            }
            Marker::Bullet => !self.numbered && indent == self.indent,
        }
    }
}

/// Splits `text` into lines and recovers every enumerated list in it.
pub(crate) fn find_lists(lines: &[Line<'_>]) -> Vec<ItemList> {
    let mut lists = Vec::new();
    let mut current: Option<ItemList> = None;
    let mut after_blank = false;
    let mut last_context: Option<usize> = None;

    for (idx, line) in lines.iter().enumerate() {
        match &line.kind {
            LineKind::Blank => {
                after_blank = true;
                continue;
            }
            LineKind::Header => {
                lists.extend(current.take());
                last_context = Some(idx);
            }
            LineKind::Item { marker, body } => {
                let marker = *marker;
                match current.as_mut() {
                    Some(list) if list.accepts(marker, line.indent) => {
                        list.items.push(ListItem {
                            number: number_of(marker),
                            head: body.clone(),
                            continuation: Vec::new(),
                        });
                    }
                    Some(list)
                        if line.indent > list.indent
                            || (!after_blank && list.numbered && marker == Marker::Bullet) =>
                    {
                        push_continuation(list, line.text);
                    }
                    _ => {
                        lists.extend(current.take());
                        current = Some(ItemList {
                            numbered: matches!(marker, Marker::Number(_)),
                            indent: line.indent,
                            start_line: idx,
                            items: vec![ListItem {
                                number: number_of(marker),
                                head: body.clone(),
                                continuation: Vec::new(),
                            }],
                            context_line: last_context,
                        });
                    }
                }
            }
            LineKind::Text => match current.as_mut() {
                Some(list) if !after_blank || line.indent > list.indent || ITEM_KEY.is_match(line.text) => {
                    push_continuation(list, line.text);
                }
                _ => {
                    lists.extend(current.take());
                    last_context = Some(idx);
                }
            },
        }
        after_blank = false;
    }
    lists.extend(current);
    lists
}

fn number_of(marker: Marker) -> Option<u32> {
    match marker {
        Marker::Number(n) => Some(n),
        Marker::Bullet => None,
    }
}

fn push_continuation(list: &mut ItemList, text: &str) {
    if let Some(item) = list.items.last_mut() {
        item.continuation.push(text.trim().to_string());
    }
}
