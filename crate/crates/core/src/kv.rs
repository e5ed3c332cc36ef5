//! Line-oriented `key=value` files with optional `[section]` headers.
//! `#` and `;` start comments.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    /// Empty for entries before the first header.
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().rev().find(|e| e.key == key)
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|_| Error::config(e.line, format!("cannot parse {key}={}", e.value))),
        }
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }
}

pub fn parse(text: &str) -> Result<Vec<Section>> {
    let mut sections = vec![Section {
        name: String::new(),
        line: 0,
        entries: Vec::new(),
    }];
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split(['#', ';']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::config(line, format!("unterminated section header: {content}")))?
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ");
            if name.is_empty() {
                return Err(Error::config(line, "empty section name"));
            }
            sections.push(Section {
                name,
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::config(line, format!("expected key=value, got `{content}`")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::config(line, "empty key"));
        }
        sections.last_mut().expect("non-empty").entries.push(Entry {
            key: key.to_string(),
            value: value.trim().to_string(),
            line,
        });
    }
    if sections[0].entries.is_empty() {
        sections.remove(0);
    }
    Ok(sections)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let s = parse("a=1\n# c\n[net]\nx = 2 ; trailing\n[segment  2]\nlayers=conv:8:3:1, relu\n").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].get("a").unwrap().value, "1");
        assert_eq!(s[1].name, "net");
        assert_eq!(s[1].parse::<u32>("x").unwrap(), Some(2));
        assert_eq!(s[2].name, "segment 2");
        assert_eq!(s[2].get("layers").unwrap().line, 6);
    }

    #[test]
    fn diagnostics_carry_line() {
        match parse("[ok]\nnot a pair\n").unwrap_err() {
            Error::Config { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
        let s = parse("[n]\nk=abc").unwrap();
        assert!(matches!(s[0].parse::<f64>("k"), Err(Error::Config { line: 2, .. })));
    }
}
