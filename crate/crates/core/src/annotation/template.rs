//! Line-oriented prompt templates.
//!
//! * `{name}` is replaced by a scalar value. Substituted text is never
//!   rescanned.
//! * A line starting with `{?flag}` is kept, minus the marker, only when the
//!   flag is set.
//! * A line consisting solely of `{@list}` expands to one line per item.
//!
//! Braces that do not enclose a lowercase identifier are literal.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("line {line}: no value for `{name}`")]
    Unbound { line: usize, name: String },
}

#[derive(Debug, Clone, Default)]
pub struct Vars {
    scalars: BTreeMap<&'static str, String>,
    flags: BTreeMap<&'static str, bool>,
    lists: BTreeMap<&'static str, Vec<String>>,
}

impl Vars {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: &'static str, value: impl Into<String>) -> &mut Self {
        self.scalars.insert(name, value.into());
        self
    }

    pub fn flag(&mut self, name: &'static str, on: bool) -> &mut Self {
        self.flags.insert(name, on);
        self
    }

    pub fn list(&mut self, name: &'static str, items: Vec<String>) -> &mut Self {
        self.lists.insert(name, items);
        self
    }
}

fn ident_at(s: &str) -> Option<&str> {
    let end = s.find('}')?;
    let name = &s[..end];
    (!name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')).then_some(name)
}

fn substitute(
    line: &str,
    vars: &Vars,
    lineno: usize,
    out: &mut String,
) -> Result<(), TemplateError> {
    let mut rest = line;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match ident_at(after) {
            Some(name) => {
                let value = vars
                    .scalars
                    .get(name)
                    .ok_or_else(|| TemplateError::Unbound {
                        line: lineno,
                        name: name.to_string(),
                    })?;
                out.push_str(value);
                rest = &after[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(())
}

/// Renders `template`. A single trailing newline of the template is dropped.
pub fn render(template: &str, vars: &Vars) -> Result<String, TemplateError> {
    let body = template.strip_suffix('\n').unwrap_or(template);
    let mut lines: Vec<String> = Vec::new();
    for (i, raw) in body.split('\n').enumerate() {
        let lineno = i + 1;
        let mut line = raw;
        if let Some(rest) = line.strip_prefix("{?") {
            if let Some(name) = ident_at(rest) {
                let on = *vars.flags.get(name).ok_or_else(|| TemplateError::Unbound {
                    line: lineno,
                    name: name.to_string(),
                })?;
                if !on {
                    continue;
                }
                line = &rest[name.len() + 1..];
            }
        }
        if let Some(name) = line.strip_prefix("{@").and_then(|r| r.strip_suffix('}')) {
            let items = vars.lists.get(name).ok_or_else(|| TemplateError::Unbound {
                line: lineno,
                name: name.to_string(),
            })?;
            lines.extend(items.iter().cloned());
            continue;
        }
        let mut out = String::with_capacity(line.len());
        substitute(line, vars, lineno, &mut out)?;
        lines.push(out);
    }
    Ok(lines.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalars_flags_lists() {
        let mut v = Vars::new();
        v.set("who", "{who}")
            .flag("shown", true)
            .flag("hidden", false);
        v.list("items", vec!["- a".into(), "- b".into()]);
        let out = render(
            "hi {who}\n{?shown}yes\n{?hidden}no\n{@items}\n{\"json\": {x}}\n",
            &v,
        );
        assert!(matches!(out, Err(TemplateError::Unbound { line: 5, .. })));
        v.set("x", "1");
        let out = render(
            "hi {who}\n{?shown}yes\n{?hidden}no\n{@items}\n{\"json\": {x}}\n",
            &v,
        )
        .unwrap();
        assert_eq!(out, "hi {who}\nyes\n- a\n- b\n{\"json\": 1}");
    }

    #[test]
    fn empty_list_removes_line() {
        let mut v = Vars::new();
        v.list("xs", Vec::new());
        assert_eq!(render("a\n{@xs}\nb", &v).unwrap(), "a\nb");
    }
}
