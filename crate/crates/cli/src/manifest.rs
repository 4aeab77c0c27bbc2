//! Provenance manifests: one `key=value` pair per line.

use std::fmt::Display;

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
    outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self { entries: Vec::new(), outputs: Vec::new() };
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn command(&self) -> &str {
        self.get("command").unwrap_or("run")
    }

    /// Set `key`, replacing an earlier value. Newlines in values are
    /// flattened to spaces.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string().replace(['\n', '\r'], " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn add_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k}={v}\n"));
        }
        if !self.outputs.is_empty() {
            out.push_str(&format!("outputs={}\n", self.outputs.join(",")));
        }
        out
    }

    /// Inverse of [`Manifest::render`]; lines without `=` and comments are
    /// skipped.
    pub fn parse(text: &str) -> Vec<(String, String)> {
        text.lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut m = Manifest::new("forward");
        m.set("seed", 7);
        m.set("seed", 8);
        m.set("note", "two\nlines");
        m.add_output("data.ltf");
        let parsed = Manifest::parse(&m.render());
        assert_eq!(parsed[0], ("command".into(), "forward".into()));
        assert!(parsed.contains(&("seed".into(), "8".into())));
        assert!(parsed.contains(&("note".into(), "two lines".into())));
        assert_eq!(parsed.last().unwrap(), &("outputs".into(), "data.ltf".into()));
        assert_eq!(m.command(), "forward");
    }
}
