//! Ordered `key=value` output with a JSON rendering using the same keys.

use serde_json::{Map, Value};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, Value)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num(mut self, key: &str, v: f64) -> Self {
        let value = serde_json::Number::from_f64(v).map_or_else(|| Value::String(format_num(v)), Value::Number);
        self.entries.push((key.to_string(), value));
        self
    }

    pub fn int(mut self, key: &str, v: u64) -> Self {
        self.entries.push((key.to_string(), Value::from(v)));
        self
    }

    pub fn text(mut self, key: &str, v: impl Into<String>) -> Self {
        self.entries.push((key.to_string(), Value::String(v.into())));
        self
    }

    pub fn flag(mut self, key: &str, v: bool) -> Self {
        self.entries.push((key.to_string(), Value::Bool(v)));
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// One `key=value` per line, reals to 4 decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let shown = match v {
                Value::Number(n) if n.is_f64() => format_num(n.as_f64().unwrap_or(f64::NAN)),
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out.push_str(&format!("{k}={shown}\n"));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let map: Map<String, Value> = self.entries.iter().cloned().collect();
        Value::Object(map).to_string()
    }

    pub fn render(&self, json: bool) -> String {
        if json {
            format!("{}\n", self.to_json())
        } else {
            self.to_text()
        }
    }
}

pub fn format_num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.4}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_and_json_share_keys() {
        let r = Report::new().num("gamma1", 5.0 / 9.0).int("k", 10).text("threshold", "always").flag("degenerate", false);
        assert_eq!(r.to_text(), "gamma1=0.5556\nk=10\nthreshold=always\ndegenerate=false\n");
        let v: Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["k"], 10);
        assert!((v["gamma1"].as_f64().unwrap() - 5.0 / 9.0).abs() < 1e-15);
        assert_eq!(v["threshold"], "always");
    }

    #[test]
    fn infinity_survives_both_renderings() {
        let r = Report::new().num("delta", f64::INFINITY);
        assert_eq!(r.to_text(), "delta=inf\n");
        assert_eq!(r.to_json(), r#"{"delta":"inf"}"#);
    }
}
