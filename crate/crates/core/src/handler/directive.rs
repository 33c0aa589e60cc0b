//! Action grammar inside assistant text: `@@tool <name> <json-args>@@`
//! and `@@finish <answer>@@`. The first directive in the text wins.

use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    Tool {
        name: String,
        args: Value,
    },
    Finish(String),
    /// Directive-shaped text that could not be parsed.
    Invalid(String),
}

pub fn parse_directive(text: &str) -> Option<Directive> {
    let start = text.find("@@")?;
    let rest = &text[start + 2..];
    let end = rest.find("@@")?;
    let body = &rest[..end];
    if body.contains('\n') {
        return Some(Directive::Invalid("directive spans lines".into()));
    }
    if let Some(answer) = body.strip_prefix("finish") {
        if answer.is_empty() || answer.starts_with(' ') {
            return Some(Directive::Finish(answer.trim().to_string()));
        }
    }
    if let Some(spec) = body.strip_prefix("tool ") {
        let spec = spec.trim_start();
        let (name, args) = spec.split_once(char::is_whitespace).unwrap_or((spec, ""));
        if name.is_empty() {
            return Some(Directive::Invalid("tool name missing".into()));
        }
        let args = args.trim();
        let args = if args.is_empty() {
            Value::Object(Default::default())
        } else {
            match serde_json::from_str(args) {
                Ok(v) => v,
                Err(e) => return Some(Directive::Invalid(format!("tool args: {e}"))),
            }
        };
        return Some(Directive::Tool { name: name.to_string(), args });
    }
    None
}

pub fn tool(name: &str, args: &Value) -> String {
    format!("@@tool {name} {args}@@")
}

pub fn finish(answer: &str) -> String {
    format!("@@finish {answer}@@")
}
