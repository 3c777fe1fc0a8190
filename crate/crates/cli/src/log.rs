//! Structured progress lines on stderr.

use std::io::Write;

use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LogFormat {
    Text,
    Json,
}

pub struct Logger {
    format: LogFormat,
}

impl Logger {
    pub fn new(format: LogFormat) -> Self {
        Logger { format }
    }

    pub fn emit(&self, stage: &str, event: &str, fields: &[(&str, Value)]) {
        let line = match self.format {
            LogFormat::Json => {
                let mut obj = Map::new();
                obj.insert("stage".into(), stage.into());
                obj.insert("event".into(), event.into());
                for (k, v) in fields {
                    obj.insert((*k).into(), v.clone());
                }
                Value::Object(obj).to_string()
            }
            LogFormat::Text => {
                let mut s = format!("cdrscope stage={stage} event={event}");
                for (k, v) in fields {
                    match v {
                        Value::String(t) if !t.contains(char::is_whitespace) => s.push_str(&format!(" {k}={t}")),
                        _ => s.push_str(&format!(" {k}={v}")),
                    }
                }
                s
            }
        };
        let _ = writeln!(std::io::stderr().lock(), "{line}");
    }
}
