//! Plain-text `key = value` configuration files. `#` starts a comment.

use std::path::Path;

use crate::error::{Error, Result};

pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!("line {}: expected key=value, got `{line}`", lineno + 1))
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse(format!("line {}: empty key", lineno + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    parse_kv(&std::fs::read_to_string(path)?)
}

pub fn render_kv(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub(crate) fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("bad value `{value}` for `{key}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = parse_kv("# header\nlambda = 0.5\n\nalpha=1 # trailing\n").unwrap();
        assert_eq!(
            kv,
            vec![("lambda".into(), "0.5".into()), ("alpha".into(), "1".into())]
        );
        assert!(parse_kv("novalue\n").is_err());
        assert!(parse_kv("=3\n").is_err());
        assert_eq!(parse_kv(&render_kv(&kv)).unwrap(), kv);
    }
}
