//! Line-oriented track description files.
//!
//! ```text
//! version 1
//! dim 2
//! halfwidth 0.25
//! guide straight length=16
//! guide arc radius=2 angle=3.141592653589793 turn=left
//! ```

use std::fmt::Write as _;

use thiserror::Error;
use trackbill::track::{GuideSpec, Section, TrackSpec, Turn};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("missing `{0}` directive")]
    Missing(&'static str),
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Line { line, message: message.into() }
}

fn number(line: usize, key: &str, text: &str) -> Result<f64, ParseError> {
    let v: f64 = text.parse().map_err(|_| err(line, format!("`{key}`: `{text}` is not a number")))?;
    if !v.is_finite() {
        return Err(err(line, format!("`{key}` must be finite")));
    }
    Ok(v)
}

fn guide(line: usize, words: &[&str]) -> Result<GuideSpec, ParseError> {
    let Some((&kind, rest)) = words.split_first() else {
        return Err(err(line, "`guide` needs a kind (arc or straight)"));
    };
    let mut pairs: Vec<(&str, &str)> = Vec::new();
    for w in rest {
        let (k, v) = w.split_once('=').ok_or_else(|| err(line, format!("expected key=value, got `{w}`")))?;
        if pairs.iter().any(|(q, _)| *q == k) {
            return Err(err(line, format!("duplicate key `{k}`")));
        }
        pairs.push((k, v));
    }
    let allowed: &[&str] = match kind {
        "arc" => &["radius", "angle", "turn", "roll"],
        "straight" => &["length"],
        other => return Err(err(line, format!("unknown guide kind `{other}`"))),
    };
    if let Some((k, _)) = pairs.iter().find(|(k, _)| !allowed.contains(k)) {
        return Err(err(line, format!("unknown key `{k}` for {kind} guide")));
    }
    let get = |key: &'static str| pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
    let need = |key: &'static str| get(key).ok_or_else(|| err(line, format!("{kind} guide needs `{key}`")));
    Ok(match kind {
        "straight" => GuideSpec::straight(number(line, "length", need("length")?)?),
        _ => {
            let turn = match need("turn")? {
                "left" => Turn::Left,
                "right" => Turn::Right,
                t => return Err(err(line, format!("turn must be left or right, got `{t}`"))),
            };
            let roll = get("roll").map(|r| number(line, "roll", r)).transpose()?.unwrap_or(0.0);
            GuideSpec::arc(number(line, "radius", need("radius")?)?, number(line, "angle", need("angle")?)?, turn).with_roll(roll)
        }
    })
}

/// Parses a track file. Geometric validity is not checked here.
pub fn parse(text: &str) -> Result<TrackSpec, ParseError> {
    let mut version = false;
    let mut dim: Option<(usize, u8)> = None;
    let mut halfwidth: Option<(usize, f64)> = None;
    let mut section: Option<(usize, f64, f64)> = None;
    let mut guides = Vec::new();
    let mut roll_lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let words: Vec<&str> = content.split_whitespace().collect();
        if !version {
            match words.as_slice() {
                ["version", "1"] => {
                    version = true;
                    continue;
                }
                ["version", v] => return Err(err(line, format!("unsupported version `{v}`"))),
                _ => return Err(err(line, "the first directive must be `version 1`")),
            }
        }
        match words[0] {
            "version" => return Err(err(line, "duplicate `version`")),
            "dim" => {
                if dim.is_some() {
                    return Err(err(line, "duplicate `dim`"));
                }
                let d = match words.get(1..) {
                    Some(["2"]) => 2,
                    Some(["3"]) => 3,
                    _ => return Err(err(line, "`dim` must be 2 or 3")),
                };
                dim = Some((line, d));
            }
            "halfwidth" => {
                if halfwidth.is_some() {
                    return Err(err(line, "duplicate `halfwidth`"));
                }
                let [_, v] = words.as_slice() else { return Err(err(line, "`halfwidth` takes one value")) };
                halfwidth = Some((line, number(line, "halfwidth", v)?));
            }
            "section" => {
                if section.is_some() {
                    return Err(err(line, "duplicate `section`"));
                }
                let [_, a, b] = words.as_slice() else { return Err(err(line, "`section` takes two values")) };
                section = Some((line, number(line, "a", a)?, number(line, "b", b)?));
            }
            "guide" => {
                let g = guide(line, &words[1..])?;
                if words.iter().any(|w| w.starts_with("roll=")) {
                    roll_lines.push(line);
                }
                guides.push(g);
            }
            other => return Err(err(line, format!("unknown directive `{other}`"))),
        }
    }
    if !version {
        return Err(ParseError::Missing("version"));
    }
    let (_, d) = dim.ok_or(ParseError::Missing("dim"))?;
    let section = match d {
        2 => {
            if let Some((line, ..)) = section {
                return Err(err(line, "`section` is only valid with `dim 3`"));
            }
            if let Some(&line) = roll_lines.first() {
                return Err(err(line, "`roll` is only valid with `dim 3`"));
            }
            Section::HalfWidth(halfwidth.ok_or(ParseError::Missing("halfwidth"))?.1)
        }
        _ => {
            if let Some((line, _)) = halfwidth {
                return Err(err(line, "`halfwidth` is only valid with `dim 2`"));
            }
            let (_, a, b) = section.ok_or(ParseError::Missing("section"))?;
            Section::Rect { a, b }
        }
    };
    if guides.is_empty() {
        return Err(ParseError::Missing("guide"));
    }
    Ok(TrackSpec { section, guides })
}

/// Canonical text of a spec; `parse` inverts it exactly.
pub fn to_string(spec: &TrackSpec) -> String {
    let mut out = String::from("version 1\n");
    match spec.section {
        Section::HalfWidth(e) => {
            let _ = writeln!(out, "dim 2\nhalfwidth {e}");
        }
        Section::Rect { a, b } => {
            let _ = writeln!(out, "dim 3\nsection {a} {b}");
        }
    }
    for g in &spec.guides {
        match *g {
            GuideSpec::Straight { length } => {
                let _ = writeln!(out, "guide straight length={length}");
            }
            GuideSpec::Circular { radius, angle, turn, roll } => {
                let turn = match turn {
                    Turn::Left => "left",
                    Turn::Right => "right",
                };
                let _ = write!(out, "guide arc radius={radius} angle={angle} turn={turn}");
                if spec.dim() == 3 {
                    let _ = write!(out, " roll={roll}");
                }
                out.push('\n');
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const STADIUM: &str = "\
# stadium ring
version 1
dim 2
halfwidth 0.25   # type A
guide straight length=16
guide arc radius=2 angle=3.141592653589793 turn=left
guide straight length=16
guide arc radius=2 angle=3.141592653589793 turn=left
";

    #[test]
    fn parses_and_round_trips() {
        let spec = parse(STADIUM).unwrap();
        assert_eq!(spec.guides.len(), 4);
        assert_eq!(spec.halfwidth(), Some(0.25));
        let text = to_string(&spec);
        assert_eq!(parse(&text).unwrap(), spec);
        assert_eq!(to_string(&parse(&text).unwrap()), text);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = STADIUM.replace("guide straight length=16\nguide arc", "guide straight length=16\nbend arc");
        assert_eq!(parse(&bad).unwrap_err(), err(6, "unknown directive `bend`"));
        let bad = STADIUM.replace("length=16", "length=sixteen");
        assert!(matches!(parse(&bad), Err(ParseError::Line { line: 5, .. })));
        assert!(matches!(parse("dim 2\n"), Err(ParseError::Line { line: 1, .. })));
        assert!(matches!(parse("version 2\n"), Err(ParseError::Line { line: 1, .. })));
    }

    #[test]
    fn dimension_specific_directives() {
        let three = "version 1\ndim 3\nsection 0.6 0.4\nguide straight length=7\nguide arc radius=1 angle=3.141592653589793 turn=left roll=90\n";
        let spec = parse(three).unwrap();
        assert_eq!(spec.section, Section::Rect { a: 0.6, b: 0.4 });
        assert_eq!(to_string(&spec), three);
        assert!(parse(&three.replace("dim 3", "dim 2")).is_err());
        assert!(parse(&STADIUM.replace("turn=left\nguide straight", "turn=left roll=90\nguide straight")).is_err());
        assert_eq!(parse("version 1\ndim 2\nguide straight length=1\n"), Err(ParseError::Missing("halfwidth")));
    }

    #[test]
    fn shortest_round_trip_floats() {
        let spec = TrackSpec::planar(0.1 + 0.2, vec![GuideSpec::straight(1.0 / 3.0)]);
        assert_eq!(parse(&to_string(&spec)).unwrap(), spec);
    }
}
