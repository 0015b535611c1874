//! Native map text format.
//!
//! ```text
//! # comment (anything after '#' outside a quoted name)
//! map { name: "simple_room", bounds: [-4, -4, 4, 4] }
//! segment x1 y1 x2 y2
//! circle cx cy r
//! spawn rect xmin ymin xmax ymax
//! spawn disk cx cy r
//! goal rect xmin ymin xmax ymax
//! goal disk cx cy r
//! ```
//!
//! Exactly one `map` header is required. Lengths are meters in decimal
//! notation. Unknown keywords and header keys are rejected.

use std::fmt::Write as _;

use super::{MapError, Rect, Region, WorldMap};
use crate::geometry::{Obstacle, Vec2};

pub fn load_map(document: &str) -> Result<WorldMap, MapError> {
    let mut header: Option<(String, Rect)> = None;
    let mut obstacles = Vec::new();
    let mut spawn_regions = Vec::new();
    let mut goal_regions = Vec::new();

    for (idx, raw) in document.lines().enumerate() {
        let line_no = idx + 1;
        let err = |message: String| MapError::Parse { line: line_no, message };
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        match keyword {
            "map" => {
                if header.is_some() {
                    return Err(err("duplicate map header".into()));
                }
                header = Some(parse_header(rest).map_err(err)?);
            }
            "segment" => {
                let [x1, y1, x2, y2] = numbers::<4>(rest).map_err(err)?;
                let seg = Obstacle::segment(Vec2::new(x1, y1), Vec2::new(x2, y2))
                    .map_err(|e| MapError::Invalid(format!("line {line_no}: {e}")))?;
                obstacles.push(seg);
            }
            "circle" => {
                let [cx, cy, r] = numbers::<3>(rest).map_err(err)?;
                let circle = Obstacle::circle(Vec2::new(cx, cy), r)
                    .map_err(|e| MapError::Invalid(format!("line {line_no}: {e}")))?;
                obstacles.push(circle);
            }
            "spawn" | "goal" => {
                let region = parse_region(rest).map_err(err)?;
                region
                    .validate()
                    .map_err(|e| MapError::Invalid(format!("line {line_no}: {e}")))?;
                if keyword == "spawn" {
                    spawn_regions.push(region);
                } else {
                    goal_regions.push(region);
                }
            }
            other => return Err(err(format!("unknown keyword \"{other}\""))),
        }
    }

    let (name, bounds) = header.ok_or_else(|| MapError::Parse {
        line: 0,
        message: "missing `map { name, bounds }` header".into(),
    })?;
    let map = WorldMap {
        name,
        bounds,
        obstacles,
        spawn_regions,
        goal_regions,
    };
    map.validate()?;
    Ok(map)
}

/// Canonical text form; `load_map(&save_map(m)) == m` for every valid map.
pub fn save_map(map: &WorldMap) -> String {
    let mut out = String::new();
    let b = &map.bounds;
    let _ = writeln!(
        out,
        "map {{ name: {}, bounds: [{}, {}, {}, {}] }}",
        quote(&map.name),
        b.min.x,
        b.min.y,
        b.max.x,
        b.max.y
    );
    for obstacle in &map.obstacles {
        let _ = match obstacle {
            Obstacle::Segment { a, b } => writeln!(out, "segment {} {} {} {}", a.x, a.y, b.x, b.y),
            Obstacle::Circle { center, radius } => writeln!(out, "circle {} {} {}", center.x, center.y, radius),
        };
    }
    for (keyword, regions) in [("spawn", &map.spawn_regions), ("goal", &map.goal_regions)] {
        for region in regions {
            let _ = match region {
                Region::Rect(r) => writeln!(out, "{keyword} rect {} {} {} {}", r.min.x, r.min.y, r.max.x, r.max.y),
                Region::Disk { center, radius } => {
                    writeln!(out, "{keyword} disk {} {} {}", center.x, center.y, radius)
                }
            };
        }
    }
    out
}

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_quotes => escaped = true,
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

fn quote(name: &str) -> String {
    let mut out = String::with_capacity(name.len() + 2);
    out.push('"');
    for c in name.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

fn parse_number(token: &str) -> Result<f64, String> {
    let value: f64 = token
        .parse()
        .map_err(|_| format!("expected a number, found \"{token}\""))?;
    if !value.is_finite() {
        return Err(format!("non-finite number \"{token}\""));
    }
    Ok(value)
}

fn numbers<const N: usize>(rest: &str) -> Result<[f64; N], String> {
    let tokens: Vec<&str> = rest.split_whitespace().collect();
    if tokens.len() != N {
        return Err(format!("expected {N} numbers, found {}", tokens.len()));
    }
    let mut out = [0.0; N];
    for (slot, token) in out.iter_mut().zip(tokens) {
        *slot = parse_number(token)?;
    }
    Ok(out)
}

fn parse_region(rest: &str) -> Result<Region, String> {
    let (shape, args) = rest.trim().split_once(char::is_whitespace).unwrap_or((rest.trim(), ""));
    match shape {
        "rect" => {
            let [x0, y0, x1, y1] = numbers::<4>(args)?;
            Ok(Region::Rect(Rect::new(Vec2::new(x0, y0), Vec2::new(x1, y1))))
        }
        "disk" => {
            let [cx, cy, r] = numbers::<3>(args)?;
            Ok(Region::Disk {
                center: Vec2::new(cx, cy),
                radius: r,
            })
        }
        other => Err(format!("unknown region shape \"{other}\" (expected rect or disk)")),
    }
}

/// Parses `{ name: "...", bounds: [a, b, c, d] }`.
fn parse_header(rest: &str) -> Result<(String, Rect), String> {
    let mut cur = Cursor { s: rest.trim() };
    cur.expect('{')?;
    let mut name = None;
    let mut bounds = None;
    loop {
        cur.skip_ws();
        if cur.eat('}') {
            break;
        }
        let key = cur.ident()?;
        cur.expect(':')?;
        match key {
            "name" => name = Some(cur.name()?),
            "bounds" => {
                cur.expect('[')?;
                let mut values = Vec::new();
                loop {
                    values.push(parse_number(cur.token()?)?);
                    if cur.eat(']') {
                        break;
                    }
                    cur.expect(',')?;
                }
                let [x0, y0, x1, y1]: [f64; 4] = values
                    .try_into()
                    .map_err(|v: Vec<f64>| format!("bounds needs 4 numbers, found {}", v.len()))?;
                bounds = Some(Rect::new(Vec2::new(x0, y0), Vec2::new(x1, y1)));
            }
            other => return Err(format!("unknown header key \"{other}\"")),
        }
        cur.skip_ws();
        if cur.eat('}') {
            break;
        }
        cur.expect(',')?;
    }
    if !cur.s.trim().is_empty() {
        return Err(format!("trailing text after header: \"{}\"", cur.s.trim()));
    }
    Ok((
        name.ok_or("header is missing `name`")?,
        bounds.ok_or("header is missing `bounds`")?,
    ))
}

struct Cursor<'a> {
    s: &'a str,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        self.s = self.s.trim_start();
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        match self.s.strip_prefix(c) {
            Some(rest) => {
                self.s = rest;
                true
            }
            None => false,
        }
    }

    fn expect(&mut self, c: char) -> Result<(), String> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(format!("expected '{c}' at \"{}\"", self.s))
        }
    }

    fn ident(&mut self) -> Result<&'a str, String> {
        self.skip_ws();
        let end = self
            .s
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(self.s.len());
        if end == 0 {
            return Err(format!("expected a key at \"{}\"", self.s));
        }
        let (id, rest) = self.s.split_at(end);
        self.s = rest;
        Ok(id)
    }

    /// Token up to the next ',' ']' '}' or whitespace.
    fn token(&mut self) -> Result<&'a str, String> {
        self.skip_ws();
        let end = self
            .s
            .find(|c: char| c == ',' || c == ']' || c == '}' || c.is_whitespace())
            .unwrap_or(self.s.len());
        if end == 0 {
            return Err(format!("expected a value at \"{}\"", self.s));
        }
        let (tok, rest) = self.s.split_at(end);
        self.s = rest;
        Ok(tok)
    }

    fn name(&mut self) -> Result<String, String> {
        self.skip_ws();
        if !self.s.starts_with('"') {
            return self.token().map(str::to_owned);
        }
        let mut out = String::new();
        let mut chars = self.s.char_indices().skip(1);
        while let Some((i, c)) = chars.next() {
            match c {
                '\\' => match chars.next() {
                    Some((_, e)) => out.push(e),
                    None => break,
                },
                '"' => {
                    self.s = &self.s[i + 1..];
                    return Ok(out);
                }
                _ => out.push(c),
            }
        }
        Err("unterminated quoted name".into())
    }
}
