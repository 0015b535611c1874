//! Conversion of hand-drawn SVG maps.
//!
//! Supported drawing elements are `line`, `polyline`, `polygon`, `rect` and
//! `circle`. Spawn and goal regions live in groups labelled `spawn` / `goal`
//! (Inkscape layer label or `id`), where `rect` becomes a rectangular region
//! and `circle` a disk. Anything else that draws is rejected by name. Only
//! `translate` and `scale` transforms are understood.

use roxmltree::{Document, Node};

use super::{MapError, Rect, Region, WorldMap};
use crate::geometry::{Obstacle, Vec2};

const SVG_NS: &str = "http://www.w3.org/2000/svg";
const INKSCAPE_NS: &str = "http://www.inkscape.org/namespaces/inkscape";

/// Elements that carry no geometry and whose content is skipped.
const IGNORED: &[&str] = &[
    "defs", "title", "desc", "metadata", "style", "script", "clipPath", "mask", "marker", "pattern", "symbol",
];

#[derive(Debug, Clone, Copy)]
struct Transform {
    sx: f64,
    sy: f64,
    tx: f64,
    ty: f64,
}

impl Transform {
    const IDENTITY: Transform = Transform {
        sx: 1.0,
        sy: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    /// `self` applied after `inner`.
    fn then(self, inner: Transform) -> Transform {
        Transform {
            sx: self.sx * inner.sx,
            sy: self.sy * inner.sy,
            tx: self.sx * inner.tx + self.tx,
            ty: self.sy * inner.ty + self.ty,
        }
    }

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.sx * x + self.tx, self.sy * y + self.ty)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Layer {
    Obstacles,
    Spawn,
    Goal,
}

struct Converter {
    scale: f64,
    obstacles: Vec<Obstacle>,
    spawn: Vec<Region>,
    goal: Vec<Region>,
    saw_spawn: bool,
    saw_goal: bool,
    unsupported: Vec<String>,
}

/// Converts an SVG document to a map. Pixel coordinates are divided by
/// `pixels_per_meter` and the y axis is flipped (SVG y points down).
pub fn convert_svg(svg: &str, pixels_per_meter: f64) -> Result<WorldMap, MapError> {
    if !(pixels_per_meter > 0.0 && pixels_per_meter.is_finite()) {
        return Err(MapError::Svg(format!(
            "pixels_per_meter must be positive, got {pixels_per_meter}"
        )));
    }
    let doc = Document::parse(svg).map_err(|e| MapError::Svg(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "svg" {
        return Err(MapError::Svg(format!(
            "root element is <{}>, expected <svg>",
            root.tag_name().name()
        )));
    }
    let mut conv = Converter {
        scale: 1.0 / pixels_per_meter,
        obstacles: Vec::new(),
        spawn: Vec::new(),
        goal: Vec::new(),
        saw_spawn: false,
        saw_goal: false,
        unsupported: Vec::new(),
    };
    for child in root.children().filter(Node::is_element) {
        conv.visit(child, Transform::IDENTITY, Layer::Obstacles)?;
    }
    if !conv.unsupported.is_empty() {
        return Err(MapError::UnsupportedElements(conv.unsupported));
    }
    if !conv.saw_spawn {
        return Err(MapError::MissingLayer("spawn"));
    }
    if !conv.saw_goal {
        return Err(MapError::MissingLayer("goal"));
    }
    let bounds = match declared_bounds(root, conv.scale)? {
        Some(b) => b,
        None => conv.geometry_bounds()?,
    };
    let name = root
        .attribute("id")
        .or_else(|| root.attribute((INKSCAPE_NS, "label")))
        .unwrap_or("svg_map")
        .to_string();
    let map = WorldMap {
        name,
        bounds,
        obstacles: conv.obstacles,
        spawn_regions: conv.spawn,
        goal_regions: conv.goal,
    };
    map.validate()?;
    Ok(map)
}

impl Converter {
    fn to_map(&self, t: &Transform, x: f64, y: f64) -> Vec2 {
        let (x, y) = t.apply(x, y);
        // `+ 0.0` turns -0.0 into 0.0
        Vec2::new(x * self.scale + 0.0, -y * self.scale + 0.0)
    }

    fn visit(&mut self, node: Node, parent: Transform, layer: Layer) -> Result<(), MapError> {
        let ns = node.tag_name().namespace();
        if ns.is_some() && ns != Some(SVG_NS) {
            // editor metadata such as sodipodi:namedview
            return Ok(());
        }
        let tag = node.tag_name().name();
        if IGNORED.contains(&tag) {
            return Ok(());
        }
        let transform = match node.attribute("transform") {
            Some(text) => parent.then(parse_transform(text)?),
            None => parent,
        };
        match tag {
            "g" | "svg" | "a" => {
                let layer = match group_label(node).as_deref() {
                    Some("spawn") => {
                        self.saw_spawn = true;
                        Layer::Spawn
                    }
                    Some("goal") => {
                        self.saw_goal = true;
                        Layer::Goal
                    }
                    _ => layer,
                };
                for child in node.children().filter(Node::is_element) {
                    self.visit(child, transform, layer)?;
                }
                Ok(())
            }
            "line" | "polyline" | "polygon" | "rect" | "circle" => self.shape(node, tag, &transform, layer),
            other => {
                let name = other.to_string();
                if !self.unsupported.contains(&name) {
                    self.unsupported.push(name);
                }
                Ok(())
            }
        }
    }

    fn shape(&mut self, node: Node, tag: &str, t: &Transform, layer: Layer) -> Result<(), MapError> {
        match (tag, layer) {
            ("line", Layer::Obstacles) => {
                let a = self.to_map(t, num_attr(node, "x1")?, num_attr(node, "y1")?);
                let b = self.to_map(t, num_attr(node, "x2")?, num_attr(node, "y2")?);
                self.obstacles.push(Obstacle::segment(a, b)?);
            }
            ("polyline" | "polygon", Layer::Obstacles) => {
                let coords = parse_numbers(node.attribute("points").unwrap_or(""))?;
                if coords.len() % 2 != 0 || coords.len() < 4 {
                    return Err(MapError::Svg(format!("<{tag}> needs at least two x,y points")));
                }
                let mut pts: Vec<Vec2> = coords.chunks(2).map(|p| self.to_map(t, p[0], p[1])).collect();
                if tag == "polygon" && pts.first() != pts.last() {
                    pts.push(pts[0]);
                }
                for w in pts.windows(2) {
                    if w[0] != w[1] {
                        self.obstacles.push(Obstacle::segment(w[0], w[1])?);
                    }
                }
            }
            ("rect", _) => {
                let (x, y) = (
                    opt_num_attr(node, "x")?.unwrap_or(0.0),
                    opt_num_attr(node, "y")?.unwrap_or(0.0),
                );
                let (w, h) = (num_attr(node, "width")?, num_attr(node, "height")?);
                if !(w > 0.0 && h > 0.0) {
                    return Err(MapError::Svg("<rect> needs positive width and height".into()));
                }
                let rounded =
                    opt_num_attr(node, "rx")?.unwrap_or(0.0) != 0.0 || opt_num_attr(node, "ry")?.unwrap_or(0.0) != 0.0;
                if rounded {
                    return Err(MapError::UnsupportedElements(vec![
                        "rect with rounded corners (rx/ry)".into()
                    ]));
                }
                let corners = [
                    self.to_map(t, x, y),
                    self.to_map(t, x + w, y),
                    self.to_map(t, x + w, y + h),
                    self.to_map(t, x, y + h),
                ];
                match layer {
                    Layer::Obstacles => {
                        for i in 0..4 {
                            self.obstacles
                                .push(Obstacle::segment(corners[i], corners[(i + 1) % 4])?);
                        }
                    }
                    Layer::Spawn | Layer::Goal => {
                        let min = Vec2::new(corners[0].x.min(corners[2].x), corners[0].y.min(corners[2].y));
                        let max = Vec2::new(corners[0].x.max(corners[2].x), corners[0].y.max(corners[2].y));
                        self.region(layer, Region::Rect(Rect::new(min, max)));
                    }
                }
            }
            ("circle", _) => {
                let center = self.to_map(t, num_attr(node, "cx")?, num_attr(node, "cy")?);
                if (t.sx.abs() - t.sy.abs()).abs() > 1e-12 * t.sx.abs().max(t.sy.abs()) {
                    return Err(MapError::Svg("non-uniform scale turns a circle into an ellipse".into()));
                }
                let radius = num_attr(node, "r")? * t.sx.abs() * self.scale;
                match layer {
                    Layer::Obstacles => self.obstacles.push(Obstacle::circle(center, radius)?),
                    Layer::Spawn | Layer::Goal => self.region(layer, Region::Disk { center, radius }),
                }
            }
            (other, _) => {
                return Err(MapError::Svg(format!(
                    "<{other}> cannot describe a spawn/goal region (use rect or circle)"
                )))
            }
        }
        Ok(())
    }

    fn region(&mut self, layer: Layer, region: Region) {
        match layer {
            Layer::Spawn => self.spawn.push(region),
            Layer::Goal => self.goal.push(region),
            Layer::Obstacles => unreachable!(),
        }
    }

    fn geometry_bounds(&self) -> Result<Rect, MapError> {
        let boxes = self
            .obstacles
            .iter()
            .map(Obstacle::bounding_box)
            .chain(self.spawn.iter().chain(&self.goal).map(|r| {
                let b = r.bounding_box();
                (b.min, b.max)
            }));
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (lo, hi) in boxes {
            min = Vec2::new(min.x.min(lo.x), min.y.min(lo.y));
            max = Vec2::new(max.x.max(hi.x), max.y.max(hi.y));
        }
        let rect = Rect::new(min, max);
        rect.validate()
            .map_err(|_| MapError::Svg("no width/height/viewBox and no geometry to derive bounds from".into()))?;
        Ok(rect)
    }
}

fn group_label(node: Node) -> Option<String> {
    node.attribute((INKSCAPE_NS, "label"))
        .or_else(|| node.attribute("id"))
        .map(|s| s.trim().to_ascii_lowercase())
        .filter(|s| s == "spawn" || s == "goal")
}

fn declared_bounds(root: Node, scale: f64) -> Result<Option<Rect>, MapError> {
    let (x, y, w, h) = if let Some(vb) = root.attribute("viewBox") {
        let v = parse_numbers(vb)?;
        if v.len() != 4 {
            return Err(MapError::Svg(format!("viewBox needs 4 numbers, found {}", v.len())));
        }
        (v[0], v[1], v[2], v[3])
    } else {
        match (opt_num_attr(root, "width")?, opt_num_attr(root, "height")?) {
            (Some(w), Some(h)) => (0.0, 0.0, w, h),
            _ => return Ok(None),
        }
    };
    let rect = Rect::new(
        Vec2::new(x * scale + 0.0, -(y + h) * scale + 0.0),
        Vec2::new((x + w) * scale + 0.0, -y * scale + 0.0),
    );
    rect.validate()?;
    Ok(Some(rect))
}

fn parse_length(text: &str) -> Result<f64, MapError> {
    let trimmed = text.trim();
    let number = trimmed.strip_suffix("px").unwrap_or(trimmed);
    number
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| MapError::Svg(format!("cannot parse length \"{text}\" (only unitless or px)")))
}

fn num_attr(node: Node, name: &str) -> Result<f64, MapError> {
    opt_num_attr(node, name)?
        .ok_or_else(|| MapError::Svg(format!("<{}> is missing attribute \"{name}\"", node.tag_name().name())))
}

fn opt_num_attr(node: Node, name: &str) -> Result<Option<f64>, MapError> {
    node.attribute(name).map(parse_length).transpose()
}

fn parse_numbers(text: &str) -> Result<Vec<f64>, MapError> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(parse_length)
        .collect()
}

fn parse_transform(text: &str) -> Result<Transform, MapError> {
    let mut out = Transform::IDENTITY;
    let mut rest = text.trim();
    while !rest.is_empty() {
        let open = rest
            .find('(')
            .ok_or_else(|| MapError::Svg(format!("malformed transform \"{text}\"")))?;
        let close = rest
            .find(')')
            .ok_or_else(|| MapError::Svg(format!("malformed transform \"{text}\"")))?;
        let name = rest[..open].trim().trim_start_matches(',').trim();
        let args = parse_numbers(&rest[open + 1..close])?;
        let t = match (name, args.as_slice()) {
            ("translate", [tx]) => Transform {
                tx: *tx,
                ty: 0.0,
                ..Transform::IDENTITY
            },
            ("translate", [tx, ty]) => Transform {
                tx: *tx,
                ty: *ty,
                ..Transform::IDENTITY
            },
            ("scale", [s]) => Transform {
                sx: *s,
                sy: *s,
                ..Transform::IDENTITY
            },
            ("scale", [sx, sy]) => Transform {
                sx: *sx,
                sy: *sy,
                ..Transform::IDENTITY
            },
            _ => {
                return Err(MapError::UnsupportedElements(vec![format!("transform {name}(...)")]));
            }
        };
        // transform lists apply right-to-left to the point
        out = out.then(t);
        rest = rest[close + 1..].trim();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wrap(body: &str) -> String {
        format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" xmlns:inkscape="http://www.inkscape.org/namespaces/inkscape" width="400" height="400">
{body}
<g inkscape:groupmode="layer" inkscape:label="spawn"><circle cx="100" cy="100" r="20"/></g>
<g id="goal"><rect x="250" y="250" width="50" height="50"/></g>
</svg>"#
        )
    }

    #[test]
    fn line_is_scaled_and_flipped() {
        let map = convert_svg(&wrap(r#"<line x1="0" y1="0" x2="100" y2="0"/>"#), 100.0).unwrap();
        match map.obstacles[..] {
            [Obstacle::Segment { a, b }] => {
                assert_eq!(a, Vec2::new(0.0, 0.0));
                assert_eq!(b, Vec2::new(1.0, 0.0));
            }
            ref other => panic!("unexpected {other:?}"),
        }
        assert_eq!(map.bounds, Rect::new(Vec2::new(0.0, -4.0), Vec2::new(4.0, 0.0)));
        assert_eq!(
            map.spawn_regions,
            vec![Region::Disk {
                center: Vec2::new(1.0, -1.0),
                radius: 0.2
            }]
        );
        assert_eq!(
            map.goal_regions,
            vec![Region::Rect(Rect::new(Vec2::new(2.5, -3.0), Vec2::new(3.0, -2.5)))]
        );
    }

    #[test]
    fn rect_becomes_unit_square() {
        let map = convert_svg(&wrap(r#"<rect x="100" y="100" width="100" height="100"/>"#), 100.0).unwrap();
        assert_eq!(map.obstacles.len(), 4);
        let mut total = 0.0;
        for o in &map.obstacles {
            let Obstacle::Segment { a, b } = *o else { panic!() };
            assert!((a.distance(b) - 1.0).abs() < 1e-12);
            total += a.distance(b);
        }
        assert!((total - 4.0).abs() < 1e-12);
        // corners close the loop
        let Obstacle::Segment { a: first, .. } = map.obstacles[0] else {
            panic!()
        };
        let Obstacle::Segment { b: last, .. } = map.obstacles[3] else {
            panic!()
        };
        assert_eq!(first, last);
    }

    #[test]
    fn path_is_rejected_by_name() {
        let err = convert_svg(
            &wrap(r#"<path d="M 0 0 L 10 10"/><ellipse cx="1" cy="1" rx="2" ry="1"/>"#),
            100.0,
        )
        .unwrap_err();
        match &err {
            MapError::UnsupportedElements(names) => assert_eq!(names, &["path", "ellipse"]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("path"));
    }

    #[test]
    fn missing_layers() {
        let svg = r#"<svg xmlns="http://www.w3.org/2000/svg" width="10" height="10"><line x1="0" y1="0" x2="5" y2="0"/></svg>"#;
        assert!(matches!(convert_svg(svg, 1.0), Err(MapError::MissingLayer("spawn"))));
        assert!(matches!(convert_svg("<svg", 1.0), Err(MapError::Svg(_))));
    }

    #[test]
    fn polygon_closes_and_transforms_compose() {
        let body = r#"<g transform="translate(100,0)"><polygon points="0,0 100,0 100,100" transform="scale(2)"/></g>"#;
        let map = convert_svg(&wrap(body), 100.0).unwrap();
        assert_eq!(map.obstacles.len(), 3);
        let Obstacle::Segment { a, b } = map.obstacles[0] else {
            panic!()
        };
        assert_eq!(a, Vec2::new(1.0, 0.0));
        assert_eq!(b, Vec2::new(3.0, 0.0));
    }

    #[test]
    fn doubling_scale_halves_coordinates() {
        let svg = wrap(r#"<line x1="10" y1="30" x2="170" y2="90"/><circle cx="200" cy="150" r="30"/>"#);
        let a = convert_svg(&svg, 50.0).unwrap();
        let b = convert_svg(&svg, 100.0).unwrap();
        for (oa, ob) in a.obstacles.iter().zip(&b.obstacles) {
            let (amin, amax) = oa.bounding_box();
            let (bmin, bmax) = ob.bounding_box();
            assert!((amin * 0.5 - bmin).norm() < 1e-12);
            assert!((amax * 0.5 - bmax).norm() < 1e-12);
        }
    }

    #[test]
    fn rotate_transform_is_rejected() {
        let err = convert_svg(
            &wrap(r#"<line x1="0" y1="0" x2="1" y2="0" transform="rotate(45)"/>"#),
            1.0,
        );
        assert!(matches!(err, Err(MapError::UnsupportedElements(_))));
    }
}
