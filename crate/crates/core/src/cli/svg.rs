//! SVG figures of Stokes graphs with zero overlays.

use std::fmt::Write;

use num_complex::Complex64;

use crate::stokesgraph::{ExceptionalSet, StokesGraph};
use crate::zeroloci::{ZeroObservation, ZeroPrediction};

/// Stroke settings for one kind of figure element.
#[derive(Debug, Clone, Copy)]
pub struct Style {
    pub stroke: &'static str,
    pub width: f64,
    pub dash: Option<&'static str>,
}

/// Figure conventions: exceptional lines bold, cuts broken.
pub mod style {
    use super::Style;

    pub const STOKES_LINE: Style = Style { stroke: "#444444", width: 1.0, dash: None };
    pub const EXCEPTIONAL_LINE: Style = Style { stroke: "#000000", width: 3.0, dash: None };
    pub const CUT: Style = Style { stroke: "#888888", width: 1.0, dash: Some("6 4") };
    pub const VICINITY: Style = Style { stroke: "#bbbbbb", width: 0.6, dash: Some("2 3") };
    pub const PREDICTION: Style = Style { stroke: "#1f5fbf", width: 1.0, dash: None };
    pub const OBSERVATION: Style = Style { stroke: "#c0392b", width: 1.2, dash: None };
    pub const TURNING_POINT_RADIUS: f64 = 3.5;
    pub const PREDICTION_RADIUS: f64 = 4.0;
    pub const CROSS_HALF: f64 = 3.0;
    pub const SIZE: f64 = 640.0;
}

struct Canvas {
    view: f64,
    body: String,
}

impl Canvas {
    fn px(&self, z: Complex64) -> (f64, f64) {
        let s = style::SIZE / (2.0 * self.view);
        ((z.re + self.view) * s, (self.view - z.im) * s)
    }

    fn attrs(s: Style) -> String {
        let dash = s.dash.map_or(String::new(), |d| format!(" stroke-dasharray=\"{d}\""));
        format!("fill=\"none\" stroke=\"{}\" stroke-width=\"{}\"{dash}", s.stroke, s.width)
    }

    fn polyline(&mut self, points: &[Complex64], s: Style) {
        let mut d = String::new();
        for &z in points {
            let (x, y) = self.px(z);
            let _ = write!(d, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(self.body, "<polyline points=\"{}\" {}/>", d.trim_end(), Self::attrs(s));
    }

    fn circle(&mut self, z: Complex64, r: f64, s: Style, filled: bool) {
        let (x, y) = self.px(z);
        let mut a = Self::attrs(s);
        if filled {
            a = a.replace("fill=\"none\"", &format!("fill=\"{}\"", s.stroke));
        }
        let _ = writeln!(self.body, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r}\" {a}/>");
    }

    fn cross(&mut self, z: Complex64, h: f64, s: Style) {
        let (x, y) = self.px(z);
        let a = Self::attrs(s);
        let _ = writeln!(
            self.body,
            "<path d=\"M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}\" {a}/>",
            x - h,
            y - h,
            x + h,
            y + h,
            x - h,
            y + h,
            x + h,
            y - h
        );
    }

    fn label(&mut self, z: Complex64, text: &str) {
        let (x, y) = self.px(z);
        let _ = writeln!(self.body, "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{text}</text>", x + 5.0, y - 5.0);
    }

    fn finish(self, title: &str) -> String {
        let size = style::SIZE;
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n\
             <title>{title}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body
        )
    }
}

/// Draw `graph` on `[-view, view]²` with optional exceptional set and zeros.
pub fn render(
    graph: &StokesGraph,
    ex: Option<&ExceptionalSet>,
    predictions: &[ZeroPrediction],
    observations: &[ZeroObservation],
    view: f64,
    title: &str,
) -> String {
    let mut c = Canvas { view, body: String::new() };
    for cut in &graph.cuts.cuts {
        c.polyline(&[cut.anchor, cut.anchor + cut.direction * (4.0 * view)], style::CUT);
    }
    let bold: Vec<usize> = ex.map(|e| e.all_line_ids()).unwrap_or_default();
    for (i, line) in graph.lines.iter().enumerate() {
        let s = if bold.contains(&i) { style::EXCEPTIONAL_LINE } else { style::STOKES_LINE };
        c.polyline(&line.points, s);
    }
    if let Some(e) = ex {
        for v in &e.vicinity {
            c.polyline(v, style::VICINITY);
        }
    }
    for tp in &graph.turning_points {
        c.circle(tp.location, style::TURNING_POINT_RADIUS, style::STOKES_LINE, true);
        c.label(tp.location, &format!("z{}", tp.label));
    }
    for s in &graph.sectors {
        c.label(Complex64::from_polar(0.85 * view, s.center), &format!("S{}", s.label));
    }
    for p in predictions {
        c.circle(p.location, style::PREDICTION_RADIUS, style::PREDICTION, false);
    }
    for o in observations {
        c.cross(o.location, style::CROSS_HALF, style::OBSERVATION);
    }
    c.finish(title)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{AlphaChoice, RescaledPotential};
    use crate::stokesgraph::{build_graph, exceptional_set};

    #[test]
    fn figure_has_styled_elements() {
        let pot = RescaledPotential::limit(3, AlphaChoice::One, Complex64::new(50.0, 0.0)).unwrap();
        let g = build_graph(&pot).unwrap();
        let ex = exceptional_set(&g, 1, 0.25).unwrap();
        let svg = render(&g, Some(&ex), &[], &[], 2.5, "n=3");
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), g.cuts.cuts.len() + g.lines.len() + ex.vicinity.len());
        assert!(svg.contains("stroke-width=\"3\""));
        assert!(svg.contains("stroke-dasharray=\"6 4\""));
    }
}
