//! Deterministic SVG rendering: fixed canvas, fixed decimal formatting.

use std::fmt::Write as _;

use crate::metrics::{CalibrationTable, DcaPoint};
use crate::nonparametric::StepFunction;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Linear map from data coordinates onto the plotting area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let widen = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let (x0, x1) = widen(x0, x1);
        let (y0, y1) = widen(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn path(&self, points: &[(f64, f64)]) -> String {
        let mut d = String::new();
        for (i, &(x, y)) in points.iter().enumerate() {
            let _ = write!(
                d,
                "{}{:.2},{:.2}",
                if i == 0 { "M" } else { " L" },
                self.px(x),
                self.py(y.clamp(self.y0, self.y1))
            );
        }
        d
    }
}

fn open(title: &str, x_label: &str, y_label: &str, frame: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\" viewBox=\"0 0 {WIDTH:.0} {HEIGHT:.0}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"30.00\" text-anchor=\"middle\" font-size=\"16\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        "<path class=\"axes\" d=\"M{l:.2},{t:.2} L{l:.2},{b:.2} L{r:.2},{b:.2}\" stroke=\"black\" fill=\"none\"/>"
    );
    for k in 0..=4 {
        let fx = frame.x0 + (frame.x1 - frame.x0) * k as f64 / 4.0;
        let fy = frame.y0 + (frame.y1 - frame.y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"11\">{fx:.2}</text>",
            frame.px(fx),
            b + 18.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\">{fy:.2}</text>",
            l - 6.0,
            frame.py(fy) + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"13\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"18.00\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18.00 {:.2})\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    s
}

fn legend(s: &mut String, entries: &[(&str, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = MARGIN + 14.0 + 18.0 * i as f64;
        let x = WIDTH - MARGIN - 150.0;
        let _ = writeln!(
            s,
            "<path class=\"legend\" d=\"M{x:.2},{y:.2} L{:.2},{y:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            x + 20.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{}</text>",
            x + 26.0,
            y + 4.0,
            escape(label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Staircase points of a step function from `t = 0` to `t_max`.
fn staircase(f: &StepFunction, t_max: f64) -> Vec<(f64, f64)> {
    let mut pts = vec![(0.0, f.initial_value())];
    let mut level = f.initial_value();
    for (&t, &v) in f.knots().iter().zip(f.values()) {
        pts.push((t, level));
        pts.push((t, v));
        level = v;
    }
    pts.push((t_max, level));
    pts
}

/// Kaplan–Meier curves, one step path per group, annotated with the log-rank p.
pub fn km_svg(groups: &[(&str, &StepFunction)], p_value: f64) -> String {
    let t_max = groups
        .iter()
        .flat_map(|(_, f)| f.knots().last().copied())
        .fold(1.0, f64::max);
    let frame = Frame::new(0.0, t_max, 0.0, 1.0);
    let mut s = open("Kaplan-Meier by risk group", "time", "recurrence-free survival", &frame);
    let mut entries = Vec::new();
    for (i, (label, f)) in groups.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            "<path class=\"km-step\" d=\"{}\" stroke=\"{color}\" stroke-width=\"2\" fill=\"none\"/>",
            frame.path(&staircase(f, t_max))
        );
        entries.push((*label, color));
    }
    legend(&mut s, &entries);
    let _ = writeln!(
        s,
        "<text class=\"p-value\" x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\">log-rank p = {}</text>",
        MARGIN + 10.0,
        HEIGHT - MARGIN - 10.0,
        format_p(p_value)
    );
    s.push_str("</svg>\n");
    s
}

pub fn format_p(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

/// AUC(t) curves per model with a 0.5 reference line.
pub fn auc_svg(curves: &[(&str, Vec<(f64, f64)>)]) -> String {
    let t_max = curves
        .iter()
        .flat_map(|(_, c)| c.iter().map(|p| p.0))
        .fold(1.0, f64::max);
    let frame = Frame::new(0.0, t_max, 0.0, 1.0);
    let mut s = open("Time-dependent AUC", "time", "AUC(t)", &frame);
    let _ = writeln!(
        s,
        "<path class=\"reference\" d=\"{}\" stroke=\"gray\" stroke-dasharray=\"4 4\" fill=\"none\"/>",
        frame.path(&[(0.0, 0.5), (t_max, 0.5)])
    );
    let mut entries = Vec::new();
    for (i, (label, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !pts.is_empty() {
            let _ = writeln!(
                s,
                "<path class=\"auc\" d=\"{}\" stroke=\"{color}\" stroke-width=\"2\" fill=\"none\"/>",
                frame.path(pts)
            );
        }
        entries.push((*label, color));
    }
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    s
}

/// Observed vs predicted risk per bin with the identity line.
pub fn calibration_svg(label: &str, table: &CalibrationTable) -> String {
    let frame = Frame::new(0.0, 1.0, 0.0, 1.0);
    let title = format!("Calibration at t = {:.2}", table.t);
    let mut s = open(&title, "predicted risk", "observed risk", &frame);
    let _ = writeln!(
        s,
        "<path class=\"reference\" d=\"{}\" stroke=\"gray\" stroke-dasharray=\"4 4\" fill=\"none\"/>",
        frame.path(&[(0.0, 0.0), (1.0, 1.0)])
    );
    let pts: Vec<(f64, f64)> = table.bins.iter().map(|b| (b.mean_predicted, b.observed)).collect();
    if !pts.is_empty() {
        let _ = writeln!(
            s,
            "<path class=\"calibration\" d=\"{}\" stroke=\"{}\" stroke-width=\"2\" fill=\"none\"/>",
            frame.path(&pts),
            PALETTE[0]
        );
    }
    for &(x, y) in &pts {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{}\"/>",
            frame.px(x),
            frame.py(y.clamp(0.0, 1.0)),
            PALETTE[0]
        );
    }
    legend(&mut s, &[(label, PALETTE[0])]);
    s.push_str("</svg>\n");
    s
}

/// Net benefit of the model against treat-all and treat-none.
/// CSS class, legend label, colour and points of one curve.
type Series<'a> = (&'a str, &'a str, &'a str, Vec<(f64, f64)>);

pub fn dca_svg(label: &str, horizon: f64, points: &[DcaPoint]) -> String {
    let x0 = points.first().map_or(0.0, |p| p.threshold);
    let x1 = points.last().map_or(1.0, |p| p.threshold);
    let y1 = points
        .iter()
        .map(|p| p.net_benefit.max(p.treat_all_benefit))
        .fold(0.05, f64::max);
    let y0 = -0.05;
    let frame = Frame::new(x0, x1, y0, y1);
    let title = format!("Decision curve at t = {horizon:.2}");
    let mut s = open(&title, "threshold probability", "net benefit", &frame);
    let series: [Series; 3] = [
        (
            "model",
            label,
            PALETTE[0],
            points.iter().map(|p| (p.threshold, p.net_benefit)).collect(),
        ),
        (
            "treat-all",
            "Treat All",
            "gray",
            points.iter().map(|p| (p.threshold, p.treat_all_benefit)).collect(),
        ),
        (
            "treat-none",
            "Treat None",
            "black",
            points.iter().map(|p| (p.threshold, p.treat_none_benefit)).collect(),
        ),
    ];
    for (class, _, color, pts) in &series {
        if !pts.is_empty() {
            let _ = writeln!(
                s,
                "<path class=\"{class}\" d=\"{}\" stroke=\"{color}\" stroke-width=\"2\" fill=\"none\"/>",
                frame.path(pts)
            );
        }
    }
    let entries: Vec<(&str, &str)> = series.iter().map(|(_, l, c, _)| (*l, *c)).collect();
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    s
}
