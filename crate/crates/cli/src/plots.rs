//! SVG figures drawn from trace and reference CSV files.
//!
//! Every figure is 1000×700 px with time in seconds on the horizontal axis.
//! Vertical ranges fit the plotted data with 5% padding. References are drawn
//! as step functions over their intervals.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::trace_csv::{ReferenceRow, TraceRow};

const SIZE: (u32, u32) = (1000, 700);
const PALETTE: [RGBColor; 4] = [RGBColor(31, 119, 180), RGBColor(214, 39, 40), RGBColor(44, 160, 44), RGBColor(148, 103, 189)];
const REF_COLOR: RGBColor = RGBColor(90, 90, 90);

pub const FIGURES: [&str; 5] = ["load_currents", "source_voltages", "bus_voltages", "duties", "lyapunov"];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    color: RGBColor,
    dashed: bool,
}

fn series(label: &str, rows: &[TraceRow], color: usize, f: impl Fn(&TraceRow) -> f64) -> Series {
    Series {
        label: label.to_string(),
        points: rows.iter().map(|r| (r.t, f(r))).collect(),
        color: PALETTE[color % PALETTE.len()],
        dashed: false,
    }
}

fn reference(label: &str, refs: &[ReferenceRow], f: impl Fn(&ReferenceRow) -> f64) -> Series {
    let points = refs
        .iter()
        .flat_map(|r| [(r.valid_from, f(r)), (r.valid_to, f(r))])
        .collect();
    Series {
        label: label.to_string(),
        points,
        color: REF_COLOR,
        dashed: true,
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) * 1e-3 + 1e-9 };
    (lo - pad, hi + pad)
}

fn panel<DB: DrawingBackend>(area: &DrawingArea<DB, plotters::coord::Shift>, title: &str, y_label: &str, lines: &[Series]) -> Result<(), String>
where
    DB::ErrorType: 'static,
{
    let err = |e: DrawingAreaErrorKind<DB::ErrorType>| e.to_string();
    let (t0, t1) = range(lines.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = range(lines.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(80)
        .build_cartesian_2d(t0..t1, y0..y1)
        .map_err(err)?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .y_desc(y_label)
        .draw()
        .map_err(err)?;
    for s in lines {
        let pts = s.points.iter().copied().filter(|p| p.1.is_finite());
        let color = s.color;
        let style = color.stroke_width(if s.dashed { 1 } else { 2 });
        let anno = if s.dashed {
            chart.draw_series(DashedLineSeries::new(pts, 6, 4, style)).map_err(err)?
        } else {
            chart.draw_series(LineSeries::new(pts, style)).map_err(err)?
        };
        anno.label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(err)?;
    Ok(())
}

fn figure(panels: &[(&str, &str, Vec<Series>)]) -> Result<String, String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(|e| e.to_string())?;
        let areas = root.split_evenly((panels.len(), 1));
        for (area, (title, y, lines)) in areas.iter().zip(panels) {
            panel(area, title, y, lines)?;
        }
        root.present().map_err(|e| e.to_string())?;
    }
    Ok(svg)
}

/// Renders all figures to SVG strings, keyed by the names in [`FIGURES`].
pub fn render(rows: &[TraceRow], refs: &[ReferenceRow]) -> Result<Vec<(&'static str, String)>, String> {
    let load = figure(&[
        ("Load resistance", "R_L [Ω]", vec![series("R_L", rows, 0, |r| r.r_load)]),
        (
            "Inductor currents",
            "current [A]",
            vec![
                series("x3 (PV)", rows, 0, |r| r.x3),
                series("x6 (battery)", rows, 1, |r| r.x6),
                series("x8 (supercapacitor)", rows, 2, |r| r.x8),
            ],
        ),
    ])?;
    let sources = figure(&[
        (
            "PV voltage",
            "voltage [V]",
            vec![series("x1", rows, 0, |r| r.x1), reference("x1*", refs, |r| r.x1_star)],
        ),
        (
            "Battery voltage",
            "voltage [V]",
            vec![series("x4", rows, 1, |r| r.x4), reference("x4*", refs, |r| r.x4_star)],
        ),
    ])?;
    let bus = figure(&[
        (
            "Bus voltage",
            "voltage [V]",
            vec![series("x9", rows, 0, |r| r.x9), reference("x9*", refs, |r| r.x9_star)],
        ),
        (
            "Supercapacitor-side voltage",
            "voltage [V]",
            vec![series("x7", rows, 2, |r| r.x7), series("z7", rows, 3, |r| r.z7)],
        ),
    ])?;
    let duties = figure(&[(
        "Duty cycles (applied)",
        "duty [-]",
        vec![
            series("u1", rows, 0, |r| r.u1),
            series("u2", rows, 1, |r| r.u2),
            series("u3", rows, 2, |r| r.u3),
        ],
    )])?;
    let lyap = figure(&[(
        "Composite Lyapunov function",
        "V [J]",
        vec![series("V_total", rows, 3, |r| r.v_total.unwrap_or(f64::NAN))],
    )])?;
    Ok(FIGURES.into_iter().zip([load, sources, bus, duties, lyap]).collect())
}

/// Writes `<name>.svg` for every figure into `dir`.
pub fn write_all(dir: &Path, rows: &[TraceRow], refs: &[ReferenceRow]) -> Result<Vec<PathBuf>, String> {
    let mut written = Vec::new();
    for (name, svg) in render(rows, refs)? {
        let path = dir.join(format!("{name}.svg"));
        std::fs::write(&path, svg).map_err(|e| format!("{}: {e}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}
