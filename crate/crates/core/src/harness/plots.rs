//! Static SVG figures via plotters.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};

/// One plotted line, optionally with a lower/upper band (e.g. ±std).
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub band: Option<Vec<(f64, f64, f64)>>,
}

/// Render a line chart with one series per model; bands are drawn as
/// thin bracketing lines.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<()> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::EmptyInput(format!("line_chart `{title}`")));
    }
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in &s.points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        if let Some(band) = &s.band {
            for &(_, lo, hi) in band {
                y_min = y_min.min(lo);
                y_max = y_max.max(hi);
            }
        }
    }
    if x_min == x_max {
        x_max = x_min + 1.0;
    }
    if y_min == y_max {
        y_max = y_min + 1.0;
    }
    let pad = (y_max - y_min) * 0.05;

    let root = SVGBackend::new(path, (860, 560)).into_drawing_area();
    root.fill(&WHITE)
        .map_err(|e| Error::invalid("plot", e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(44)
        .y_label_area_size(56)
        .build_cartesian_2d(x_min..x_max, (y_min - pad)..(y_max + pad))
        .map_err(|e| Error::invalid("plot", e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(|e| Error::invalid("plot", e.to_string()))?;

    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        if let Some(band) = &s.band {
            let faint = color.mix(0.35);
            chart
                .draw_series(LineSeries::new(band.iter().map(|&(x, lo, _)| (x, lo)), faint))
                .map_err(|e| Error::invalid("plot", e.to_string()))?;
            let faint = color.mix(0.35);
            chart
                .draw_series(LineSeries::new(band.iter().map(|&(x, _, hi)| (x, hi)), faint))
                .map_err(|e| Error::invalid("plot", e.to_string()))?;
        }
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| Error::invalid("plot", e.to_string()))?
            .label(s.name.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
            });
        chart
            .draw_series(
                s.points
                    .iter()
                    .map(|&(x, y)| Circle::new((x, y), 3, color.filled())),
            )
            .map_err(|e| Error::invalid("plot", e.to_string()))?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(|e| Error::invalid("plot", e.to_string()))?;
    root.present()
        .map_err(|e| Error::invalid("plot", e.to_string()))?;
    Ok(())
}
