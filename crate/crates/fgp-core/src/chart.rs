//! Minimal self-contained SVG line charts: axes, ticks, legend, one
//! polyline per series. No external renderer.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChartError {
    #[error("chart has no drawable series")]
    EmptySeries,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = ["#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#d35400", "#16a085"];

fn nice_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        if s.is_empty() {
            "0".to_string()
        } else {
            s
        }
    } else {
        format!("{v:.3e}")
    }
}

impl LineChart {
    pub fn render_svg(&self, width: u32, height: u32) -> Result<String, ChartError> {
        if self.series.is_empty() || self.series.iter().all(|s| s.points.is_empty()) {
            return Err(ChartError::EmptySeries);
        }
        let (mut xmin, mut xmax) = (f64::MAX, f64::MIN);
        let (mut ymin, mut ymax) = (f64::MAX, f64::MIN);
        for s in &self.series {
            for &(x, y) in &s.points {
                xmin = xmin.min(x);
                xmax = xmax.max(x);
                ymin = ymin.min(y);
                ymax = ymax.max(y);
            }
        }
        if xmax <= xmin {
            xmax = xmin + 1.0;
        }
        if ymax <= ymin {
            ymax = ymin + 1.0;
        }
        let pad_y = 0.05 * (ymax - ymin);
        ymin -= pad_y;
        ymax += pad_y;

        let (w, h) = (width as f64, height as f64);
        let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
        let plot_w = w - ml - mr;
        let plot_h = h - mt - mb;
        let sx = move |x: f64| ml + (x - xmin) / (xmax - xmin) * plot_w;
        let sy = move |y: f64| mt + (ymax - y) / (ymax - ymin) * plot_h;

        let mut out = String::with_capacity(4096);
        out.push_str(&format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
        ));
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        out.push_str(&format!(
            "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
            w / 2.0,
            xml_escape(&self.title)
        ));

        // axes
        out.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            mt + plot_h,
            ml + plot_w,
            mt + plot_h
        ));
        out.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
            mt + plot_h
        ));

        // ticks
        let ticks = 5usize;
        for k in 0..=ticks {
            let fx = xmin + (xmax - xmin) * k as f64 / ticks as f64;
            let px = sx(fx);
            out.push_str(&format!(
                "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>\n",
                mt + plot_h,
                mt + plot_h + 5.0
            ));
            out.push_str(&format!(
                "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                mt + plot_h + 18.0,
                nice_num(fx)
            ));
            let fy = ymin + (ymax - ymin) * k as f64 / ticks as f64;
            let py = sy(fy);
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{py}\" x2=\"{ml}\" y2=\"{py}\" stroke=\"black\"/>\n",
                ml - 5.0
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                ml - 8.0,
                py + 4.0,
                nice_num(fy)
            ));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            ml + plot_w / 2.0,
            h - 10.0,
            xml_escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 {})\">{}</text>\n",
            mt + plot_h / 2.0,
            mt + plot_h / 2.0,
            xml_escape(&self.y_label)
        ));

        // series
        for (k, s) in self.series.iter().enumerate() {
            if s.points.is_empty() {
                continue;
            }
            let color = PALETTE[k % PALETTE.len()];
            let mut path = String::with_capacity(s.points.len() * 14);
            for (idx, &(x, y)) in s.points.iter().enumerate() {
                if idx == 0 {
                    path.push_str(&format!("M{:.2},{:.2}", sx(x), sy(y)));
                } else {
                    path.push_str(&format!("L{:.2},{:.2}", sx(x), sy(y)));
                }
            }
            out.push_str(&format!(
                "<path d=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.4\"/>\n"
            ));
        }

        // legend
        let lx = ml + plot_w - 10.0;
        let mut ly = mt + 12.0;
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                lx - 150.0,
                ly - 4.0,
                lx - 130.0,
                ly - 4.0
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"start\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                lx - 124.0,
                ly,
                xml_escape(&s.name)
            ));
            ly += 16.0;
        }
        out.push_str("</svg>\n");
        Ok(out)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag_balanced(svg: &str) -> bool {
        // cheap well-formedness check: every opened tag closes
        let mut stack: Vec<String> = Vec::new();
        let mut rest = svg;
        while let Some(start) = rest.find('<') {
            rest = &rest[start + 1..];
            let end = match rest.find('>') {
                Some(e) => e,
                None => return false,
            };
            let tag = &rest[..end];
            rest = &rest[end + 1..];
            if tag.starts_with('?') || tag.starts_with('!') || tag.ends_with('/') {
                continue;
            }
            if let Some(name) = tag.strip_prefix('/') {
                match stack.pop() {
                    Some(open) if open == name => {}
                    _ => return false,
                }
            } else {
                let name: String =
                    tag.chars().take_while(|c| !c.is_whitespace()).collect();
                stack.push(name);
            }
        }
        stack.is_empty()
    }

    #[test]
    fn two_point_series_renders_and_parses() {
        let chart = LineChart {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series { name: "s".into(), points: vec![(0.0, 1.0), (1.0, 2.0)] }],
        };
        let svg = chart.render_svg(400, 300).unwrap();
        assert!(svg.contains("<path"));
        assert!(tag_balanced(&svg), "svg not well formed");
    }

    #[test]
    fn three_series_get_three_polylines_and_legend_entries() {
        let pts: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, (k * k) as f64)).collect();
        let chart = LineChart {
            title: "d".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: (0..3)
                .map(|k| Series { name: format!("curve_{k}"), points: pts.clone() })
                .collect(),
        };
        let svg = chart.render_svg(600, 400).unwrap();
        assert_eq!(svg.matches("<path").count(), 3);
        for k in 0..3 {
            assert!(svg.contains(&format!("curve_{k}")));
        }
    }

    #[test]
    fn empty_chart_is_an_error() {
        let chart = LineChart {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![],
        };
        assert!(matches!(chart.render_svg(100, 100), Err(ChartError::EmptySeries)));
    }
}
