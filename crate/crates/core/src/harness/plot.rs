use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::read_column;
use super::HarnessError;

/// One curve: the mean over its files, with a min–max band when it groups
/// more than one file.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub band: Option<(Vec<f64>, Vec<f64>)>,
}

impl Series {
    pub fn from_files(label: &str, files: &[PathBuf], column: &str) -> Result<Self, HarnessError> {
        let cols = files.iter().map(|f| read_column(f, column)).collect::<Result<Vec<_>, _>>()?;
        let Some(first) = cols.first() else {
            return Err(HarnessError::Usage("a series needs at least one file".into()));
        };
        let x: Vec<f64> = first.iter().map(|p| p.0).collect();
        for (c, f) in cols.iter().zip(files) {
            if c.len() != x.len() || c.iter().zip(&x).any(|(p, x)| p.0 != *x) {
                return Err(HarnessError::Usage(format!("{} has different env_step rows than {}", f.display(), files[0].display())));
            }
        }
        let at = |i: usize| cols.iter().map(move |c| c[i].1);
        let mean = (0..x.len()).map(|i| at(i).sum::<f64>() / cols.len() as f64).collect();
        let band = (cols.len() > 1).then(|| {
            (0..x.len())
                .map(|i| (at(i).fold(f64::INFINITY, f64::min), at(i).fold(f64::NEG_INFINITY, f64::max)))
                .unzip()
        });
        Ok(Self { label: label.into(), x, mean, band })
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const W: f64 = 720.0;
const H: f64 = 420.0;
const MARGIN: f64 = 60.0;

/// Renders the series as a standalone SVG line chart. Non-finite points are skipped.
pub fn plot_svg(series: &[Series], metric: &str) -> String {
    let finite = |v: &f64| v.is_finite();
    let xs = series.iter().flat_map(|s| s.x.iter().copied()).filter(finite);
    let ys = series
        .iter()
        .flat_map(|s| {
            let band = s.band.iter().flat_map(|(lo, hi)| lo.iter().chain(hi)).copied();
            s.mean.iter().copied().chain(band)
        })
        .filter(finite);
    let (x0, x1) = bounds(xs);
    let (y0, y1) = bounds(ys);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {t} V{b} H{r}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">env_step</text>"#, W / 2.0, H - 15.0);
    let _ = writeln!(s, r#"<text x="15" y="{}" font-size="13" transform="rotate(-90 15 {})" text-anchor="middle">{}</text>"#, H / 2.0, H / 2.0, escape(metric));
    for (v, x) in [(x0, MARGIN), (x1, W - MARGIN)] {
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle" font-size="11">{}</text>"#, H - MARGIN + 15.0, tick(v));
    }
    for (v, y) in [(y0, H - MARGIN), (y1, MARGIN)] {
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end" font-size="11">{}</text>"#, MARGIN - 5.0, tick(v));
    }
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let Some((lo, hi)) = &ser.band {
            let upper: Vec<(f64, f64)> = ser.x.iter().zip(hi).filter(|p| p.1.is_finite()).map(|(&x, &y)| (px(x), py(y))).collect();
            let lower: Vec<(f64, f64)> = ser.x.iter().zip(lo).filter(|p| p.1.is_finite()).map(|(&x, &y)| (px(x), py(y))).collect();
            if !upper.is_empty() {
                let pts: Vec<String> = upper.iter().chain(lower.iter().rev()).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" "));
            }
        }
        let pts: Vec<String> = ser
            .x
            .iter()
            .zip(&ser.mean)
            .filter(|p| p.1.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" font-size="12" fill="{color}">{}</text>"#, W - MARGIN - 150.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

/// Reads `column` from every group of files and writes the chart to `out`.
pub fn plot(groups: &[(String, Vec<PathBuf>)], column: &str, out: &Path) -> Result<(), HarnessError> {
    let series = groups
        .iter()
        .map(|(label, files)| Series::from_files(label, files, column))
        .collect::<Result<Vec<_>, _>>()?;
    std::fs::write(out, plot_svg(&series, column)).map_err(|e| HarnessError::io(out, e))
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
