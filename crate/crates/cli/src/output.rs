//! Output files. Every file carries the toolkit version and the SHA-256 of
//! the effective configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use levy_potential::{Error, ExperimentConfig, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of the canonical TOML form of `cfg`.
/// The output directory is left out so reruns elsewhere hash the same.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output.dir = Default::default();
    hex::encode(Sha256::digest(c.to_toml().as_bytes()))
}

/// Writes files into one output directory, stamping each with provenance.
#[derive(Clone, Debug)]
pub struct Sink {
    dir: PathBuf,
    hash: String,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    config_sha256: &'a str,
    data: &'a T,
}

impl Sink {
    pub fn new(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), hash: config_hash(cfg) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    /// CSV with `#` header lines: version, hash, then `meta` as `key=value`.
    pub fn csv(&self, name: &str, meta: &[(&str, String)], body: &str) -> Result<PathBuf> {
        let mut s = format!("# levypot {VERSION}\n# config_sha256={}\n", self.hash);
        for (k, v) in meta {
            let _ = writeln!(s, "# {k}={v}");
        }
        s.push_str(body);
        self.write(name, &s)
    }

    pub fn json<T: Serialize>(&self, name: &str, data: &T) -> Result<PathBuf> {
        let stamped = Stamped { tool: "levypot", version: VERSION, config_sha256: &self.hash, data };
        let mut s = serde_json::to_string_pretty(&stamped).map_err(|e| Error::Config(e.to_string()))?;
        s.push('\n');
        self.write(name, &s)
    }

    pub fn svg(&self, name: &str, svg: &str) -> Result<PathBuf> {
        let head = format!("<!-- levypot {VERSION} config_sha256={} -->\n", self.hash);
        let body = svg.replacen('\n', &format!("\n{head}"), 1);
        self.write(name, &body)
    }

    pub fn text(&self, name: &str, body: &str) -> Result<PathBuf> {
        self.write(name, &format!("levypot {VERSION} config_sha256={}\n{body}", self.hash))
    }
}

const W: f64 = 720.0;
const H: f64 = 480.0;
const MARGIN: f64 = 64.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One curve of a [`line_plot`].
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

fn svg_open(title: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Static line plot; log axes drop non-positive points.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_x: bool, log_y: bool) -> String {
    let tx = |v: f64| if log_x { v.log10() } else { v };
    let ty = |v: f64| if log_y { v.log10() } else { v };
    let keep = |&(x, y): &(f64, f64)| (!log_x || x > 0.0) && (!log_y || y > 0.0) && x.is_finite() && y.is_finite();
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied().filter(keep))
        .map(|(x, y)| (tx(x), ty(y)))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if !(x0 < x1) {
        (x0, x1) = (x0 - 1.0, x0 + 1.0);
    }
    if !(y0 < y1) {
        (y0, y1) = (y0 - 1.0, y0 + 1.0);
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut s = svg_open(title);
    let _ = writeln!(
        s,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let lab = |v: f64, log: bool| if log { format!("1e{v:.1}") } else { format!("{v:.3}") };
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            sx(xv),
            H - MARGIN + 16.0,
            lab(xv, log_x)
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            MARGIN - 4.0,
            sy(yv) + 4.0,
            lab(yv, log_y)
        );
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 16.0, escape(xlabel));
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|p| keep(p))
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(tx(x)), sy(ty(y))))
            .collect();
        let dash = if ser.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>",
            path.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            W - MARGIN - 150.0,
            MARGIN + 16.0 + 16.0 * k as f64,
            escape(ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Heatmap of `values[i][k]` at `(xs[i], ys[k])`, blue below `mid`, red above.
pub fn heatmap(title: &str, xs: &[f64], ys: &[f64], values: &[Vec<f64>], mid: f64) -> String {
    let (lo, hi) = values
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - mid).max(mid - lo).max(1e-300);
    let side = H - 2.0 * MARGIN;
    let (cw, ch) = (side / xs.len().max(1) as f64, side / ys.len().max(1) as f64);
    let mut s = svg_open(title);
    for (i, row) in values.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            let t = if v.is_finite() { ((v - mid) / span).clamp(-1.0, 1.0) } else { 0.0 };
            let fade = |u: f64| (255.0 * (1.0 - u.abs())).round() as u8;
            let (r, g, b) = if t >= 0.0 { (255, fade(t), fade(t)) } else { (fade(t), fade(t), 255) };
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#{r:02x}{g:02x}{b:02x}\"/>",
                MARGIN + i as f64 * cw,
                H - MARGIN - (k + 1) as f64 * ch,
                cw + 0.05,
                ch + 0.05
            );
        }
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\">x from {:.3} to {:.3}; y from {:.3} to {:.3}</text>",
        MARGIN,
        H - MARGIN + 20.0,
        xs.first().unwrap_or(&0.0),
        xs.last().unwrap_or(&0.0),
        ys.first().unwrap_or(&0.0),
        ys.last().unwrap_or(&0.0)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\">min {lo:.4}</text>\n<text x=\"{}\" y=\"{}\">max {hi:.4}</text>",
        MARGIN + side + 16.0,
        MARGIN + 16.0,
        MARGIN + side + 16.0,
        MARGIN + 36.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_are_wellformed() {
        let s = line_plot(
            "t",
            "x",
            "y",
            &[Series { name: "a<b", points: vec![(1.0, 1.0), (10.0, 100.0), (0.0, 5.0)], dashed: false }],
            true,
            true,
        );
        assert!(s.starts_with("<?xml") && s.ends_with("</svg>\n"));
        assert!(s.contains("a&lt;b") && !s.contains("NaN"));
        let h = heatmap("r", &[0.0, 1.0], &[0.0, 1.0], &[vec![1.0, 2.0], vec![0.5, 1.0]], 1.0);
        assert_eq!(h.matches("<rect").count(), 5);
        assert!(h.contains("#ffffff") && h.contains("#ff0000") && h.contains("#8080ff"));
    }
}
