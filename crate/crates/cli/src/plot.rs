//! Static SVG figures: LR trace, loss trace, sweep heat map.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliError;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;

#[derive(Debug, Clone, PartialEq)]
pub struct StepSeries {
    pub steps: Vec<f64>,
    pub epochs: Vec<usize>,
    pub lr: Vec<f64>,
    pub loss: Vec<f64>,
    pub phase: Vec<String>,
}

impl StepSeries {
    /// First decay step that follows a warmup step.
    pub fn switch_step(&self) -> Option<f64> {
        self.phase
            .windows(2)
            .position(|w| w[0] == "warmup" && w[1] == "decay")
            .map(|i| self.steps[i + 1])
    }

    /// `(mid-epoch step, mean loss)` per epoch.
    pub fn epoch_means(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        let mut i = 0;
        while i < self.epochs.len() {
            let e = self.epochs[i];
            let j = i + self.epochs[i..].iter().take_while(|&&x| x == e).count();
            let losses: Vec<f64> = self.loss[i..j].iter().copied().filter(|v| v.is_finite()).collect();
            if !losses.is_empty() {
                let mid = 0.5 * (self.steps[i] + self.steps[j - 1]);
                out.push((mid, losses.iter().sum::<f64>() / losses.len() as f64));
            }
            i = j;
        }
        out
    }
}

pub fn read_steps(path: &Path) -> Result<StepSeries, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut s = StepSeries {
        steps: vec![],
        epochs: vec![],
        lr: vec![],
        loss: vec![],
        phase: vec![],
    };
    let bad = |what: &str| {
        CliError::io(
            format!("reading {}", path.display()),
            std::io::Error::new(std::io::ErrorKind::InvalidData, what.to_string()),
        )
    };
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec.get(i).and_then(|v| v.parse::<f64>().ok());
        s.steps.push(num(0).ok_or_else(|| bad("bad step"))?);
        s.epochs.push(rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad epoch"))?);
        s.lr.push(num(2).ok_or_else(|| bad("bad lr"))?);
        s.loss.push(num(3).ok_or_else(|| bad("bad loss"))?);
        s.phase.push(rec.get(4).unwrap_or_default().to_string());
    }
    Ok(s)
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    log_y: bool,
}

impl Frame {
    fn new(xs: &[f64], ys: &[f64], log_y: bool) -> Frame {
        let fin = |v: &f64| v.is_finite() && (!log_y || *v > 0.0);
        let ty = |v: f64| if log_y { v.log10() } else { v };
        let (mut x0, mut x1) = min_max(xs.iter().copied().filter(|v| v.is_finite()));
        let (mut y0, mut y1) = min_max(ys.iter().copied().filter(fin).map(ty));
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        if !log_y && y0 >= 0.0 && y0 - pad < 0.0 {
            y0 = 0.0;
        } else {
            y0 -= pad;
        }
        x0 = x0.min(x1);
        Frame {
            x: (x0, x1),
            y: (y0, y1 + pad),
            log_y,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        let y = if self.log_y { y.log10() } else { y };
        HEIGHT - MARGIN_B - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - MARGIN_T - MARGIN_B)
    }

    fn visible(&self, y: f64) -> bool {
        y.is_finite() && (!self.log_y || y > 0.0)
    }

    fn polyline(&self, xs: &[f64], ys: &[f64], style: &str) -> String {
        let mut out = String::new();
        let mut pts = String::new();
        let flush = |pts: &mut String, out: &mut String| {
            if !pts.is_empty() {
                let _ = writeln!(out, "<polyline fill=\"none\" {style} points=\"{}\"/>", pts.trim_end());
                pts.clear();
            }
        };
        for (&x, &y) in xs.iter().zip(ys) {
            if self.visible(y) {
                let _ = write!(pts, "{:.2},{:.2} ", self.px(x), self.py(y));
            } else {
                flush(&mut pts, &mut out);
            }
        }
        flush(&mut pts, &mut out);
        out
    }

    fn axes(&self, title: &str, x_label: &str, y_label: &str) -> String {
        let mut s = String::new();
        let (l, r, t, b) = (MARGIN_L, WIDTH - MARGIN_R, MARGIN_T, HEIGHT - MARGIN_B);
        let _ = writeln!(
            s,
            "<rect x=\"{l}\" y=\"{t}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>",
            r - l,
            b - t
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
            WIDTH / 2.0,
            escape(title)
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
            (l + r) / 2.0,
            HEIGHT - 10.0,
            escape(x_label)
        );
        let _ = writeln!(
            s,
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 {})\">{}</text>",
            (t + b) / 2.0,
            (t + b) / 2.0,
            escape(y_label)
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let px = self.px(xv);
            let _ = writeln!(
                s,
                "<line x1=\"{px:.2}\" y1=\"{b}\" x2=\"{px:.2}\" y2=\"{}\" stroke=\"#333\"/><text x=\"{px:.2}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>",
                b + 4.0,
                b + 16.0,
                tick(xv)
            );
            let yt = self.y.0 + f * (self.y.1 - self.y.0);
            let yv = if self.log_y { 10f64.powf(yt) } else { yt };
            let py = self.py(yv);
            let _ = writeln!(
                s,
                "<line x1=\"{}\" y1=\"{py:.2}\" x2=\"{l}\" y2=\"{py:.2}\" stroke=\"#333\"/><text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\">{}</text>",
                l - 4.0,
                l - 6.0,
                py + 4.0,
                tick(yv)
            );
        }
        s
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn document(body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// LR against step on a log axis, with the warmup→decay switch marked.
pub fn lr_svg(s: &StepSeries) -> String {
    let frame = Frame::new(&s.steps, &s.lr, true);
    let mut body = frame.axes("Learning rate", "step", "lr (log scale)");
    body += &frame.polyline(&s.steps, &s.lr, "stroke=\"#1f5fa8\" stroke-width=\"1.6\"");
    if let Some(sw) = s.switch_step() {
        let x = frame.px(sw);
        let _ = writeln!(
            body,
            "<line class=\"switch\" x1=\"{x:.2}\" y1=\"{MARGIN_T}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"#c0392b\" stroke-dasharray=\"5,4\"/><text x=\"{:.2}\" y=\"{}\" font-size=\"11\" fill=\"#c0392b\">switch @ {sw}</text>",
            HEIGHT - MARGIN_B,
            x + 4.0,
            MARGIN_T + 14.0
        );
    }
    document(&body)
}

/// Per-step training loss with the per-epoch mean overlaid.
pub fn loss_svg(s: &StepSeries) -> String {
    let frame = Frame::new(&s.steps, &s.loss, false);
    let mut body = frame.axes("Training loss", "step", "loss");
    body += &frame.polyline(&s.steps, &s.loss, "stroke=\"#9aa5b1\" stroke-width=\"0.8\"");
    let (xs, ys): (Vec<f64>, Vec<f64>) = s.epoch_means().into_iter().unzip();
    body += &frame.polyline(&xs, &ys, "stroke=\"#d35400\" stroke-width=\"2\"");
    if let Some(sw) = s.switch_step() {
        let x = frame.px(sw);
        let _ = writeln!(
            body,
            "<line class=\"switch\" x1=\"{x:.2}\" y1=\"{MARGIN_T}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"#c0392b\" stroke-dasharray=\"5,4\"/>",
            HEIGHT - MARGIN_B
        );
    }
    document(&body)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    /// `None` for diverged cells.
    pub final_train_loss: Option<f64>,
}

pub fn read_sweep_summary(path: &Path) -> Result<Vec<SweepCell>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(p), Some(w), Some(l)) = (col("peak_lr"), col("warmup_epochs"), col("final_train_loss")) else {
        return Err(CliError::MissingLog(path.to_path_buf()));
    };
    let mut cells = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| rec.get(i).and_then(|v| v.parse::<f64>().ok());
        cells.push(SweepCell {
            peak_lr: parse(p).unwrap_or(f64::NAN),
            warmup_epochs: rec.get(w).and_then(|v| v.parse().ok()).unwrap_or(0),
            final_train_loss: parse(l),
        });
    }
    Ok(cells)
}

fn color(t: f64) -> String {
    // light yellow (low loss) to dark blue (high loss)
    let lerp = |a: f64, b: f64| (a + (b - a) * t.clamp(0.0, 1.0)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 22.0), lerp(237.0, 50.0), lerp(160.0, 110.0))
}

/// Final training loss per (peak LR, warmup epochs) cell.
pub fn heatmap_svg(cells: &[SweepCell]) -> String {
    let mut peaks: Vec<f64> = cells.iter().map(|c| c.peak_lr).collect();
    peaks.sort_by(f64::total_cmp);
    peaks.dedup();
    let mut warmups: Vec<usize> = cells.iter().map(|c| c.warmup_epochs).collect();
    warmups.sort_unstable();
    warmups.dedup();
    let (lo, hi) = min_max(cells.iter().filter_map(|c| c.final_train_loss));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cw = (WIDTH - MARGIN_L - MARGIN_R) / peaks.len().max(1) as f64;
    let ch = (HEIGHT - MARGIN_T - MARGIN_B) / warmups.len().max(1) as f64;
    let mut body = String::new();
    let _ = writeln!(
        body,
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">Final training loss by peak LR and warmup epochs</text>",
        WIDTH / 2.0
    );
    for c in cells {
        let i = peaks.iter().position(|&p| p.total_cmp(&c.peak_lr).is_eq()).unwrap_or(0);
        let j = warmups.iter().position(|&w| w == c.warmup_epochs).unwrap_or(0);
        let x = MARGIN_L + i as f64 * cw;
        let y = MARGIN_T + j as f64 * ch;
        let (fill, label) = match c.final_train_loss {
            Some(v) => (color((v - lo) / span), format!("{v:.3}")),
            None => ("#bbbbbb".to_string(), "diverged".to_string()),
        };
        let _ = writeln!(
            body,
            "<rect class=\"cell\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cw:.2}\" height=\"{ch:.2}\" fill=\"{fill}\" stroke=\"white\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"11\">{label}</text>",
            x + cw / 2.0,
            y + ch / 2.0 + 4.0
        );
    }
    for (i, p) in peaks.iter().enumerate() {
        let _ = writeln!(
            body,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>",
            MARGIN_L + (i as f64 + 0.5) * cw,
            HEIGHT - MARGIN_B + 16.0,
            tick(*p)
        );
    }
    for (j, w) in warmups.iter().enumerate() {
        let _ = writeln!(
            body,
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\">{w}</text>",
            MARGIN_L - 6.0,
            MARGIN_T + (j as f64 + 0.5) * ch + 4.0
        );
    }
    let _ = writeln!(
        body,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">peak LR</text><text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 {})\">warmup epochs</text>",
        WIDTH / 2.0,
        HEIGHT - 10.0,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    document(&body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series() -> StepSeries {
        let n = 40;
        let steps: Vec<f64> = (0..n).map(|i| i as f64).collect();
        StepSeries {
            epochs: (0..n).map(|i| i / 10).collect(),
            lr: (0..n).map(|i| if i < 25 { 1e-5 * 1.5f64.powi(i as i32) } else { 0.01 }).collect(),
            loss: (0..n).map(|i| 2.0 - 0.03 * i as f64).collect(),
            phase: (0..n).map(|i| if i < 25 { "warmup" } else { "decay" }.to_string()).collect(),
            steps,
        }
    }

    #[test]
    fn switch_marker_present() {
        let s = series();
        assert_eq!(s.switch_step(), Some(25.0));
        let svg = lr_svg(&s);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("class=\"switch\""));
        assert!(svg.contains("switch @ 25"));
    }

    #[test]
    fn epoch_means_cover_every_epoch() {
        let m = series().epoch_means();
        assert_eq!(m.len(), 4);
        assert!((m[0].1 - (2.0 - 0.03 * 4.5)).abs() < 1e-12);
        assert!(loss_svg(&series()).contains("#d35400"));
    }

    #[test]
    fn heatmap_has_one_cell_per_entry() {
        let cells: Vec<SweepCell> = (0..6)
            .map(|i| SweepCell {
                peak_lr: [0.01, 0.02, 0.04][i % 3],
                warmup_epochs: [5, 20][i / 3],
                final_train_loss: (i != 4).then_some(0.1 * i as f64),
            })
            .collect();
        let svg = heatmap_svg(&cells);
        assert_eq!(svg.matches("class=\"cell\"").count(), 6);
        assert!(svg.contains("diverged"));
    }
}
