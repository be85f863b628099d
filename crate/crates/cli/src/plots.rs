//! Static SVG plots, rendered from the emitted artifacts (run logs, sweep
//! CSV) rather than from live state, so a plot can always be regenerated
//! from a results directory. Output is deterministic: fixed precision,
//! no timestamps.

use std::fmt::Write as _;

use rctrack_core::logio::RunLog;
use rctrack_core::tracking::SweepResult;

use crate::CliError;

/// One panel's mapping from data coordinates to pixel coordinates.
struct Frame {
    px: f64,
    py: f64,
    pw: f64,
    ph: f64,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

fn pad_range(lo: f64, hi: f64) -> (f64, f64) {
    let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let span = hi - lo;
    if !span.is_finite() {
        return (-1.0, 1.0);
    }
    if span == 0.0 {
        let w = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - w, hi + w);
    }
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn fin_min_max<'a>(vals: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in vals {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo > hi {
        (-1.0, 1.0)
    } else {
        (lo, hi)
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    let s = if a >= 1000.0 || a < 0.01 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    };
    if s.contains('.') && !s.contains('e') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

impl Frame {
    fn new(px: f64, py: f64, pw: f64, ph: f64, xr: (f64, f64), yr: (f64, f64)) -> Self {
        let (x0, x1) = pad_range(xr.0, xr.1);
        let (y0, y1) = pad_range(yr.0, yr.1);
        Self { px, py, pw, ph, x0, x1, y0, y1 }
    }

    fn sx(&self, x: f64) -> f64 {
        self.px + (x - self.x0) / (self.x1 - self.x0) * self.pw
    }

    fn sy(&self, y: f64) -> f64 {
        self.py + self.ph - (y - self.y0) / (self.y1 - self.y0) * self.ph
    }

    /// Polyline through `(xs, ys)`, split at non-finite points.
    fn polyline(&self, xs: &[f64], ys: &[f64], style: &str, out: &mut String) {
        let mut seg = String::new();
        let mut n_in_seg = 0usize;
        let flush = |seg: &mut String, n: &mut usize, out: &mut String| {
            if *n >= 2 {
                let _ = write!(out, "<polyline fill=\"none\" {style} points=\"{seg}\"/>\n");
            }
            seg.clear();
            *n = 0;
        };
        for (&x, &y) in xs.iter().zip(ys) {
            if x.is_finite() && y.is_finite() {
                let _ = write!(seg, "{:.2},{:.2} ", self.sx(x), self.sy(y));
                n_in_seg += 1;
            } else {
                flush(&mut seg, &mut n_in_seg, out);
            }
        }
        flush(&mut seg, &mut n_in_seg, out);
    }

    /// Border, four ticks per axis, optional axis titles.
    fn decor(&self, title: &str, out: &mut String) {
        let _ = write!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n",
            self.px, self.py, self.pw, self.ph
        );
        if !title.is_empty() {
            let _ = write!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"#222\">{}</text>\n",
                self.px + 4.0,
                self.py - 5.0,
                title
            );
        }
        for k in 0..4 {
            let f = k as f64 / 3.0;
            let xv = self.x0 + f * (self.x1 - self.x0);
            let yv = self.y0 + f * (self.y1 - self.y0);
            let xs = self.sx(xv);
            let ys = self.sy(yv);
            let _ = write!(
                out,
                "<line x1=\"{xs:.2}\" y1=\"{:.2}\" x2=\"{xs:.2}\" y2=\"{:.2}\" stroke=\"#444\"/>\n",
                self.py + self.ph,
                self.py + self.ph + 4.0
            );
            let _ = write!(
                out,
                "<text x=\"{xs:.2}\" y=\"{:.2}\" font-size=\"10\" fill=\"#333\" text-anchor=\"middle\">{}</text>\n",
                self.py + self.ph + 15.0,
                tick_label(xv)
            );
            let _ = write!(
                out,
                "<line x1=\"{:.2}\" y1=\"{ys:.2}\" x2=\"{:.2}\" y2=\"{ys:.2}\" stroke=\"#444\"/>\n",
                self.px - 4.0,
                self.px
            );
            let _ = write!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" fill=\"#333\" text-anchor=\"end\">{}</text>\n",
                self.px - 6.0,
                ys + 3.0,
                tick_label(yv)
            );
        }
    }
}

const ACTUAL_STYLE: &str = "stroke=\"#1f77b4\" stroke-width=\"1.3\"";
const DESIRED_STYLE: &str = "stroke=\"#777777\" stroke-width=\"1.1\" stroke-dasharray=\"6 4\"";
const BRIDGE_STYLE: &str = "stroke=\"#9ecae1\" stroke-width=\"1.0\"";

/// Overlay of reference and tracked end-effector paths, plus time panels
/// for positions, angles, velocities, accelerations, and torques.
pub fn track_plot(log: &RunLog) -> Result<String, CliError> {
    let need = |name: &str| {
        log.channel(name).ok_or_else(|| {
            CliError::Runtime(format!("run log has no {name:?} channel"))
        })
    };
    let desired = &need("desired")?.data;
    let actual = &need("actual")?.data;
    let states = &need("states")?.data;
    let torques = &need("torques")?.data;
    let n = actual.ncols();
    if desired.ncols() != n || states.ncols() != n || torques.ncols() != n {
        return Err(CliError::Runtime("run log channels disagree on length".into()));
    }
    if n < 2 {
        return Err(CliError::Runtime("run log is too short to plot".into()));
    }
    let bridge: usize = log
        .extra
        .get("bridge_len")
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
        .min(n - 1);
    let time: Vec<f64> = (0..n).map(|t| t as f64 * log.dt).collect();
    let row = |m: &nalgebra::DMatrix<f64>, r: usize| -> Vec<f64> {
        m.row(r).iter().copied().collect()
    };

    let width = 880.0;
    let mut svg = String::with_capacity(1 << 20);
    let mut y_cursor = 40.0;

    // Overlay panel, equal scale on both axes.
    let dx = row(desired, 0);
    let dy = row(desired, 1);
    let ax = row(actual, 0);
    let ay = row(actual, 1);
    let (xl, xh) = fin_min_max(dx.iter().chain(&ax));
    let (yl, yh) = fin_min_max(dy.iter().chain(&ay));
    let span = (xh - xl).max(yh - yl).max(1e-9);
    let cxm = 0.5 * (xl + xh);
    let cym = 0.5 * (yl + yh);
    let overlay = Frame::new(
        70.0,
        y_cursor,
        460.0,
        460.0,
        (cxm - span / 2.0, cxm + span / 2.0),
        (cym - span / 2.0, cym + span / 2.0),
    );
    let title = match (log.extra.get("trajectory"), log.extra.get("rmse_position")) {
        (Some(t), Some(r)) => format!("end effector, {t}: rmse {r}"),
        (Some(t), None) => format!("end effector, {t}"),
        _ => "end effector".into(),
    };
    overlay.decor(&title, &mut svg);
    overlay.polyline(&dx[bridge..], &dy[bridge..], DESIRED_STYLE, &mut svg);
    if bridge > 0 {
        overlay.polyline(&ax[..=bridge], &ay[..=bridge], BRIDGE_STYLE, &mut svg);
    }
    overlay.polyline(&ax[bridge..], &ay[bridge..], ACTUAL_STYLE, &mut svg);
    let _ = write!(
        svg,
        "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#d62728\"/>\n",
        overlay.sx(ax[0]),
        overlay.sy(ay[0])
    );
    // Legend.
    let lx = 580.0;
    for (dy_leg, style, label) in [
        (0.0, DESIRED_STYLE, "reference"),
        (18.0, ACTUAL_STYLE, "tracked"),
        (36.0, BRIDGE_STYLE, "bridge"),
    ] {
        let y = y_cursor + 10.0 + dy_leg;
        let _ = write!(
            svg,
            "<line x1=\"{lx}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" {style}/>\n",
            lx + 30.0
        );
        let _ = write!(
            svg,
            "<text x=\"{:.2}\" y=\"{y:.2}\" font-size=\"11\" fill=\"#222\" dy=\"4\">{label}</text>\n",
            lx + 36.0
        );
    }
    y_cursor += 460.0 + 45.0;

    // Time panels: (title, actual series, optional reference series).
    let panels: Vec<(String, Vec<f64>, Option<Vec<f64>>)> = vec![
        ("x [m]".into(), ax, Some(dx)),
        ("y [m]".into(), ay, Some(dy)),
        ("q1 [rad]".into(), row(states, 2), None),
        ("q2 [rad]".into(), row(states, 3), None),
        ("q1' [rad/s]".into(), row(states, 4), Some(row(desired, 2))),
        ("q2' [rad/s]".into(), row(states, 5), Some(row(desired, 3))),
        ("q1'' [rad/s2]".into(), row(states, 6), None),
        ("q2'' [rad/s2]".into(), row(states, 7), None),
        ("tau1 [N m]".into(), row(torques, 0), None),
        ("tau2 [N m]".into(), row(torques, 1), None),
    ];
    let (pw, ph, gap_x, gap_y) = (345.0, 110.0, 80.0, 45.0);
    for (k, (title, series, reference)) in panels.iter().enumerate() {
        let col = k % 2;
        let x = 70.0 + col as f64 * (pw + gap_x);
        let y = y_cursor + (k / 2) as f64 * (ph + gap_y);
        let mut lo_hi = fin_min_max(series.iter());
        if let Some(r) = reference {
            let rr = fin_min_max(r.iter());
            lo_hi = (lo_hi.0.min(rr.0), lo_hi.1.max(rr.1));
        }
        let f = Frame::new(x, y, pw, ph, (time[0], time[n - 1]), lo_hi);
        f.decor(title, &mut svg);
        if let Some(r) = reference {
            f.polyline(&time, r, DESIRED_STYLE, &mut svg);
        }
        f.polyline(&time, series, ACTUAL_STYLE, &mut svg);
    }
    let height = y_cursor + (panels.len() as f64 / 2.0).ceil() * (ph + gap_y) + 20.0;

    Ok(format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width} {height:.0}\" font-family=\"sans-serif\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{svg}</svg>\n"
    ))
}

fn viridis(t: f64) -> String {
    const STOPS: [(f64, f64, f64); 6] = [
        (0.267, 0.005, 0.329),
        (0.254, 0.265, 0.530),
        (0.164, 0.471, 0.558),
        (0.135, 0.659, 0.518),
        (0.478, 0.821, 0.318),
        (0.993, 0.906, 0.144),
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let ch = |a: f64, b: f64| ((a + f * (b - a)) * 255.0).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        ch(STOPS[i].0, STOPS[i + 1].0),
        ch(STOPS[i].1, STOPS[i + 1].1),
        ch(STOPS[i].2, STOPS[i + 1].2)
    )
}

/// Color-coded mean RMSE over the sweep grid. Cells are positioned by grid
/// index (the grids may be log-spaced or include zero), labeled with their
/// axis values; diverged-everywhere cells are marked, infeasible cells
/// outlined.
pub fn heatmap_plot(sweep: &SweepResult) -> Result<String, CliError> {
    let mut xs: Vec<f64> = Vec::new();
    for c in &sweep.cells {
        if xs.last() != Some(&c.x) && !xs.contains(&c.x) {
            xs.push(c.x);
        }
    }
    let nx = xs.len().max(1);
    let ny = sweep.cells.len() / nx;
    if nx * ny != sweep.cells.len() || ny == 0 {
        return Err(CliError::Runtime("sweep grid is not rectangular".into()));
    }
    let ys: Vec<f64> = sweep.cells[..ny].iter().map(|c| c.y).collect();

    let finite: Vec<f64> = sweep
        .cells
        .iter()
        .map(|c| c.mean_rmse)
        .filter(|v| v.is_finite())
        .collect();
    let (vlo, vhi) = fin_min_max(finite.iter());
    // Log scaling when the spread warrants it; zero-protected.
    let log_scale = vlo > 0.0 && vhi / vlo > 50.0;
    let norm = |v: f64| -> f64 {
        if vhi == vlo {
            return 0.5;
        }
        if log_scale {
            (v.ln() - vlo.ln()) / (vhi.ln() - vlo.ln())
        } else {
            (v - vlo) / (vhi - vlo)
        }
    };

    let cell = 78.0;
    let (ox, oy) = (110.0, 60.0);
    let gw = cell * nx as f64;
    let gh = cell * ny as f64;
    let width = ox + gw + 130.0;
    let height = oy + gh + 80.0;
    let mut svg = String::with_capacity(1 << 16);
    let _ = write!(
        svg,
        "<text x=\"{ox}\" y=\"30\" font-size=\"14\" fill=\"#111\">{} x {} sweep, mean position rmse over {} runs/cell</text>\n",
        sweep.x_name, sweep.y_name, sweep.realizations
    );

    for (k, c) in sweep.cells.iter().enumerate() {
        let i = k / ny;
        let j = k % ny;
        // Row 0 at the bottom.
        let x = ox + i as f64 * cell;
        let y = oy + (ny - 1 - j) as f64 * cell;
        let (fill, label, text_fill) = if c.mean_rmse.is_finite() {
            let t = norm(c.mean_rmse);
            (
                viridis(t),
                tick_label(c.mean_rmse),
                if t > 0.6 { "#111" } else { "#eee" },
            )
        } else {
            ("#555555".into(), "div".into(), "#eee")
        };
        let _ = write!(
            svg,
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\" stroke=\"#222\" stroke-width=\"0.5\"/>\n"
        );
        if c.infeasible {
            let _ = write!(
                svg,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>\n",
                x + 2.0,
                y + 2.0,
                cell - 4.0,
                cell - 4.0
            );
        }
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"{text_fill}\" text-anchor=\"middle\">{label}</text>\n",
            x + cell / 2.0,
            y + cell / 2.0 + 4.0
        );
        if c.n_failed > 0 && c.mean_rmse.is_finite() {
            let _ = write!(
                svg,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"9\" fill=\"{text_fill}\" text-anchor=\"middle\">{} ok / {} div</text>\n",
                x + cell / 2.0,
                y + cell / 2.0 + 18.0,
                c.n_ok,
                c.n_failed
            );
        }
    }

    for (i, xv) in xs.iter().enumerate() {
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"#333\" text-anchor=\"middle\">{}</text>\n",
            ox + (i as f64 + 0.5) * cell,
            oy + gh + 18.0,
            tick_label(*xv)
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" fill=\"#111\" text-anchor=\"middle\">{}</text>\n",
        ox + gw / 2.0,
        oy + gh + 42.0,
        sweep.x_name
    );
    for (j, yv) in ys.iter().enumerate() {
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"#333\" text-anchor=\"end\">{}</text>\n",
            ox - 10.0,
            oy + (ny - 1 - j) as f64 * cell + cell / 2.0 + 4.0,
            tick_label(*yv)
        );
    }
    let _ = write!(
        svg,
        "<text x=\"24\" y=\"{:.1}\" font-size=\"12\" fill=\"#111\" transform=\"rotate(-90 24 {:.1})\" text-anchor=\"middle\">{}</text>\n",
        oy + gh / 2.0,
        oy + gh / 2.0,
        sweep.y_name
    );

    // Colorbar.
    let bx = ox + gw + 30.0;
    let steps = 24;
    for s in 0..steps {
        let t = 1.0 - s as f64 / (steps - 1) as f64;
        let _ = write!(
            svg,
            "<rect x=\"{bx:.1}\" y=\"{:.1}\" width=\"18\" height=\"{:.2}\" fill=\"{}\"/>\n",
            oy + s as f64 * gh / steps as f64,
            gh / steps as f64 + 0.5,
            viridis(t)
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" fill=\"#333\">{}</text>\n",
        bx + 24.0,
        oy + 8.0,
        tick_label(vhi)
    );
    let _ = write!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" fill=\"#333\">{}</text>\n",
        bx + 24.0,
        oy + gh,
        tick_label(vlo)
    );
    if log_scale {
        let _ = write!(
            svg,
            "<text x=\"{bx:.1}\" y=\"{:.1}\" font-size=\"10\" fill=\"#333\">log scale</text>\n",
            oy + gh + 18.0
        );
    }

    Ok(format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{svg}</svg>\n"
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rctrack_core::logio::Channel;
    use rctrack_core::tracking::SweepCell;

    fn fake_log(n: usize) -> RunLog {
        let mut log = RunLog {
            dt: 0.01,
            seed: 0,
            ..RunLog::default()
        };
        let wave = |r: usize, c: usize| ((c as f64) * 0.05 + r as f64).sin();
        log.channels = vec![
            Channel::new("desired", DMatrix::from_fn(4, n, wave)),
            Channel::new("actual", DMatrix::from_fn(4, n, |r, c| wave(r, c) + 0.01)),
            Channel::new("states", DMatrix::from_fn(8, n, wave)),
            Channel::new("torques", DMatrix::from_fn(2, n, wave)),
        ];
        log.extra.insert("bridge_len".into(), "10".into());
        log.extra.insert("trajectory".into(), "circle".into());
        log
    }

    #[test]
    fn track_plot_is_deterministic_svg() {
        let log = fake_log(200);
        let a = track_plot(&log).unwrap();
        let b = track_plot(&log).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg "));
        assert!(a.trim_end().ends_with("</svg>"));
        assert!(a.contains("reference"));
        assert!(a.contains("tau1"));
    }

    #[test]
    fn track_plot_requires_all_channels() {
        let mut log = fake_log(50);
        log.channels.remove(3);
        let err = track_plot(&log).unwrap_err();
        assert!(err.to_string().contains("torques"), "{err}");
    }

    #[test]
    fn nan_tails_break_the_polyline_instead_of_corrupting_it() {
        let mut log = fake_log(50);
        log.channels[1].data[(0, 30)] = f64::NAN;
        let svg = track_plot(&log).unwrap();
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn heatmap_handles_divergent_and_infeasible_cells() {
        let cells = vec![
            SweepCell { x: 0.0, y: 0.0, mean_rmse: 0.01, std_rmse: 0.0, n_ok: 3, n_failed: 0, infeasible: false },
            SweepCell { x: 0.0, y: 1.0, mean_rmse: f64::NAN, std_rmse: f64::NAN, n_ok: 0, n_failed: 3, infeasible: false },
            SweepCell { x: 2.0, y: 0.0, mean_rmse: 0.9, std_rmse: 0.1, n_ok: 2, n_failed: 1, infeasible: true },
            SweepCell { x: 2.0, y: 1.0, mean_rmse: 0.5, std_rmse: 0.2, n_ok: 3, n_failed: 0, infeasible: false },
        ];
        let sweep = SweepResult {
            x_name: "sigma_d".into(),
            y_name: "sigma_m".into(),
            cells,
            realizations: 3,
        };
        let svg = heatmap_plot(&sweep).unwrap();
        assert!(svg.contains("div"));
        assert!(svg.contains("sigma_d"));
        assert!(svg.contains("#d62728"), "infeasible outline missing");
        assert_eq!(svg, heatmap_plot(&sweep).unwrap());
    }

    #[test]
    fn ragged_sweep_is_rejected() {
        let cells = vec![
            SweepCell { x: 0.0, y: 0.0, mean_rmse: 0.1, std_rmse: 0.0, n_ok: 1, n_failed: 0, infeasible: false },
            SweepCell { x: 1.0, y: 0.0, mean_rmse: 0.1, std_rmse: 0.0, n_ok: 1, n_failed: 0, infeasible: false },
            SweepCell { x: 1.0, y: 1.0, mean_rmse: 0.1, std_rmse: 0.0, n_ok: 1, n_failed: 0, infeasible: false },
        ];
        let sweep = SweepResult {
            x_name: "l1".into(),
            y_name: "l2".into(),
            cells,
            realizations: 1,
        };
        assert!(heatmap_plot(&sweep).is_err());
    }

    #[test]
    fn colormap_endpoints() {
        // Exact endpoint values from the stop table, clamped outside [0, 1].
        assert_eq!(viridis(0.0), "#440154");
        assert_eq!(viridis(1.0), "#fde725");
        assert_eq!(viridis(-3.0), viridis(0.0));
        assert_eq!(viridis(7.0), viridis(1.0));
    }
}
