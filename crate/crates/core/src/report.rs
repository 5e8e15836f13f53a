//! SVG figures from metric CSVs, and the plan-versus-simulator summary.
//!
//! Rendering is a pure function of the CSV text: fixed canvas, fixed
//! palette, fixed number formatting.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::str::FromStr;

use crate::scalar::{ratio, Scalar};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChartKind {
    /// One bar per row and value column.
    Bar,
    /// One bar per `x` value, stacked by the `stack_by` column.
    StackedBar,
    Line,
    Scatter,
    /// Step line over time buckets.
    Timeline,
}

impl FromStr for ChartKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "bar" => ChartKind::Bar,
            "stacked_bar" | "stacked-bar" => ChartKind::StackedBar,
            "line" => ChartKind::Line,
            "scatter" => ChartKind::Scatter,
            "timeline" => ChartKind::Timeline,
            other => return Err(format!("unknown chart kind {other:?}")),
        })
    }
}

/// What to draw from which columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub kind: ChartKind,
    pub title: String,
    /// Category or x columns. Several columns are joined with `/` as a label.
    pub x: Vec<String>,
    /// Value columns; one series each.
    pub ys: Vec<String>,
    pub stack_by: Option<String>,
    /// Keep only rows whose label is listed.
    pub rows: Option<Vec<String>>,
}

impl Chart {
    pub fn new(kind: ChartKind, title: &str, x: &[&str], ys: &[&str]) -> Chart {
        Chart {
            kind,
            title: title.to_owned(),
            x: x.iter().map(|s| s.to_string()).collect(),
            ys: ys.iter().map(|s| s.to_string()).collect(),
            stack_by: None,
            rows: None,
        }
    }

    pub fn stacked_by(mut self, col: &str) -> Chart {
        self.stack_by = Some(col.to_owned());
        self
    }

    pub fn only_rows(mut self, rows: &[&str]) -> Chart {
        self.rows = Some(rows.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn required_columns(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.x.iter().map(String::as_str).collect();
        v.extend(self.ys.iter().map(String::as_str));
        v.extend(self.stack_by.as_deref());
        v
    }
}

/// A parsed CSV document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn parse(text: &str) -> Result<CsvTable> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(false)
            .from_reader(text.as_bytes());
        let mut out = CsvTable::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row: Vec<String> = rec.iter().map(str::to_owned).collect();
            if i == 0 {
                out.header = row;
            } else {
                out.rows.push(row);
            }
        }
        Ok(out)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// `Error::Schema` listing every absent column.
    pub fn require(&self, cols: &[&str]) -> Result<Vec<usize>> {
        let missing: Vec<String> = cols
            .iter()
            .filter(|c| self.column(c).is_none())
            .map(|c| c.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Schema { missing });
        }
        Ok(cols.iter().map(|c| self.column(c).unwrap()).collect())
    }

    /// Value of a `metric,value` style row.
    pub fn lookup(&self, key_col: &str, key: &str, value_col: &str) -> Option<&str> {
        let k = self.column(key_col)?;
        let v = self.column(value_col)?;
        self.rows
            .iter()
            .find(|r| r[k] == key)
            .map(|r| r[v].as_str())
    }
}

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 70.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Short, locale-free tick label.
fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".to_owned()
    } else if !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_owned()
    }
}

fn value(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 {
            self.x1 - self.x0
        } else {
            1.0
        };
        LEFT + (x - self.x0) / span * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 {
            self.y1 - self.y0
        } else {
            1.0
        };
        H - BOTTOM - (y - self.y0) / span * (H - TOP - BOTTOM)
    }
}

fn open(svg: &mut String, title: &str) {
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        W / 2.0,
        esc(title)
    );
}

fn no_data(title: &str) -> String {
    let mut svg = String::new();
    open(&mut svg, title);
    let _ = writeln!(
        svg,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>",
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#666\">no data</text>",
        (LEFT + W - RIGHT) / 2.0,
        (TOP + H - BOTTOM) / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}

fn axes(svg: &mut String, f: &Frame, numeric_x: bool, x_label: &str, y_label: &str) {
    let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        svg,
        "<path d=\"M{l} {t}V{b}H{r}\" fill=\"none\" stroke=\"black\"/>"
    );
    for i in 0..=4 {
        let v = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let y = f.py(v);
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{l}\" y2=\"{y:.2}\" stroke=\"black\"/><text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            l - 4.0,
            l - 6.0,
            y + 4.0,
            num(v)
        );
    }
    if numeric_x {
        for i in 0..=4 {
            let v = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
            let x = f.px(v);
            let _ = writeln!(
                svg,
                "<line x1=\"{x:.2}\" y1=\"{b}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/><text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                b + 4.0,
                b + 16.0,
                num(v)
            );
        }
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        (l + r) / 2.0,
        H - 12.0,
        esc(x_label)
    );
    let _ = writeln!(
        svg,
        "<text transform=\"translate(16 {}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        (t + b) / 2.0,
        esc(y_label)
    );
}

fn legend(svg: &mut String, names: &[String]) {
    for (i, n) in names.iter().enumerate() {
        let y = TOP + 8.0 + i as f64 * 16.0;
        let x = W - RIGHT + 12.0;
        let _ = writeln!(
            svg,
            "<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{y}\">{}</text>",
            y - 9.0,
            PALETTE[i % PALETTE.len()],
            x + 14.0,
            esc(n)
        );
    }
}

fn y_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi == lo {
        hi = lo + 1.0;
    }
    (lo, hi)
}

/// Renders `csv_text` as an SVG document. An empty document, or one with a
/// header but no plottable rows, yields a "no data" plot. A header lacking
/// any column the chart needs is a schema error.
pub fn render(csv_text: &str, chart: &Chart) -> Result<String> {
    let table = CsvTable::parse(csv_text)?;
    if table.header.is_empty() {
        return Ok(no_data(&chart.title));
    }
    let xi = table.require(&chart.x.iter().map(String::as_str).collect::<Vec<_>>())?;
    let yi = table.require(&chart.ys.iter().map(String::as_str).collect::<Vec<_>>())?;
    let si = match &chart.stack_by {
        Some(c) => Some(table.require(&[c.as_str()])?[0]),
        None => None,
    };
    let label = |r: &Vec<String>| {
        xi.iter()
            .map(|&i| r[i].as_str())
            .collect::<Vec<_>>()
            .join("/")
    };
    let rows: Vec<&Vec<String>> = table
        .rows
        .iter()
        .filter(|r| {
            chart
                .rows
                .as_ref()
                .is_none_or(|keep| keep.contains(&label(r)))
        })
        .collect();
    let any_value = rows
        .iter()
        .any(|r| yi.iter().any(|&i| value(&r[i]).is_some()));
    if !any_value {
        return Ok(no_data(&chart.title));
    }
    let mut svg = String::new();
    open(&mut svg, &chart.title);
    let y_label = chart.ys.join(", ");
    let x_label = chart.x.join("/");
    match chart.kind {
        ChartKind::Bar => {
            let (lo, hi) = y_range(
                rows.iter()
                    .flat_map(|r| yi.iter().filter_map(|&i| value(&r[i]))),
            );
            let f = Frame {
                x0: 0.0,
                x1: rows.len() as f64,
                y0: lo,
                y1: hi,
            };
            axes(&mut svg, &f, false, &x_label, &y_label);
            let slot = f.px(1.0) - f.px(0.0);
            let bw = slot * 0.8 / yi.len() as f64;
            for (k, r) in rows.iter().enumerate() {
                for (s, &i) in yi.iter().enumerate() {
                    if let Some(v) = value(&r[i]) {
                        let x = f.px(k as f64) + slot * 0.1 + bw * s as f64;
                        let (ya, yb) = (f.py(v.max(0.0)), f.py(v.min(0.0)));
                        let _ = writeln!(
                            svg,
                            "<rect x=\"{x:.2}\" y=\"{ya:.2}\" width=\"{bw:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                            yb - ya,
                            PALETTE[s % PALETTE.len()]
                        );
                    }
                }
                category_label(&mut svg, f.px(k as f64 + 0.5), &label(r));
            }
            legend(&mut svg, &chart.ys);
        }
        ChartKind::StackedBar => {
            let si = si.ok_or_else(|| Error::Schema {
                missing: vec!["stack_by".to_owned()],
            })?;
            let vi = yi[0];
            let mut groups: Vec<String> = Vec::new();
            let mut stacks: Vec<String> = Vec::new();
            for r in &rows {
                let g = label(r);
                if !groups.contains(&g) {
                    groups.push(g);
                }
                if !stacks.contains(&r[si]) {
                    stacks.push(r[si].clone());
                }
            }
            let totals: Vec<f64> = groups
                .iter()
                .map(|g| {
                    rows.iter()
                        .filter(|r| &label(r) == g)
                        .filter_map(|r| value(&r[vi]))
                        .map(|v| v.max(0.0))
                        .sum()
                })
                .collect();
            let (lo, hi) = y_range(totals.iter().copied());
            let f = Frame {
                x0: 0.0,
                x1: groups.len() as f64,
                y0: lo,
                y1: hi,
            };
            axes(&mut svg, &f, false, &x_label, &y_label);
            let slot = f.px(1.0) - f.px(0.0);
            for (k, g) in groups.iter().enumerate() {
                let mut acc = 0.0;
                for (s, st) in stacks.iter().enumerate() {
                    let v: f64 = rows
                        .iter()
                        .filter(|r| &label(r) == g && &r[si] == st)
                        .filter_map(|r| value(&r[vi]))
                        .map(|v| v.max(0.0))
                        .sum();
                    if v > 0.0 {
                        let (ya, yb) = (f.py(acc + v), f.py(acc));
                        let _ = writeln!(
                            svg,
                            "<rect x=\"{:.2}\" y=\"{ya:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                            f.px(k as f64) + slot * 0.15,
                            slot * 0.7,
                            yb - ya,
                            PALETTE[s % PALETTE.len()]
                        );
                    }
                    acc += v;
                }
                category_label(&mut svg, f.px(k as f64 + 0.5), g);
            }
            let names: Vec<String> = stacks
                .iter()
                .map(|s| format!("{}={s}", chart.stack_by.as_deref().unwrap_or("")))
                .collect();
            legend(&mut svg, &names);
        }
        ChartKind::Line | ChartKind::Timeline | ChartKind::Scatter => {
            let xi0 = xi[0];
            let pts: Vec<Vec<(f64, f64)>> = yi
                .iter()
                .map(|&i| {
                    rows.iter()
                        .filter_map(|r| Some((value(&r[xi0])?, value(&r[i])?)))
                        .collect()
                })
                .collect();
            let all = pts.iter().flatten();
            let (x0, x1) = {
                let (mut a, mut b) = (f64::INFINITY, f64::NEG_INFINITY);
                for p in all.clone() {
                    a = a.min(p.0);
                    b = b.max(p.0);
                }
                if !a.is_finite() {
                    return Ok(no_data(&chart.title));
                }
                if b == a {
                    (a, a + 1.0)
                } else {
                    (a, b)
                }
            };
            let (lo, hi) = y_range(all.map(|p| p.1));
            let f = Frame {
                x0,
                x1,
                y0: lo,
                y1: hi,
            };
            axes(&mut svg, &f, true, &x_label, &y_label);
            for (s, series) in pts.iter().enumerate() {
                let color = PALETTE[s % PALETTE.len()];
                if chart.kind == ChartKind::Scatter {
                    for &(x, y) in series {
                        let _ = writeln!(
                            svg,
                            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\" fill-opacity=\"0.7\"/>",
                            f.px(x),
                            f.py(y)
                        );
                    }
                    continue;
                }
                let mut d = String::new();
                for (k, &(x, y)) in series.iter().enumerate() {
                    let (px, py) = (f.px(x), f.py(y));
                    if k == 0 {
                        let _ = write!(d, "M{px:.2} {py:.2}");
                    } else if chart.kind == ChartKind::Timeline {
                        let _ = write!(d, "H{px:.2}V{py:.2}");
                    } else {
                        let _ = write!(d, "L{px:.2} {py:.2}");
                    }
                }
                let _ = writeln!(
                    svg,
                    "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>"
                );
            }
            legend(&mut svg, &chart.ys);
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn category_label(svg: &mut String, x: f64, text: &str) {
    let y = H - BOTTOM + 14.0;
    let _ = writeln!(
        svg,
        "<text transform=\"translate({x:.2} {y}) rotate(30)\" text-anchor=\"start\">{}</text>",
        esc(text)
    );
}

/// A figure the `report` step emits when its input file is present.
#[derive(Clone, Debug)]
pub struct Figure {
    pub output: &'static str,
    pub input: &'static str,
    pub chart: Chart,
}

pub fn figures() -> Vec<Figure> {
    vec![
        Figure {
            output: "fig3_tier_split.svg",
            input: "tier_split.csv",
            chart: Chart::new(
                ChartKind::Bar,
                "External accesses and cost by tier",
                &["metric"],
                &["value"],
            )
            .only_rows(&[
                "dram_share",
                "nvm_share",
                "dram_cost_share",
                "nvm_cost_share",
            ]),
        },
        Figure {
            output: "fig4_touch_histogram.svg",
            input: "touch_histogram.csv",
            chart: Chart::new(
                ChartKind::StackedBar,
                "Page accesses by touch count",
                &["scope"],
                &["access_share"],
            )
            .stacked_by("touches"),
        },
        Figure {
            output: "fig5_reuse_stats.svg",
            input: "reuse_stats.csv",
            chart: Chart::new(
                ChartKind::Bar,
                "Two-touch reuse gap (s)",
                &["scope", "tier", "object_id"],
                &[
                    "p25_nearest_rank_s",
                    "p50_nearest_rank_s",
                    "p75_nearest_rank_s",
                ],
            ),
        },
        Figure {
            output: "fig6_object_samples.svg",
            input: "object_profiles.csv",
            chart: Chart::new(
                ChartKind::Bar,
                "External samples per object",
                &["object_id"],
                &["samples_dram", "samples_nvm"],
            ),
        },
        Figure {
            output: "fig7_timeline.svg",
            input: "timeline.csv",
            chart: Chart::new(
                ChartKind::Timeline,
                "Memory usage over time",
                &["bucket_start_s"],
                &["total_bytes", "dram_bytes", "nvm_bytes"],
            ),
        },
        Figure {
            output: "fig9_promotion_correlation.svg",
            input: "promotion_correlation.csv",
            chart: Chart::new(
                ChartKind::Scatter,
                "DRAM loads versus promoted pages per window",
                &["dram_loads"],
                &["pages_promoted"],
            ),
        },
        Figure {
            output: "fig10_comparison.svg",
            input: "comparison.csv",
            chart: Chart::new(
                ChartKind::Bar,
                "NVM external samples: AutoNUMA versus static plan",
                &["workload"],
                &["baseline_nvm_samples", "plan_nvm_samples"],
            ),
        },
    ]
}

/// Static plan against the simulated AutoNUMA baseline, per workload.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonSummary<F> {
    pub workload: String,
    pub baseline_nvm_samples: u64,
    pub plan_nvm_samples: u64,
    /// `1 - plan / baseline`; `None` when the baseline has no NVM samples.
    pub nvm_reduction: Option<F>,
    pub baseline_cycles: u64,
    pub plan_cycles: u64,
    /// `plan / baseline - 1`; negative is an improvement.
    pub cycle_delta: Option<F>,
}

pub const COMPARISON_HEADER: &str = "workload,baseline_nvm_samples,plan_nvm_samples,nvm_reduction_pct,baseline_cycles,plan_cycles,cycle_delta_pct";

impl<F: Scalar> ComparisonSummary<F> {
    pub fn new(
        workload: &str,
        baseline_nvm_samples: u64,
        plan_nvm_samples: u64,
        baseline_cycles: u64,
        plan_cycles: u64,
    ) -> Self {
        ComparisonSummary {
            workload: workload.to_owned(),
            baseline_nvm_samples,
            plan_nvm_samples,
            nvm_reduction: ratio::<F>(plan_nvm_samples, baseline_nvm_samples).map(|r| F::one() - r),
            baseline_cycles,
            plan_cycles,
            cycle_delta: ratio::<F>(plan_cycles, baseline_cycles).map(|r| r - F::one()),
        }
    }

    /// Joins a `sim_report.csv` (metric,value) with the named scenario row
    /// of a `plan_eval.csv`.
    pub fn from_csv(
        workload: &str,
        sim_report: &str,
        plan_eval: &str,
        scenario: &str,
    ) -> Result<Self> {
        let sim = CsvTable::parse(sim_report)?;
        sim.require(&["metric", "value"])?;
        let get = |t: &CsvTable, k: &str, kc: &str, vc: &str, src: &str| -> Result<u64> {
            let v = t.lookup(kc, k, vc).ok_or_else(|| Error::Schema {
                missing: vec![format!("{src}: {k}")],
            })?;
            v.parse()
                .map_err(|_| Error::parse(src, 0, format!("{k} is not an integer: {v:?}")))
        };
        let plan = CsvTable::parse(plan_eval)?;
        plan.require(&["scenario", "estimated_cycles", "nvm_samples"])?;
        Ok(Self::new(
            workload,
            get(&sim, "nvm_samples", "metric", "value", "sim_report.csv")?,
            get(&plan, scenario, "scenario", "nvm_samples", "plan_eval.csv")?,
            get(
                &sim,
                "estimated_cycles",
                "metric",
                "value",
                "sim_report.csv",
            )?,
            get(
                &plan,
                scenario,
                "scenario",
                "estimated_cycles",
                "plan_eval.csv",
            )?,
        ))
    }

    pub fn write_row<W: Write>(&self, mut w: W) -> io::Result<()> {
        let pct = |v: Option<F>| match v {
            Some(v) => format!("{:.4}", v.as_f64() * 100.0),
            None => "NA".to_owned(),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            self.workload,
            self.baseline_nvm_samples,
            self.plan_nvm_samples,
            pct(self.nvm_reduction),
            self.baseline_cycles,
            self.plan_cycles,
            pct(self.cycle_delta)
        )
    }

    pub fn write_csv<W: Write>(rows: &[Self], mut w: W) -> io::Result<()> {
        writeln!(w, "{COMPARISON_HEADER}")?;
        for r in rows {
            r.write_row(&mut w)?;
        }
        Ok(())
    }
}
